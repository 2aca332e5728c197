"""Sparse assembly of ``div(M(x) Du)`` and batched finite-difference helpers.

Unknowns are ordered component-major: entry ``alpha * P + p`` holds component
``alpha`` at node ``p`` (row-major node order), which is ``values.T.ravel()``
for a field's ``(..., N)`` array, or simply ``U.ravel()`` for the engine's
``(N, *shape)`` state layout.

Diagonal terms ``d_i(m d_i u)`` use the compact flux form with face averages
of ``m``; mixed terms ``d_i(m d_j u)``, ``i != j``, use central differences on
both sides.  Assembly is linear in ``M``, so shifting ``M`` by ``s I`` adds
exactly ``s`` times the compact Laplacian.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .field import GridSpec

__all__ = ["Assembler", "grad_batch", "div_batch"]


def _shift(s: int, periodic: bool, k: int) -> sp.csr_matrix:
    """``(S u)_p = u_{p+k}`` (zero rows past the end unless periodic)."""
    if periodic:
        idx = (np.arange(s) + k) % s
        return sp.csr_matrix((np.ones(s), (np.arange(s), idx)), shape=(s, s))
    return sp.eye(s, s, k, format="csr")


def _kron_axis(mat1d: sp.spmatrix, k: int, shape, left_shape=None) -> sp.csr_matrix:
    """Embed a 1D operator on axis ``k`` of a row-major grid."""
    out = sp.identity(1, format="csr")
    for j, s in enumerate(shape):
        if j == k:
            out = sp.kron(out, mat1d, format="csr")
        else:
            sj = s if left_shape is None else left_shape[j]
            out = sp.kron(out, sp.identity(sj, format="csr"), format="csr")
    return out


class Assembler:
    """Divergence-form operator builder bound to one grid and component count."""

    def __init__(self, grid: GridSpec, N: int = 1):
        self.grid = grid
        self.N = N
        self.n = grid.n
        self.shape = grid.shape
        self.P = grid.num_nodes

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean node mask (flattened) of equations actually solved."""
        return ~self.grid.boundary_mask().ravel()

    def _face_shape(self, k):
        fs = list(self.shape)
        if not self.grid.periodic:
            fs[k] -= 1
        return tuple(fs)

    @cached_property
    def _flux(self):
        """Per axis: forward difference nodes->faces, backward faces->nodes, face averaging."""
        out = []
        per = self.grid.periodic
        for k, (s, h) in enumerate(zip(self.shape, self.grid.h)):
            if per:
                fwd = (_shift(s, True, 1) - sp.identity(s)) / h
                bwd = (sp.identity(s) - _shift(s, True, -1)) / h
                avg = 0.5 * (_shift(s, True, 1) + sp.identity(s))
            else:
                eye = sp.identity(s, format="csr")
                fwd = ((_shift(s, False, 1) - eye)[:-1]) / h
                # rows 0 and s-1 are boundary rows; they are dropped later
                bwd = sp.lil_matrix((s, s - 1))
                for p in range(1, s - 1):
                    bwd[p, p] = 1.0 / h
                    bwd[p, p - 1] = -1.0 / h
                bwd = bwd.tocsr()
                avg = 0.5 * (_shift(s, False, 1) + eye)[:-1]
            fshape = self._face_shape(k)
            out.append((
                _kron_axis(sp.csr_matrix(fwd), k, fshape, self.shape),
                _kron_axis(sp.csr_matrix(bwd), k, self.shape, fshape),
                _kron_axis(sp.csr_matrix(avg), k, fshape, self.shape),
            ))
        return out

    @cached_property
    def _central(self):
        out = []
        per = self.grid.periodic
        for k, (s, h) in enumerate(zip(self.shape, self.grid.h)):
            if per:
                c = (_shift(s, True, 1) - _shift(s, True, -1)) / (2 * h)
            else:
                c = sp.lil_matrix((s, s))
                for p in range(1, s - 1):
                    c[p, p + 1] = 0.5 / h
                    c[p, p - 1] = -0.5 / h
                # second-order one-sided ends, matching np.gradient(edge_order=2)
                c[0, 0], c[0, 1], c[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
                c[s - 1, s - 1], c[s - 1, s - 2], c[s - 1, s - 3] = 1.5 / h, -2.0 / h, 0.5 / h
            out.append(_kron_axis(sp.csr_matrix(c), k, self.shape))
        return out

    def scalar_block(self, coef: np.ndarray, i: int, j: int) -> sp.csr_matrix:
        """``d_i(c d_j .)`` for a nodal coefficient ``c`` (flattened, length ``P``)."""
        coef = np.asarray(coef, dtype=float).ravel()
        if i == j:
            fwd, bwd, avg = self._flux[i]
            face = avg @ coef
            return (bwd @ sp.diags(face) @ fwd).tocsr()
        ci, cj = self._central[i], self._central[j]
        return (ci @ sp.diags(coef) @ cj).tocsr()

    def assemble(self, mats) -> sp.csr_matrix:
        """Operator of ``u -> div(M Du)`` for ``M`` of shape ``(P, nN, nN)`` or ``(nN, nN)``."""
        n, N, P = self.n, self.N, self.P
        mats = np.asarray(mats, dtype=float)
        const = mats.ndim == 2
        blocks = [[None] * N for _ in range(N)]
        for al in range(N):
            for be in range(N):
                acc = None
                for i in range(n):
                    for j in range(n):
                        if const:
                            c = mats[al * n + i, be * n + j]
                            if c == 0:
                                continue
                            coef = np.full(P, c)
                        else:
                            coef = mats[:, al * n + i, be * n + j]
                            if not np.any(coef):
                                continue
                        blk = self.scalar_block(coef, i, j)
                        acc = blk if acc is None else acc + blk
                blocks[al][be] = acc if acc is not None else sp.csr_matrix((P, P))
        return sp.bmat(blocks, format="csr")

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return self.assemble(np.eye(self.n * self.N))

    @cached_property
    def row_mask(self) -> np.ndarray:
        """Interior mask over all ``N * P`` unknowns."""
        return np.tile(self.interior, self.N)

    def restrict_rows(self, op: sp.csr_matrix) -> sp.csr_matrix:
        """Zero the rows of boundary equations (Dirichlet grids)."""
        if self.grid.periodic:
            return op
        return (sp.diags(self.row_mask.astype(float)) @ op).tocsr()

    def symbol(self, op: sp.csr_matrix) -> np.ndarray:
        """Fourier symbol of a translation-invariant periodic operator, ``(N, N, *shape)``.

        Column ``beta * P`` is the response to an impulse at node 0 of
        component ``beta``; its FFT is the symbol column.
        """
        if not self.grid.periodic:
            raise ValueError("symbols exist only on periodic grids")
        N, P = self.N, self.P
        out = np.empty((N, N) + self.shape, dtype=complex)
        for be in range(N):
            col = op[:, be * P].toarray().ravel().reshape((N,) + self.shape)
            out[:, be] = np.fft.fftn(col, axes=tuple(range(1, self.n + 1)))
        return out


def _partial_batch(U: np.ndarray, grid: GridSpec, k: int) -> np.ndarray:
    """Central derivative along grid axis ``k`` of arrays ``(..., *shape)``."""
    ax = U.ndim - grid.n + k
    h = grid.h[k]
    if grid.periodic:
        return (np.roll(U, -1, axis=ax) - np.roll(U, 1, axis=ax)) / (2 * h)
    return np.gradient(U, h, axis=ax, edge_order=2)


def grad_batch(U: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``(..., N, *shape) -> (..., N, n, *shape)``."""
    return np.stack([_partial_batch(U, grid, k) for k in range(grid.n)], axis=U.ndim - grid.n)


def div_batch(F: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``(..., N, n, *shape) -> (..., N, *shape)``, row-wise divergence."""
    lead = F.ndim - grid.n - 1
    out = None
    for k in range(grid.n):
        part = _partial_batch(np.take(F, k, axis=lead), grid, k)
        out = part if out is None else out + part
    return out
