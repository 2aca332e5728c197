"""Drift and noise coefficient models with sampled structural checks.

Index conventions follow :mod:`pnlab.field`: a gradient ``z`` lives in
``R^{nN}`` with index ``alpha * n + i``.  The drift ``A(x, t, u, z)`` has the
same layout.  The noise ``H(x, t, z)`` is an ``N x n'`` matrix stored with
index ``alpha * n' + j``; the stochastic increment is ``sum_j H^{alpha j} dB^j``.

All evaluators are vectorised over a leading point axis ``P``:
``x`` is ``(P, n)``, ``u`` is ``(P, N)`` and ``z`` is ``(P, nN)``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CoefficientModel",
    "NoiseModel",
    "ModelError",
    "ModelEvaluationError",
    "InvalidEllipticity",
    "ConditionReport",
    "eval_A",
    "eval_H",
    "dz_A",
    "du_A",
    "dx_A",
    "dx_H",
    "kappa_nu_from_lambdas",
    "check_GVA",
    "check_GVH",
    "gallery",
    "noise_gallery",
    "GALLERY",
]

FD_REL_STEP = 1e-6


class ModelError(ValueError):
    pass


class ModelEvaluationError(ModelError):
    pass


class InvalidEllipticity(ModelError):
    pass


def _zero_scalar(x, t):
    return np.zeros(len(x))


def _finite(arr, what):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ModelEvaluationError(f"{what} returned non-finite values")
    return arr


def _central_jacobian(fn: Callable[[np.ndarray], np.ndarray], arg: np.ndarray) -> np.ndarray:
    """Jacobian of a batched map by central differences, shape ``(P, out, in)``."""
    cols = []
    for k in range(arg.shape[1]):
        step = FD_REL_STEP * (1.0 + np.abs(arg[:, k]))
        hi = arg.copy()
        lo = arg.copy()
        hi[:, k] += step
        lo[:, k] -= step
        cols.append((fn(hi) - fn(lo)) / (2 * step)[:, None])
    return np.stack(cols, axis=-1)


def kappa_nu_from_lambdas(lambda0: float, lambda1: float) -> tuple[float, float]:
    """``(kappa, nu) = (1/lambda1, lambda0/lambda1)``."""
    if not (lambda0 > 0 and lambda1 > 0):
        raise InvalidEllipticity(f"need positive lambdas, got ({lambda0}, {lambda1})")
    if lambda0 > lambda1:
        raise InvalidEllipticity(f"lambda0={lambda0} exceeds lambda1={lambda1}")
    return 1.0 / lambda1, lambda0 / lambda1


@dataclass(frozen=True)
class CoefficientModel:
    """Drift vector field ``A(x, t, u, z)``.

    ``kind == "linear"``: ``A = M(x, t) z`` where ``matrix`` is either a constant
    ``(nN, nN)`` array or a callback ``(x (P,n), t) -> (P, nN, nN)``.

    ``kind == "nonlinear"``: ``A`` is the callback ``A_fn(x, t, u, z)``; the
    optional ``dz``, ``du``, ``dx`` callbacks return the Jacobians
    ``(P, nN, nN)``, ``(P, nN, N)``, ``(P, nN, n)``; missing ones are replaced by
    central differences with step ``1e-6 (1 + |arg|)``.

    ``degenerate`` models (e.g. ``A = 0``) skip the ellipticity invariants; they
    exist for unit tests and the pure-noise transport experiments.
    """

    kind: str
    n: int
    N: int = 1
    lambda0: float = 1.0
    lambda1: float = 1.0
    kappa: float | None = None
    nu: float | None = None
    L: float | None = None
    a: float | None = None
    matrix: np.ndarray | Callable | None = None
    A_fn: Callable | None = None
    dz: Callable | None = None
    du: Callable | None = None
    dx: Callable | None = None
    f: Callable = _zero_scalar
    autonomous: bool = True
    degenerate: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.n < 1 or self.N < 1:
            raise ModelError("need n >= 1 and N >= 1")
        m = self.n * self.N
        if self.kind == "linear":
            if self.matrix is None:
                raise ModelError("linear models need a matrix")
            if not callable(self.matrix):
                mat = np.array(self.matrix, dtype=float)
                if mat.shape != (m, m) or not np.all(np.isfinite(mat)):
                    raise ModelError(f"constant matrix must be finite with shape {(m, m)}")
                mat.setflags(write=False)
                object.__setattr__(self, "matrix", mat)
        elif self.A_fn is None:
            raise ModelError("nonlinear models need A_fn")
        if self.a is None:
            object.__setattr__(self, "a", float(2 * (self.n + 2)))
        if not self.degenerate:
            kappa, nu = kappa_nu_from_lambdas(self.lambda0, self.lambda1)
            if self.kappa is None:
                object.__setattr__(self, "kappa", kappa)
            if self.nu is None:
                object.__setattr__(self, "nu", nu)
            if not self.kappa > 0:
                raise ModelError("kappa must be positive")
            if not 0 < self.nu <= 1:
                raise ModelError("nu must lie in (0, 1]")
            if not self.a > self.n + 2:
                raise ModelError(f"integrability exponent a={self.a} must exceed n+2={self.n + 2}")
        if self.L is None:
            object.__setattr__(self, "L", float(max(self.lambda1, 1.0)))

    @property
    def m(self) -> int:
        return self.n * self.N

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    @property
    def constant_matrix(self) -> np.ndarray | None:
        if self.is_linear and not callable(self.matrix):
            return self.matrix
        return None

    def matrix_at(self, x, t) -> np.ndarray:
        """``(P, nN, nN)`` matrix field for linear models."""
        if not self.is_linear:
            raise ModelError("matrix_at is only defined for linear models")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if callable(self.matrix):
            mats = _finite(self.matrix(x, t), "matrix callback")
            if mats.ndim == 2:
                mats = np.broadcast_to(mats, (len(x),) + mats.shape)
            return mats
        return np.broadcast_to(self.matrix, (len(x), self.m, self.m))

    def shifted(self, s: float) -> CoefficientModel:
        """Linear model ``A + s I`` (used by the Stratonovich correction)."""
        if not self.is_linear:
            raise ModelError("only linear models can be shifted")
        eye = np.eye(self.m)
        if callable(self.matrix):
            base = self.matrix

            def mat(x, t):
                return base(x, t) + s * eye
        else:
            mat = self.matrix + s * eye
        lam0 = self.lambda0 + s
        lam1 = self.lambda1 + s
        degenerate = not (lam0 > 0)
        return CoefficientModel(
            "linear", self.n, self.N, lam0 if lam0 > 0 else 1.0, lam1 if lam1 > 0 else 1.0,
            L=(self.L or 0) + abs(s), a=self.a, matrix=mat, f=self.f, autonomous=self.autonomous,
            degenerate=degenerate, name=f"{self.name}+{s:g}I",
        )


def _prep(model, x, u, z):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if u is None:
        u = np.zeros((len(z), model.N))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    for arr, w, nm in ((x, model.n, "x"), (u, model.N, "u"), (z, model.m, "z")):
        if arr.shape[1] != w:
            raise ModelError(f"{nm} has {arr.shape[1]} columns, expected {w}")
        if not np.all(np.isfinite(arr)):
            raise ModelError(f"{nm} must be finite")
    return x, u, z


def eval_A(model: CoefficientModel, x, t, u, z) -> np.ndarray:
    """Drift ``A(x, t, u, z)`` at ``P`` points, shape ``(P, nN)``."""
    x, u, z = _prep(model, x, u, z)
    if model.is_linear:
        return np.einsum("pij,pj->pi", model.matrix_at(x, t), z)
    out = _finite(model.A_fn(x, t, u, z), "A callback")
    return out.reshape(len(z), model.m)


def dz_A(model: CoefficientModel, x, t, u, z) -> np.ndarray:
    x, u, z = _prep(model, x, u, z)
    if model.is_linear:
        return np.array(model.matrix_at(x, t))
    if model.dz is not None:
        return _finite(model.dz(x, t, u, z), "dz callback")
    return _central_jacobian(lambda zz: eval_A(model, x, t, u, zz), z)


def du_A(model: CoefficientModel, x, t, u, z) -> np.ndarray:
    x, u, z = _prep(model, x, u, z)
    if model.is_linear:
        return np.zeros((len(z), model.m, model.N))
    if model.du is not None:
        return _finite(model.du(x, t, u, z), "du callback")
    return _central_jacobian(lambda uu: eval_A(model, x, t, uu, z), u)


def dx_A(model: CoefficientModel, x, t, u, z) -> np.ndarray:
    x, u, z = _prep(model, x, u, z)
    if model.is_linear and not callable(model.matrix):
        return np.zeros((len(z), model.m, model.n))
    if model.dx is not None:
        return _finite(model.dx(x, t, u, z), "dx callback")
    return _central_jacobian(lambda xx: eval_A(model, xx, t, u, z), x)


@dataclass(frozen=True)
class NoiseModel:
    """Noise field ``H(x, t, z)`` with ``n'`` Brownian dimensions.

    kinds: ``"additive"`` (``g(x, t) -> (P, N n')``, ``L_H = 0``),
    ``"gradient"`` (``H = sigma z``, ``n' = n``, ``L_H = sigma``) and
    ``"custom"`` (``H_fn(x, t, z) -> (P, N n')`` with a declared ``L_H``).
    """

    kind: str
    n: int
    N: int = 1
    n_prime: int | None = None
    sigma: float = 0.0
    g: Callable | None = None
    H_fn: Callable | None = None
    L_H: float | None = None
    L: float = 1.0
    a: float | None = None
    f_H: Callable = _zero_scalar
    autonomous: bool = True

    def __post_init__(self):
        if self.kind == "gradient":
            if self.n_prime not in (None, self.n):
                raise ModelError("gradient noise uses n' = n")
            object.__setattr__(self, "n_prime", self.n)
            if self.sigma < 0:
                raise ModelError("sigma must be non-negative")
            if self.L_H not in (None, self.sigma):
                raise ModelError("gradient noise has L_H = sigma")
            object.__setattr__(self, "L_H", float(self.sigma))
            object.__setattr__(self, "L", max(self.L, self.sigma))
        elif self.kind == "additive":
            if self.g is None:
                raise ModelError("additive noise needs g")
            if self.L_H not in (None, 0.0):
                raise ModelError("additive noise has L_H = 0")
            object.__setattr__(self, "L_H", 0.0)
            object.__setattr__(self, "n_prime", self.n_prime or 1)
        elif self.kind == "custom":
            if self.H_fn is None or self.L_H is None or self.n_prime is None:
                raise ModelError("custom noise needs H_fn, L_H and n_prime")
            if self.L_H < 0:
                raise ModelError("L_H must be non-negative")
        else:
            raise ModelError(f"unknown noise kind {self.kind!r}")

    @property
    def m(self) -> int:
        return self.n * self.N

    @property
    def width(self) -> int:
        return self.N * self.n_prime

    @property
    def is_zero(self) -> bool:
        return self.kind == "gradient" and self.sigma == 0.0

    @classmethod
    def none(cls, n: int, N: int = 1) -> NoiseModel:
        return cls("gradient", n, N, sigma=0.0)


def eval_H(noise: NoiseModel, x, t, z) -> np.ndarray:
    """Noise matrix at ``P`` points, shape ``(P, N n')``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != noise.m:
        raise ModelError(f"z has {z.shape[1]} columns, expected {noise.m}")
    if noise.kind == "gradient":
        return noise.sigma * z
    if noise.kind == "additive":
        out = _finite(noise.g(x, t), "g callback")
    else:
        out = _finite(noise.H_fn(x, t, z), "H callback")
    return np.broadcast_to(out.reshape(-1, noise.width), (len(z), noise.width)).copy()


def dx_H(noise: NoiseModel, x, t, z) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if noise.kind == "gradient":
        return np.zeros((len(z), noise.width, noise.n))
    return _central_jacobian(lambda xx: eval_H(noise, xx, t, z), x)


# ----------------------------------------------------------------------------
# sampled structural checks
# ----------------------------------------------------------------------------


@dataclass
class ConditionReport:
    """Per-condition maxima of ``lhs - rhs`` over the samples (``<= tol`` passes)."""

    maxima: dict[str, float]
    samples: int
    seed: int
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.maxima.values())

    def failing(self) -> list[str]:
        return [k for k, v in self.maxima.items() if v > self.tol]

    def as_dict(self) -> dict:
        return {"samples": self.samples, "seed": self.seed, "passed": self.passed, "maxima": dict(self.maxima)}


def _sample_points(rng, P, n, N, m, box):
    lo, hi = box
    x = rng.uniform(lo, hi, size=(P, n))
    t = float(rng.uniform(0.0, 1.0))
    # magnitudes spread over several decades so both growth regimes are probed
    u = rng.standard_normal((P, N)) * 10.0 ** rng.uniform(-2, 2, size=(P, 1))
    z = rng.standard_normal((P, m)) * 10.0 ** rng.uniform(-2, 2, size=(P, 1))
    xi = rng.standard_normal((P, m))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    return x, t, u, z, xi


def _frob(a):
    return np.sqrt(np.sum(a.reshape(len(a), -1) ** 2, axis=1))


def check_GVA(model: CoefficientModel, sample_count: int = 10_000, rng_seed: int = 0,
              box=(0.0, 1.0), chunk: int = 2048) -> ConditionReport:
    """Sample the four growth/ellipticity conditions and the (lambda0, lambda1) form.

    Conditions reported (maximum of lhs - rhs):

    ``growth``        |A| - L (|z| + |u|^{(n+2)/n} + f^{a/2})
    ``contraction``   |xi - kappa D_zA xi|^2 - (1 - nu^2) |xi|^2
    ``du_growth``     |D_uA| - L (|z|^{2/(n+2)} + |u|^{2/n} + f)
    ``dx_growth``     |D_xA| - L (|z| + |u|^{(n+2)/n} + f^2)
    ``lower``         lambda0 |xi|^2 - <D_zA xi, xi>
    ``upper``         |D_zA xi| - lambda1 |xi|

    Samples are drawn with a fixed seed; time is sampled once per chunk.
    """
    if model.degenerate:
        raise ModelError("degenerate models carry no structural constants to check")
    rng = np.random.default_rng(rng_seed)
    n, N, m = model.n, model.N, model.m
    L, a, kappa, nu = model.L, model.a, model.kappa, model.nu
    e = (n + 2) / n
    worst = {k: -np.inf for k in ("growth", "contraction", "du_growth", "dx_growth", "lower", "upper")}
    done = 0
    while done < sample_count:
        P = min(chunk, sample_count - done)
        x, t, u, z, xi = _sample_points(rng, P, n, N, m, box)
        f = np.abs(np.asarray(model.f(x, t), dtype=float)).reshape(P)
        un = np.linalg.norm(u, axis=1)
        zn = np.linalg.norm(z, axis=1)
        A = eval_A(model, x, t, u, z)
        J = dz_A(model, x, t, u, z)
        Ju = du_A(model, x, t, u, z)
        Jx = dx_A(model, x, t, u, z)
        Jxi = np.einsum("pij,pj->pi", J, xi)
        cand = {
            "growth": np.linalg.norm(A, axis=1) - L * (zn + un**e + f ** (a / 2)),
            "contraction": np.sum((xi - kappa * Jxi) ** 2, axis=1) - (1 - nu**2),
            "du_growth": _frob(Ju) - L * (zn ** (2 / (n + 2)) + un ** (2 / n) + f),
            "dx_growth": _frob(Jx) - L * (zn + un**e + f**2),
            "lower": model.lambda0 - np.sum(Jxi * xi, axis=1),
            "upper": np.linalg.norm(Jxi, axis=1) - model.lambda1,
        }
        for k, v in cand.items():
            worst[k] = max(worst[k], float(np.max(v)))
        done += P
    return ConditionReport({k: float(v) for k, v in worst.items()}, sample_count, rng_seed)


def check_GVH(noise: NoiseModel, sample_count: int = 10_000, seed: int = 0,
              box=(0.0, 1.0), chunk: int = 2048) -> ConditionReport:
    """Sample the noise conditions with paired gradients ``(z, z~)``.

    ``lipschitz``  |H(z) - H(z~)| - L_H |z - z~|
    ``growth``     |H| - L (f_H + |z|)
    ``dx_growth``  |D_xH| - L (f_H^{a/(a-2)} + |z|)
    """
    rng = np.random.default_rng(seed)
    n, m = noise.n, noise.m
    a = noise.a if noise.a is not None else 2.0 * (n + 2)
    worst = {k: -np.inf for k in ("lipschitz", "growth", "dx_growth")}
    done = 0
    while done < sample_count:
        P = min(chunk, sample_count - done)
        x, t, _, z, _ = _sample_points(rng, P, n, noise.N, m, box)
        z2 = z + rng.standard_normal((P, m)) * 10.0 ** rng.uniform(-3, 1, size=(P, 1))
        fH = np.abs(np.asarray(noise.f_H(x, t), dtype=float)).reshape(P)
        zn = np.linalg.norm(z, axis=1)
        H1 = eval_H(noise, x, t, z)
        H2 = eval_H(noise, x, t, z2)
        cand = {
            "lipschitz": np.linalg.norm(H1 - H2, axis=1) - noise.L_H * np.linalg.norm(z - z2, axis=1),
            "growth": np.linalg.norm(H1, axis=1) - noise.L * (fH + zn),
            "dx_growth": _frob(dx_H(noise, x, t, z)) - noise.L * (fH ** (a / (a - 2)) + zn),
        }
        for k, v in cand.items():
            worst[k] = max(worst[k], float(np.max(v)))
        done += P
    return ConditionReport({k: float(v) for k, v in worst.items()}, sample_count, seed)


# ----------------------------------------------------------------------------
# gallery
# ----------------------------------------------------------------------------


def _identity(n, N, lambda0=1.0, lambda1=1.0, **kw):
    return CoefficientModel("linear", n, N, 1.0, 1.0, matrix=np.eye(n * N), name="identity", **kw)


def _zero(n, N, **kw):
    return CoefficientModel("linear", n, N, 0.0, 0.0, matrix=np.zeros((n * N, n * N)), degenerate=True, L=0.0,
                            name="zero", **kw)


def _diag_anisotropic(n, N, lambda0=1.0, lambda1=4.0, **kw):
    d = np.full(n * N, float(lambda0))
    d[n - 1::n] = lambda1  # last derivative direction of every component
    return CoefficientModel("linear", n, N, lambda0, lambda1, matrix=np.diag(d), name="diag-anisotropic",
                            params={"lambda0": lambda0, "lambda1": lambda1}, **kw)


def _rotating_coupled(n, N, lambda0=1.0, lambda1=2.0, omega=1.0, **kw):
    """``Q(x) diag(lambda0 .. lambda1) Q(x)^T`` with ``Q`` a rotation by
    ``theta = omega * pi * sin(2 pi x_1)`` in the plane of the first and last
    gradient index (which couples components when ``N > 1``)."""
    m = n * N
    if m < 2:
        raise ModelError("rotating-coupled needs n * N >= 2")
    eig = np.linspace(lambda0, lambda1, m)
    i0, i1 = 0, m - 1

    def mat(x, t):
        th = omega * np.pi * np.sin(2 * np.pi * x[:, 0])
        c, s = np.cos(th), np.sin(th)
        Q = np.broadcast_to(np.eye(m), (len(x), m, m)).copy()
        Q[:, i0, i0] = c
        Q[:, i0, i1] = -s
        Q[:, i1, i0] = s
        Q[:, i1, i1] = c
        return np.einsum("pij,j,pkj->pik", Q, eig, Q)

    # |d theta/dx_1| <= 2 pi^2 omega; |d(Q L Q^T)| <= 2 |theta'| (lambda1 - lambda0)
    dxbound = 4 * np.pi**2 * abs(omega) * (lambda1 - lambda0)
    L = kw.pop("L", float(max(lambda1, dxbound, 1.0)))
    return CoefficientModel("linear", n, N, lambda0, lambda1, L=L, matrix=mat, name="rotating-coupled",
                            params={"lambda0": lambda0, "lambda1": lambda1, "omega": omega}, **kw)


def _singular_candidate(n, N, lambda0=1.0, lambda1=1.0, A_fn=None, matrix=None, **kw):
    """Slot for user-supplied coefficients in counterexample studies."""
    if A_fn is None and matrix is None:
        raise ModelError("singular-candidate needs a user A_fn or matrix")
    if matrix is not None:
        return CoefficientModel("linear", n, N, lambda0, lambda1, matrix=matrix, name="singular-candidate", **kw)
    return CoefficientModel("nonlinear", n, N, lambda0, lambda1, A_fn=A_fn, name="singular-candidate", **kw)


GALLERY = {
    "identity": _identity,
    "zero": _zero,
    "diag-anisotropic": _diag_anisotropic,
    "rotating-coupled": _rotating_coupled,
    "singular-candidate": _singular_candidate,
}


def gallery(name: str, n: int, N: int = 1, **params) -> CoefficientModel:
    """Look up a shipped drift model by its config identifier."""
    try:
        build = GALLERY[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; known: {sorted(GALLERY)}") from None
    return build(n, N, **params)


def noise_gallery(name: str, n: int, N: int = 1, sigma: float = 0.0, **params) -> NoiseModel:
    if name in ("none", "zero"):
        return NoiseModel.none(n, N)
    if name in ("gradient", "linear-gradient"):
        return NoiseModel("gradient", n, N, sigma=sigma, **params)
    if name == "additive":
        amp = float(params.pop("amplitude", sigma))

        def g(x, t):
            return np.full((len(x), N), amp)

        def f_H(x, t):
            return np.full(len(x), abs(amp))

        return NoiseModel("additive", n, N, n_prime=1, g=g, L=1.0, f_H=f_H, **params)
    raise ModelError(f"unknown noise model {name!r}")

