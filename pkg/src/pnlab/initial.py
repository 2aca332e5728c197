"""Closed-form initial data.

Each entry keeps its formula so that the transport oracle can evaluate it at
shifted points exactly, and, where available, the closed-form mean
``E[u0(x + sigma B_t)]`` of the pure-noise transport problem.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .field import Field, GridSpec

__all__ = ["InitialCondition", "initial_condition", "INITIAL_CONDITIONS", "periodic_interval_cdf"]

IMAGES = 4


@dataclass(frozen=True)
class InitialCondition:
    """``fn`` maps points ``(P, n)`` to ``(P,)`` or ``(P, N)``."""

    name: str
    fn: Callable
    params: dict = field(default_factory=dict)
    mean_oracle: Callable | None = None

    def __call__(self, x):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)))

    def sample(self, grid: GridSpec) -> Field:
        return Field.from_function(grid, self.fn)

    def transport_mean(self, x, t: float, sigma: float = 1.0) -> np.ndarray:
        """``E[u0(x + sigma B_t)]`` on the unit-period torus, if known."""
        if self.mean_oracle is None:
            raise NotImplementedError(f"no closed-form mean for {self.name!r}")
        return self.mean_oracle(np.atleast_2d(np.asarray(x, dtype=float)), t, sigma)


def periodic_interval_cdf(x, lo: float, hi: float, std: float, period: float = 1.0) -> np.ndarray:
    """``P(x + Y mod period in (lo, hi))`` for ``Y ~ N(0, std^2)`` (sum over images)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    if std == 0:
        r = np.mod(x - lo, period)
        return ((r > 0) & (r < hi - lo)).astype(float)
    for k in range(-IMAGES, IMAGES + 1):
        out += ndtr((x - lo + k * period) / std) - ndtr((x - hi + k * period) / std)
    return out


def _sin_product(mode: int = 1, extent=None):
    def fn(x):
        ext = np.ones(x.shape[1]) if extent is None else np.asarray(extent)
        return np.prod(np.sin(mode * np.pi * x / ext), axis=1)

    return InitialCondition("sin-product", fn, {"mode": mode})


def _smoothed_step(center: float = 0.5, width: float = 0.5, eps: float = 0.05):
    """Periodic indicator of ``{x_1 in (center, center + width)}`` blurred by a
    Gaussian of standard deviation ``eps``; with ``center + width = 1`` this is
    the smoothed indicator of ``{x_1 > center}`` on the unit torus."""
    lo, hi = center, center + width

    def fn(x):
        return periodic_interval_cdf(x[:, 0], lo, hi, eps)

    def mean(x, t, sigma):
        return periodic_interval_cdf(x[:, 0], lo, hi, np.sqrt(eps**2 + sigma**2 * t))

    return InitialCondition("smoothed-step", fn, {"center": center, "width": width, "eps": eps}, mean)


def _step(center: float = 0.5):
    def fn(x):
        return (x[:, 0] > center).astype(float)

    def mean(x, t, sigma):
        return ndtr((x[:, 0] - center) / (sigma * np.sqrt(t)))

    return InitialCondition("step", fn, {"center": center}, mean)


def _cusp(gamma: float = 0.3, center=None):
    def fn(x):
        c = np.full(x.shape[1], 0.5) if center is None else np.asarray(center, dtype=float)
        return np.linalg.norm(x - c, axis=1) ** gamma

    return InitialCondition("cusp", fn, {"gamma": gamma, "center": center})


def _bump(width: float = 0.1, center=None):
    def fn(x):
        c = np.full(x.shape[1], 0.5) if center is None else np.asarray(center, dtype=float)
        return np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * width**2))

    return InitialCondition("bump", fn, {"width": width, "center": center})


# Fourier modes (amplitude, wave numbers in units of 2 pi, phase) on the unit torus
_TRANSPORT_MODES = ((1.0, (1, 0), 0.0), (0.5, (1, 1), 0.3), (0.25, (0, 2), 1.1))


def _transport_smooth(modes=_TRANSPORT_MODES):
    def _waves(x):
        n = x.shape[1]
        for amp, k, ph in modes:
            kk = np.zeros(n)
            kk[: min(n, len(k))] = k[: min(n, len(k))]
            yield amp, kk, ph

    def fn(x):
        out = np.zeros(len(x))
        for amp, kk, ph in _waves(x):
            out += amp * np.cos(2 * np.pi * x @ kk + ph)
        return out

    def mean(x, t, sigma):
        # E cos(k.(x + sigma B)) = exp(-|k|^2 sigma^2 t / 2) cos(k.x)
        out = np.zeros(len(x))
        for amp, kk, ph in _waves(x):
            damp = np.exp(-0.5 * (2 * np.pi) ** 2 * kk @ kk * sigma**2 * t)
            out += amp * damp * np.cos(2 * np.pi * x @ kk + ph)
        return out

    return InitialCondition("transport-smooth", fn, {"modes": [[a, list(k), p] for a, k, p in modes]}, mean)


INITIAL_CONDITIONS = {
    "sin-product": _sin_product,
    "smoothed-step": _smoothed_step,
    "step": _step,
    "cusp": _cusp,
    "bump": _bump,
    "transport-smooth": _transport_smooth,
}


def initial_condition(name: str, **params) -> InitialCondition:
    try:
        build = INITIAL_CONDITIONS[name]
    except KeyError:
        raise ValueError(f"unknown initial condition {name!r}; known: {sorted(INITIAL_CONDITIONS)}") from None
    return build(**params)
