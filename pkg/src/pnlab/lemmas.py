"""Closed-form calculus objects behind the regularity argument.

Exponent functions, the C^2 truncation family used to test with powers of the
solution, admissibility/threshold predicates for the noise strength and the
dispersion ratio, the Moser-type exponent schedule and the Hoelder exponent
combiner.  Everything here is pure and cheap; the randomized suites at the
bottom are what ``pnlab verify-lemmas`` runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "DomainError",
    "mu_power",
    "mu_trunc",
    "TruncationFamily",
    "truncation_eval",
    "truncation_pair",
    "power_pair",
    "PairResult",
    "growth_constant",
    "dispersion_ok_parabolic",
    "dispersion_ok_elliptic",
    "elliptic_dispersion_value",
    "lh_star_q",
    "lh_star_n",
    "q_admissible",
    "admissible_q_bound",
    "q_max",
    "IterationSchedule",
    "iteration_schedule",
    "HoelderExponents",
    "hoelder_exponents",
    "hoelder_combine",
    "sigma_zero",
    "SuiteResult",
    "truncation_suite",
    "power_suite",
    "mu_identity_suite",
]


class DomainError(ValueError):
    pass


def mu_power(s: float) -> float:
    """``1 - (s / (2 + s))^2`` for ``v = u |u|^s``."""
    s = float(s)
    if not s > -1:
        raise DomainError(f"mu_power needs s > -1, got {s}")
    return 1.0 - (s / (2.0 + s)) ** 2


def mu_trunc(q: float) -> float:
    """``1 - ((q - 1) / q)^2``; equals ``mu_power(2 (q - 1))``."""
    q = float(q)
    if not q >= 1:
        raise DomainError(f"mu_trunc needs q >= 1, got {q}")
    return 1.0 - ((q - 1.0) / q) ** 2


# ----------------------------------------------------------------------------
# truncation family
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncationFamily:
    """``T(t) = t^{2q}`` for ``t <= K``, a quadratic with matching C^2 data beyond."""

    q: float
    K: float = 1.0

    def __post_init__(self):
        if not self.q >= 1:
            raise DomainError(f"truncation needs q >= 1, got {self.q}")
        if not self.K > 0:
            raise DomainError(f"truncation needs K > 0, got {self.K}")

    @property
    def a(self) -> float:
        return self.q * (2 * self.q - 1)

    @property
    def b(self) -> float:
        return -4 * self.q * (self.q - 1)

    @property
    def c(self) -> float:
        return 1 - 3 * self.q + 2 * self.q**2

    def __call__(self, t):
        return truncation_eval(self, t)


def truncation_eval(fam: TruncationFamily, t):
    """``(T, T', T'')`` at ``t >= 0`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("truncation is defined for t >= 0")
    q, K = fam.q, fam.K
    low = t <= K
    tl = np.where(low, t, 0.0)
    # 0 ** 0 = 1 keeps T'' = 2 at t = 0 for q = 1
    T_lo = tl ** (2 * q)
    T1_lo = 2 * q * tl ** (2 * q - 1)
    T2_lo = 2 * q * (2 * q - 1) * tl ** (2 * q - 2)
    k2, k1, k0 = K ** (2 * q - 2), K ** (2 * q - 1), K ** (2 * q)
    T_hi = fam.a * k2 * t**2 + fam.b * k1 * t + fam.c * k0
    T1_hi = 2 * fam.a * k2 * t + fam.b * k1
    T2_hi = np.broadcast_to(2 * fam.a * k2, t.shape)
    out = (np.where(low, T_lo, T_hi), np.where(low, T1_lo, T1_hi), np.where(low, T2_lo, T2_hi))
    if out[0].ndim == 0:
        return tuple(float(v) for v in out)
    return out


def growth_constant(q: float, K: float = 1.0, points: int = 20001, span: float = 1e4) -> float:
    """Dense-scan calibration of the envelope constant ``c(q)``.

    Largest ratio among ``(T + T't + T''t^2) / min(K^{2q-2} t^2, t^{2q})``,
    ``T''t^2 / (T't)`` and ``T't / T`` over log-spaced ``t`` in
    ``[K/span, K*span]``.
    """
    fam = TruncationFamily(q, K)
    t = K * np.logspace(-math.log10(span), math.log10(span), points)
    T, T1, T2 = truncation_eval(fam, t)
    env = np.minimum(K ** (2 * q - 2) * t**2, t ** (2 * q))
    ratios = [(T + T1 * t + T2 * t**2) / env, T2 * t / T1, T1 * t / T]
    return float(max(np.max(r) for r in ratios))


class PairResult(NamedTuple):
    Dv: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray


def _as_matrix(u, G):
    u = np.asarray(u, dtype=float)
    G = np.asarray(G, dtype=float)
    N = u.shape[-1]
    if G.shape[:-1] == u.shape[:-1] and G.shape[-1] % N == 0:
        G = G.reshape(u.shape[:-1] + (N, G.shape[-1] // N))
    if G.shape[:-1] != u.shape:
        raise ValueError(f"G of shape {G.shape} does not match u of shape {u.shape}")
    return u, G


def _pair_finish(G, Dv, mu, flat):
    lhs = np.sum(G * Dv, axis=(-2, -1))
    rhs = math.sqrt(mu) * np.linalg.norm(G, axis=(-2, -1)) * np.linalg.norm(Dv, axis=(-2, -1))
    if flat:
        Dv = Dv.reshape(Dv.shape[:-2] + (-1,))
    return PairResult(Dv, lhs, rhs)


def truncation_pair(fam: TruncationFamily, u, G, mu: float | None = None) -> PairResult:
    """Chain rule for ``v = T'(|u|) |u|^{-1} u`` with ``Du = G``.

    ``u`` has shape ``(..., N)``; ``G`` is ``(..., N, n)`` or flattened
    ``(..., N n)`` in ``alpha * n + i`` order (``Dv`` is returned in the same
    layout).  ``lhs = G . Dv`` and ``rhs = sqrt(mu) |G| |Dv|``; ``mu`` defaults
    to ``mu_trunc(q)`` and is only overridable for negative controls.
    """
    flat = np.ndim(G) == np.ndim(u)
    u, G = _as_matrix(u, G)
    r = np.linalg.norm(u, axis=-1)
    if np.any(r <= 0):
        raise DomainError("truncation_pair needs u != 0")
    _, T1, T2 = truncation_eval(fam, r)
    T1 = np.asarray(T1)
    T2 = np.asarray(T2)
    # D_i v^a = T'/r G^a_i + (T'' r - T') (u . G_i) u^a / r^3
    uG = np.einsum("...a,...ai->...i", u, G)
    coef = (T2 * r - T1) / r**3
    Dv = (T1 / r)[..., None, None] * G + coef[..., None, None] * u[..., :, None] * uG[..., None, :]
    return _pair_finish(G, Dv, mu_trunc(fam.q) if mu is None else mu, flat)


def power_pair(s: float, u, G, mu: float | None = None) -> PairResult:
    """Chain rule for ``v = u |u|^s``: ``Dv = |u|^s G + s |u|^{s-2} (G . u) (x) u``."""
    flat = np.ndim(G) == np.ndim(u)
    u, G = _as_matrix(u, G)
    r = np.linalg.norm(u, axis=-1)
    if np.any(r <= 0):
        raise DomainError("power_pair needs u != 0")
    uG = np.einsum("...a,...ai->...i", u, G)
    Dv = (r**s)[..., None, None] * G + (s * r ** (s - 2))[..., None, None] * u[..., :, None] * uG[..., None, :]
    return _pair_finish(G, Dv, mu_power(s) if mu is None else mu, flat)


# ----------------------------------------------------------------------------
# thresholds and admissibility
# ----------------------------------------------------------------------------


def _check_lambdas(lambda0, lambda1, n=None):
    if not (0 < lambda0 <= lambda1):
        raise DomainError(f"need 0 < lambda0 <= lambda1, got ({lambda0}, {lambda1})")
    if n is not None and not (isinstance(n, (int, np.integer)) and n >= 1):
        raise DomainError(f"the dimension must be a positive integer, got {n!r}")


def dispersion_ok_parabolic(lambda0: float, lambda1: float, n: int) -> bool:
    """``lambda0 / lambda1 > 1 - 2/n``."""
    _check_lambdas(lambda0, lambda1, n)
    return bool(lambda0 / lambda1 > 1 - 2 / n)


def elliptic_dispersion_value(lambda0: float, lambda1: float, n: int) -> float:
    """``(lambda1 - lambda0) / (lambda1 + lambda0) * sqrt(1 + (n-2)^2 / (n-1))``."""
    _check_lambdas(lambda0, lambda1)
    if n < 2:
        raise DomainError("the elliptic threshold needs n >= 2")
    return (lambda1 - lambda0) / (lambda1 + lambda0) * math.sqrt(1 + (n - 2) ** 2 / (n - 1))


def dispersion_ok_elliptic(lambda0: float, lambda1: float, n: int) -> bool:
    return bool(elliptic_dispersion_value(lambda0, lambda1, n) < 1)


def sigma_zero(lambda0: float, lambda1: float, n: int) -> float:
    """Smallest ``sigma0 >= 0`` such that ``A + sigma^2/2`` meets the parabolic
    threshold for every ``sigma > sigma0``."""
    _check_lambdas(lambda0, lambda1, n)
    # (lambda0 + s)/(lambda1 + s) > 1 - 2/n with s = sigma^2/2 gives
    # sigma^2 > (n-2) lambda1 - n lambda0
    return math.sqrt(max(0.0, (n - 2) * lambda1 - n * lambda0))


def lh_star_q(q: float, kappa: float, nu: float) -> float:
    """Admissible noise level for the exponent ``q``; 0 when none is admissible."""
    if not (q >= 1 and kappa > 0):
        return 0.0
    bracket = math.sqrt(1 - ((q - 1) / q) ** 2) - math.sqrt(max(0.0, 1 - nu**2))
    if bracket <= 0:
        return 0.0
    return math.sqrt(bracket / (kappa * (q - 0.5)))


def lh_star_n(n: int, kappa: float, nu: float) -> float:
    """Dimension form, written out independently: ``q = n/2``."""
    if not (n >= 2 and kappa > 0):
        return 0.0
    bracket = math.sqrt(1 - ((n - 2) / n) ** 2) - math.sqrt(max(0.0, 1 - nu**2))
    if bracket <= 0:
        return 0.0
    return math.sqrt(2 / (kappa * (n - 1)) * bracket)


def q_admissible(q: float, kappa: float, nu: float, L_H: float) -> bool:
    return lh_star_q(q, kappa, nu) > L_H


def admissible_q_bound(p: float, n: int, a: float) -> float:
    """``min{p(n+2)/n, 1 + p(n+2)/n (a-4)/a, (a-2)/2}``."""
    g = p * (n + 2) / n
    return min(g, 1 + g * (a - 4) / a, (a - 2) / 2)


def q_max(n: int, a: float) -> float:
    """``na / (4(n+2) - 2a)`` when ``a < 2(n+2)``, otherwise infinite."""
    if a < 2 * (n + 2):
        return n * a / (4 * (n + 2) - 2 * a)
    return math.inf


def _q_inverse(kappa: float, nu: float, L_H: float, start: float) -> float:
    """``sup{q : lh_star_q(q) > L_H}`` (``lh_star_q`` decreases in ``q``)."""
    if L_H <= 0:
        return math.inf if nu >= 1 else 1 / (1 - nu)
    def g(q):
        return lh_star_q(q, kappa, nu) - L_H

    lo, hi = start, 2 * start
    while g(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    return brentq(g, lo, hi, xtol=1e-14, rtol=1e-14)


@dataclass
class IterationSchedule:
    n: int
    a: float
    nu: float
    kappa: float
    L_H: float
    qs: list = field(default_factory=list)
    q_max: float = math.inf
    q_star: float = math.nan
    q_upper: float = math.nan
    steps: int = 0
    admissible: bool = False
    reason: str = ""

    def as_dict(self) -> dict:
        def num(v):
            return None if not math.isfinite(v) else v

        return {
            "n": self.n, "a": self.a, "nu": self.nu, "kappa": self.kappa, "L_H": self.L_H,
            "qs": list(self.qs), "q_max": num(self.q_max), "q_star": num(self.q_star),
            "q_upper": num(self.q_upper), "steps": self.steps, "admissible": self.admissible,
            "reason": self.reason,
        }


def _next_q(q, n, a):
    return min(admissible_q_bound(q, n, a), q + 1)


def iteration_schedule(n: int, a: float, nu: float, kappa: float, L_H: float = 0.0,
                       margin: float = 0.0, max_steps: int = 10_000) -> IterationSchedule:
    """Exponent schedule ``1 = q_0 < q_1 < ... < q_J = q*``.

    ``q*`` is the midpoint of ``(n/2, min{q_inv, (a-2)/2, q_max})`` shifted by
    ``margin`` half-widths (``-1 < margin < 1``), with ``q_inv`` the largest
    exponent still admitting the noise level ``L_H``.  The recursion runs while
    it increases, stays admissible and stays below ``q*``; the first failure is
    replaced by ``q*`` itself.
    """
    if not a > n + 2:
        raise DomainError(f"need a > n + 2, got a={a}, n={n}")
    if not -1 < margin < 1:
        raise DomainError("margin must lie in (-1, 1)")
    sched = IterationSchedule(n, a, nu, kappa, L_H, q_max=q_max(n, a))
    if not lh_star_n(n, kappa, nu) > L_H:
        sched.reason = "noise level not below the admissible threshold for q = n/2"
        return sched
    lo = n / 2
    upper = min(_q_inverse(kappa, nu, L_H, max(lo, 1.0)), (a - 2) / 2, sched.q_max)
    sched.q_upper = upper
    if not upper > lo:
        sched.reason = "empty exponent interval"
        return sched
    q_star = 0.5 * (lo + upper) + margin * 0.5 * (upper - lo)
    sched.q_star = q_star
    qs = [1.0]
    for _ in range(max_steps):
        q = qs[-1]
        nxt = _next_q(q, n, a)
        if nxt > q and nxt < q_star and q_admissible(nxt, kappa, nu, L_H):
            qs.append(nxt)
            continue
        if q_star > q:
            qs.append(q_star)
        break
    else:
        sched.reason = "recursion did not reach q* within max_steps"
        sched.qs = qs
        return sched
    sched.qs = qs
    sched.steps = len(qs) - 1
    sched.admissible = True
    return sched


# ----------------------------------------------------------------------------
# Hoelder exponent combiner
# ----------------------------------------------------------------------------


class HoelderExponents(NamedTuple):
    delta: float
    eps: float
    eta: float
    gamma: float
    degenerate: bool


def hoelder_exponents(alpha: float, beta: float, n: int) -> HoelderExponents:
    """Space exponent ``delta = 1 - n/(n+alpha)`` from ``Du in L^{n+alpha}``,
    time scale ``eps = beta/n`` and the joint exponent
    ``gamma = min(delta beta / n, beta / 2)``."""
    if not (alpha > 0 and beta > 0):
        return HoelderExponents(0.0, 0.0, 0.0, 0.0, True)
    delta = 1.0 if math.isinf(alpha) else 1 - n / (n + alpha)
    eps = beta / n
    eta = min(delta * beta / n, beta - eps * n / 2)
    return HoelderExponents(delta, eps, eta, eta, False)


def hoelder_combine(alpha: float, beta: float, n: int) -> float:
    return hoelder_exponents(alpha, beta, n).gamma


# ----------------------------------------------------------------------------
# randomized suites
# ----------------------------------------------------------------------------


@dataclass
class SuiteResult:
    name: str
    params: dict
    draws: int
    worst: dict
    passed: bool
    offending: dict | None = None

    def as_dict(self) -> dict:
        return {"suite": self.name, "params": self.params, "draws": self.draws, "worst": self.worst,
                "passed": self.passed, "offending": self.offending}


def _draw(rng, draws, N, n, scale):
    """Random ``(u, Du)`` with ``|u|`` log-uniform over four decades around ``scale``."""
    u = rng.standard_normal((draws, N))
    norms = np.linalg.norm(u, axis=1)
    bad = norms < 1e-8
    while np.any(bad):
        u[bad] = rng.standard_normal((int(bad.sum()), N))
        norms = np.linalg.norm(u, axis=1)
        bad = norms < 1e-8
    u *= (scale * 10.0 ** rng.uniform(-2, 2, size=draws) / norms)[:, None]
    G = rng.standard_normal((draws, N, n))
    return u, G


def truncation_suite(q: float, K: float, draws: int = 10_000, seed: int = 0, n: int = 3, N: int = 3,
                     slack: float = 1e-10, mu: float | None = None) -> SuiteResult:
    """Angle and magnitude inequalities, C^2 matching at ``K`` and growth bounds."""
    rng = np.random.default_rng(seed)
    fam = TruncationFamily(q, K)
    u, G = _draw(rng, draws, N, n, K)
    res = truncation_pair(fam, u, G, mu=mu)
    r = np.linalg.norm(u, axis=1)
    _, T1, _ = truncation_eval(fam, r)
    Gn = np.linalg.norm(G, axis=(1, 2))
    Dvn = np.linalg.norm(res.Dv, axis=(1, 2))
    angle = (res.lhs - res.rhs) / np.maximum(res.rhs, 1e-300)
    mag = (Dvn - T1 / r * Gn) / np.maximum(T1 / r * Gn, 1e-300)

    # C^2 matching: left limit (power) against the quadratic branch at t = K
    left = (K ** (2 * q), 2 * q * K ** (2 * q - 1), 2 * q * (2 * q - 1) * K ** (2 * q - 2))
    k2, k1, k0 = K ** (2 * q - 2), K ** (2 * q - 1), K ** (2 * q)
    right = (fam.a * k2 * K**2 + fam.b * k1 * K + fam.c * k0, 2 * fam.a * k2 * K + fam.b * k1, 2 * fam.a * k2)
    match = max(abs(x - y) / abs(x) for x, y in zip(left, right))

    t = K * np.logspace(-3, 3, 2001)
    T, T1t, T2t = truncation_eval(fam, t)
    conv = T2t * t - T1t
    cq = growth_constant(q, K)
    env = np.minimum(K ** (2 * q - 2) * t**2, t ** (2 * q))
    growth = max(
        float(np.max(-conv / T1t)),
        float(np.max((conv - 2 * (q - 1) * T1t) / T1t)),
        float(np.max((T + T1t * t + T2t * t**2 - cq * env) / (cq * env))),
        float(np.max(-np.diff(T) / T[1:])),
    )
    worst = {"angle": float(np.min(angle)), "magnitude": float(np.min(mag)), "c2_match": float(match),
             "growth": growth}
    ok = worst["angle"] >= -slack and worst["magnitude"] >= -slack and match <= slack and growth <= 1e-12
    offending = None
    if not ok:
        k = int(np.argmin(np.minimum(angle, mag)))
        offending = {"u": u[k].tolist(), "Du": G[k].tolist(), "lhs": float(res.lhs[k]), "rhs": float(res.rhs[k])}
    return SuiteResult("truncation", {"q": q, "K": K, "n": n, "N": N, "seed": seed, "mu": mu}, draws, worst,
                       bool(ok), offending)


def power_suite(s: float, draws: int = 10_000, seed: int = 0, n: int = 3, N: int = 3, slack: float = 1e-10,
                mu: float | None = None) -> SuiteResult:
    rng = np.random.default_rng(seed)
    u, G = _draw(rng, draws, N, n, 1.0)
    res = power_pair(s, u, G, mu=mu)
    angle = (res.lhs - res.rhs) / np.maximum(res.rhs, 1e-300)
    worst = {"angle": float(np.min(angle))}
    ok = worst["angle"] >= -slack
    offending = None
    if not ok:
        k = int(np.argmin(angle))
        offending = {"u": u[k].tolist(), "Du": G[k].tolist(), "lhs": float(res.lhs[k]), "rhs": float(res.rhs[k])}
    return SuiteResult("power", {"s": s, "n": n, "N": N, "seed": seed, "mu": mu}, draws, worst, bool(ok), offending)


def mu_identity_suite(count: int = 1000, seed: int = 0, tol: float = 1e-12) -> SuiteResult:
    rng = np.random.default_rng(seed)
    qs = rng.uniform(1.0, 50.0, size=count)
    err = max(abs(mu_trunc(q) - mu_power(2 * (q - 1))) / mu_trunc(q) for q in qs)
    return SuiteResult("mu_identity", {"seed": seed}, count, {"rel_err": float(err)}, bool(err <= tol))
