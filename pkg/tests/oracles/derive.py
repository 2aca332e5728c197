"""Independent oracle values, computed symbolically or in extended precision.

Run ``python3 tests/oracles/derive.py`` to regenerate; the numbers printed here
are frozen as literals in the test modules.  Nothing in this file imports pnlab.
"""

from __future__ import annotations

import json
from fractions import Fraction

import mpmath as mp
import sympy as sp

mp.mp.dps = 40


def lp_x1():
    x = sp.symbols("x")
    return sp.sqrt(sp.integrate(x**2, (x, 0, 1)))


def grad_energy_sin_product():
    x, y = sp.symbols("x y")
    u = sp.sin(sp.pi * x) * sp.sin(sp.pi * y)
    e = sp.integrate(sp.diff(u, x) ** 2 + sp.diff(u, y) ** 2, (x, 0, 1), (y, 0, 1))
    return sp.nsimplify(e)


def envelope_constant(q):
    # sup over s = t/K > 1 of (T + T't + T''t^2) / t^2 on the quadratic branch,
    # and 1 + 2q + 2q(2q-1) on the power branch
    s = sp.symbols("s", positive=True)
    q = sp.nsimplify(q)
    a, b, c = q * (2 * q - 1), -4 * q * (q - 1), 1 - 3 * q + 2 * q**2
    quad = 5 * a + 2 * b / s + c / s**2
    lim = sp.limit(quad, s, sp.oo)
    power = 1 + 2 * q + 2 * q * (2 * q - 1)
    at_one = quad.subs(s, 1)
    return float(max(lim, power, at_one))


def elliptic_value(l0, l1, n):
    return (mp.mpf(l1) - l0) / (mp.mpf(l1) + l0) * mp.sqrt(1 + mp.mpf(n - 2) ** 2 / (n - 1))


def schedule_n3_a6():
    n, a = 3, 6
    q = Fraction(1)
    qs = [q]
    lo = Fraction(n, 2)
    upper = min(Fraction(20), Fraction(a - 2, 2), Fraction(n * a, 4 * (n + 2) - 2 * a))
    q_star = (lo + upper) / 2
    while True:
        g = q * Fraction(n + 2, n)
        nxt = min(g, 1 + g * Fraction(a - 4, a), Fraction(a - 2, 2), q + 1)
        if nxt < q_star:
            qs.append(nxt)
            q = nxt
        else:
            qs.append(q_star)
            break
    return [str(v) for v in qs], str(q_star)


def compact_symbol(h):
    h = mp.mpf(h)
    return -(2 / h**2) * (1 - mp.cos(2 * mp.pi * h))


def wide_symbol(h):
    h = mp.mpf(h)
    return -(mp.sin(2 * mp.pi * h) / h) ** 2


def main():
    out = {
        "lp_x1": float(lp_x1()),
        "grad_energy_sin_product": str(grad_energy_sin_product()),
        "c_q": {str(q): envelope_constant(q) for q in (1, 1.5, 2, 3, 5)},
        "elliptic_1_4_3": float(elliptic_value(1, 4, 3)),
        "elliptic_1_100_10": float(elliptic_value(1, 100, 10)),
        "lh_star_n3_k1_nu1": float(mp.sqrt(mp.sqrt(mp.mpf(8) / 9))),
        "schedule_n3_a6_nu095": schedule_n3_a6(),
        "compact_symbol_h32": float(compact_symbol(mp.mpf(1) / 32)),
        "wide_symbol_h32": float(wide_symbol(mp.mpf(1) / 32)),
        "hoelder_combine_2_half_n2": str(min(Fraction(1, 2) * Fraction(1, 2) / 2, Fraction(1, 4))),
        "vmp_x1_two_frames": float(1 / mp.sqrt(3) + 1),
    }
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
