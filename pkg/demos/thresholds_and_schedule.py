"""How the dispersion ratio, the noise level and the integrability exponent
interact, printed as small tables."""

from __future__ import annotations

from pnlab import lemmas
from pnlab.coefficients import kappa_nu_from_lambdas

print("dispersion ratio thresholds, n = 3")
for l0, l1 in ((1, 1), (1, 2), (1, 3), (1, 4), (1, 10)):
    print(f"  lambda=({l0}, {l1})  parabolic ok={lemmas.dispersion_ok_parabolic(l0, l1, 3)!s:5}  "
          f"elliptic value={lemmas.elliptic_dispersion_value(l0, l1, 3):.4f}  "
          f"sigma0={lemmas.sigma_zero(l0, l1, 3):.4f}")

print("\nnoise threshold for q = n/2 as the contraction constant nu approaches 1 (kappa = 1)")
for nu in (0.5, 0.8, 0.9, 0.95, 0.99):
    print(f"  nu={nu:.2f}  n=3: {lemmas.lh_star_n(3, 1.0, nu):.4f}  n=4: {lemmas.lh_star_n(4, 1.0, nu):.4f}")

print("\nexponent schedules, n = 3")
for a, nu, lh in ((6, 0.95, 0.0), (10, 0.95, 0.0), (10, 0.95, 0.3), (10, 0.8, 0.0)):
    s = lemmas.iteration_schedule(3, a, nu, 1.0, lh)
    qs = ", ".join(f"{q:.4f}" for q in s.qs) or "-"
    print(f"  a={a:3}  nu={nu}  L_H={lh}  admissible={s.admissible!s:5}  q: {qs}  {s.reason}")

kappa, nu = kappa_nu_from_lambdas(1.0, 1.5)
print(f"\nlambda=(1, 1.5) gives kappa={kappa:.4f}, nu={nu:.4f}")
