"""How concentrated is the variance of a candidate-control panel?

The share of variance carried by the first few principal components tells
you whether factor-style dimension reduction can summarize the panel. Two
noise settings bracket the interesting range: a strong case where two
components explain about 80% of the variation (think cross-country asset
prices) and a weak case near 20% (typical of large monthly macro panels).
Subspace averaging earns its keep in the weak case.

Run:  python3 demos/demo_factor_structure.py
"""
import numpy as np

from subspacelp.data import factor_structure_report
from subspacelp.dgp import gen_informational

rng = np.random.default_rng(0)
T, n = 200, 100
s1 = rng.standard_normal(T)
s2 = rng.standard_normal(T)

print(f"simulated informational panels, T = {T}, {n} series\n")
print(f"{'components':>10} {'strong':>10} {'weak':>10} {'benchmark strong':>18} {'benchmark weak':>16}")

curves = {}
for label, kwargs in (
    ("strong", dict(noise_case="strong")),
    ("weak", dict(noise_case="weak")),
    # fixed-noise two-block benchmark whose population shares are
    # (1 + 89 rho + 1 + 9 rho) / 100 with rho = 1 / (1 + sigma^2)
    ("bench_strong", dict(noise_case="strong", sigma=0.5, block_sizes=(10, 90))),
    ("bench_weak", dict(noise_case="weak", sigma=2.0, block_sizes=(10, 90))),
):
    panel = gen_informational(s1, s2, n=n, seed=42, **kwargs)
    _, cum = factor_structure_report(panel, 10)
    curves[label] = cum

for m in range(10):
    print(
        f"{m + 1:>10} {curves['strong'][m]:>10.3f} {curves['weak'][m]:>10.3f} "
        f"{curves['bench_strong'][m]:>18.3f} {curves['bench_weak'][m]:>16.3f}"
    )

for sigma, label in ((0.5, "strong"), (2.0, "weak")):
    rho = 1 / (1 + sigma**2)
    oracle = (2 + 98 * rho) / 100
    print(f"\npopulation 2-component share, benchmark {label}: {oracle:.3f}")
print("\nthe first two components dominate the strong panel; the weak panel")
print("needs many components, which is where random subsets of raw series")
print("beat estimated factors as controls")
