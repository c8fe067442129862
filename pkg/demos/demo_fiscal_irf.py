"""Recover the impulse responses of a fiscal-foresight economy.

The simulated economy hides a tax shock that agents observe two periods
before it hits the tax rate. A local projection with only a small control
set cannot see the shock coming; averaging projections over many random
subsets of a 100-series informational panel can. This script simulates one
mid-sized sample, estimates the tax and capital responses three ways, and
prints them against the analytic truth.

Run:  python3 demos/demo_fiscal_irf.py
"""
import numpy as np

from subspacelp import estimate_base_lp, estimate_falp, estimate_rslp
from subspacelp.inference import BootstrapConfig, block_bootstrap_bands
from subspacelp.mc import EstimatorSettings, ExperimentConfig, fiscal_replication_data

# one artificial dataset: 400 observations, conditionally exogenous
# instrument, strongly correlated informational series
config = ExperimentConfig(
    identification="iv_conditional",
    noise_case="strong",
    T=400,
    n_replications=1,
    estimators=(EstimatorSettings("rslp"),),
)
panel, specs, truth = fiscal_replication_data(config, rep_seed=7)

print(f"panel: {panel.n_obs} observations x {panel.n_series} series")
print("the instrument is contaminated by lagged shocks, so the base LP is")
print("inconsistent unless the informational series are controlled for\n")

rows = []
for resp in ("tax", "capital"):
    spec = specs[resp]
    base = estimate_base_lp(panel, spec)
    rslp, ensemble = estimate_rslp(panel, spec, k=50, n_R=500, seed=1)
    falp = estimate_falp(panel, spec, n_factors=2)
    lower, upper = block_bootstrap_bands(
        panel, spec, ensemble, BootstrapConfig(n_boot=300, seed=2)
    )
    rows.append((resp, truth.truth[resp].beta, base, rslp, falp, lower, upper))

for resp, true_irf, base, rslp, falp, lower, upper in rows:
    print(f"--- response of {resp} to a unit tax shock ---")
    print(f"{'h':>2} {'truth':>8} {'base LP':>9} {'subspace':>9} "
          f"{'factor':>9} {'90% band':>20}")
    for h in range(len(true_irf)):
        band = f"[{lower[h]:+.3f}, {upper[h]:+.3f}]"
        print(
            f"{h:>2} {true_irf[h]:>8.3f} {base.beta[h]:>9.3f} "
            f"{rslp.beta[h]:>9.3f} {falp.beta[h]:>9.3f} {band:>20}"
        )
    print()

print("the subspace average finds the spike at horizon 2; the base LP")
print("spreads it over horizons 0-2 because the instrument is only")
print("conditionally exogenous")
