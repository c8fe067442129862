"""Error bands for subspace-averaged local projections.

Two routes: a cross-regression moving block bootstrap that resamples
residual blocks with fixed regressors, applying the same block start
sequence to every draw's regression so the correlation across subspace
estimates is preserved; and the analytical model-averaging standard
deviation that assumes perfect correlation across draws (conservative).

Both exploit the influence representation beta_hat = w'y of each draw's
impulse coefficient: a design-fixed refit on a resampled response is
exactly beta_hat + w' xi*, and the Newey-West variance of the coefficient
is the Bartlett quadratic of the scalar score series resid * w. No
regression is re-solved inside the bootstrap loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionMismatch, InsufficientSample, InvalidDimension
from .lp import LPSpec, SubspaceEnsemble, inference_arrays


@dataclass
class BootstrapConfig:
    n_boot: int = 500
    seed: int = 0
    nominal_level: float = 0.90

    def __post_init__(self) -> None:
        if self.n_boot < 2:
            raise InvalidDimension("n_boot must be at least 2")
        if not 0.0 < self.nominal_level < 1.0:
            raise InvalidDimension("nominal_level must lie in (0, 1)")


def _block_index_template(T: int, block: int, starts: np.ndarray) -> np.ndarray:
    """Concatenate blocks of length ``block`` from start positions, truncated
    to T observations. starts is (n_boot, n_blocks)."""
    idx = starts[:, :, None] + np.arange(block)[None, None, :]
    return idx.reshape(starts.shape[0], -1)[:, :T]


def block_bootstrap_bands(
    panel,
    spec: LPSpec,
    ensemble: SubspaceEnsemble,
    config: BootstrapConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Normal-approximation interval from a shared-block residual bootstrap.

    Per horizon h: residual vectors of length T_h are cut into T_h - b + 1
    moving blocks of length b = max(h, 1); each replication samples
    ceil(T_h / b) + 1 starts with replacement (trailing truncation to T_h)
    and applies the same start sequence to all draws. Under two-stage
    identification the first-stage residuals are resampled jointly with the
    projection residuals (same blocks, preserving their correlation) and
    propagated through the linearized refit

        beta* = beta_hat + w' xi* - beta_hat (P1 w)' eta*,

    where P1 projects onto the first-stage design; ignoring that term
    understates the variance badly at horizons where the projection
    residuals are small. Residuals are scaled by sqrt(n / (n - p)) per
    stage to undo the in-sample degrees-of-freedom shrinkage. The
    replication statistic is the weighted ensemble mean; bands are the
    point estimate plus/minus the standard-normal critical value times the
    bootstrap SD.
    """
    config = config or BootstrapConfig()
    payload = inference_arrays(panel, spec, ensemble.draws)
    if payload is None:  # pragma: no cover - inference_arrays always returns
        raise InsufficientSample("no inference arrays available")
    point = ensemble.weights @ ensemble.betas
    z = stats.norm.ppf(0.5 * (1.0 + config.nominal_level))
    rng = np.random.default_rng(config.seed)
    lower = np.empty(ensemble.horizons.size)
    upper = np.empty(ensemble.horizons.size)
    for hp, h in enumerate(ensemble.horizons):
        resid = payload["resid"][hp]
        infl = payload["influence"][hp]
        eta = payload["eta"][hp]
        infl_s1 = payload["influence_s1"][hp]
        n2, p2, n1, p1 = payload["dof"][hp]
        scale2 = math.sqrt(n2 / max(n2 - p2, 1))
        scale1 = math.sqrt(n1 / max(n1 - p1, 1))
        draw_betas = payload["betas"][:, hp]
        n_R, T_h = resid.shape
        block = max(int(h), 1)
        if T_h <= block:
            raise InsufficientSample(
                f"sample {T_h} does not exceed block length {block} at horizon {h}"
            )
        n_starts = T_h - block + 1
        n_blocks = math.ceil(T_h / block) + 1
        starts = rng.integers(0, n_starts, size=(config.n_boot, n_blocks))
        idx = _block_index_template(T_h, block, starts)
        stats_b = np.empty(config.n_boot)
        chunk = max(1, int(4_000_000 // max(n_R * T_h, 1)))
        base = float(ensemble.weights @ ensemble.betas[:, hp])
        for b0 in range(0, config.n_boot, chunk):
            b1 = min(b0 + chunk, config.n_boot)
            gathered = resid[:, idx[b0:b1]]  # (n_R, c, T_h)
            shifts = scale2 * np.einsum("nct,nt->nc", gathered, infl)
            if eta is not None:
                g_eta = eta[:, idx[b0:b1]]
                shifts -= (
                    scale1
                    * draw_betas[:, None]
                    * np.einsum("nct,nt->nc", g_eta, infl_s1)
                )
            stats_b[b0:b1] = base + ensemble.weights @ shifts
        sd = float(np.std(stats_b, ddof=1))
        lower[hp] = point[hp] - z * sd
        upper[hp] = point[hp] + z * sd
    return lower, upper


def rslp_newey_west_variances(
    panel, spec: LPSpec, ensemble: SubspaceEnsemble, lag_from_horizon: bool = True
) -> np.ndarray:
    """Per-draw, per-horizon Newey-West variances of the impulse coefficient.

    Lag truncation equals the horizon (serial correlation of order h is
    expected in an h-step projection). Uses the identity
    var = a' Omega a = Bartlett quadratic of the scores resid * influence.
    """
    payload = inference_arrays(panel, spec, ensemble.draws)
    n_R = ensemble.n_draws
    out = np.empty((n_R, ensemble.horizons.size))
    for hp, h in enumerate(ensemble.horizons):
        g = payload["resid"][hp] * payload["influence"][hp]  # (n_R, T_h)
        L = int(h) if lag_from_horizon else 0
        acc = np.einsum("nt,nt->n", g, g)
        for ell in range(1, L + 1):
            w = 1.0 - ell / (L + 1.0)
            acc = acc + 2.0 * w * np.einsum("nt,nt->n", g[:, ell:], g[:, :-ell])
        out[:, hp] = np.maximum(acc, 0.0)
    return out


def buckland_sd(ensemble: SubspaceEnsemble, per_draw_nw_variance) -> np.ndarray:
    """Model-averaging SD under perfectly correlated draws:

        SD_h = (1/n_R) sum_j sqrt(var_{j,h} + (beta_{j,h} - beta_bar_h)^2)

    with beta_bar_h the ensemble point estimate. Conservative because the
    cross-draw correlation is high but below one in practice.
    """
    var = np.asarray(per_draw_nw_variance, dtype=float)
    if var.shape != ensemble.betas.shape:
        raise DimensionMismatch(
            f"variance matrix {var.shape} must match ensemble {ensemble.betas.shape}"
        )
    if np.any(var < 0):
        raise InvalidDimension("variances must be nonnegative")
    beta_bar = ensemble.weights @ ensemble.betas
    spread = (ensemble.betas - beta_bar[None, :]) ** 2
    return np.sqrt(var + spread).mean(axis=0)


def buckland_bands(
    ensemble: SubspaceEnsemble,
    per_draw_nw_variance,
    nominal_level: float = 0.90,
) -> tuple[np.ndarray, np.ndarray]:
    """Point estimate plus/minus the normal critical value times the
    model-averaging SD."""
    if not 0.0 < nominal_level < 1.0:
        raise InvalidDimension("nominal_level must lie in (0, 1)")
    sd = buckland_sd(ensemble, per_draw_nw_variance)
    point = ensemble.weights @ ensemble.betas
    z = stats.norm.ppf(0.5 * (1.0 + nominal_level))
    return point - z * sd, point + z * sd
