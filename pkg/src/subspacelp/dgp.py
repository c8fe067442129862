"""Simulated data-generating processes with analytically known responses.

Two families: a fiscal-foresight real business cycle economy where the tax
shock becomes visible in the tax rate two periods after agents learn it,
and a configurable dynamic factor model. Both expose the hidden structural
shocks and the exact impulse responses so estimators can be scored.

All simulation is pure given a seed; replications derive independent
streams by spawning numpy SeedSequences.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import TimeSeriesPanel
from .errors import DimensionMismatch, InsufficientSample, InvalidDimension, NonStationary
from .lp import IRFEstimate
from .subspace import as_generator


def _dates(T: int) -> list[str]:
    width = max(4, len(str(T)))
    return [f"t{t:0{width}d}" for t in range(T)]


# ---------------------------------------------------------------------------
# fiscal-foresight economy
# ---------------------------------------------------------------------------


@dataclass
class FiscalParams:
    """Calibration of the fiscal-foresight economy.

    The tax rate moves two periods after its shock: tax_t = u_tau[t-2].
    Capital follows k_t = alpha k_{t-1} + u_a[t] - kappa (theta u_tau[t]
    + u_tau[t-1]) with kappa = tau (1 - theta) / (1 - tau).
    """

    theta: float = 0.2673
    tau: float = 0.25
    alpha: float = 0.36
    noise_case: str = "strong"
    foresight_lead: int = 2

    def __post_init__(self) -> None:
        for name in ("theta", "tau", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidDimension(f"{name} must lie in (0, 1), got {v}")
        if self.noise_case not in ("strong", "weak"):
            raise InvalidDimension("noise_case must be 'strong' or 'weak'")
        if self.foresight_lead != 2:
            raise InvalidDimension("only two-period foresight is implemented")

    @property
    def kappa(self) -> float:
        return self.tau * (1.0 - self.theta) / (1.0 - self.tau)


@dataclass
class DGPOutput:
    """Simulated panel plus hidden shocks and the analytic truth.

    ``shocks`` are aligned with panel rows and never appear as panel
    columns; ``truth`` maps response-variable names to exact IRFs.
    """

    panel: TimeSeriesPanel
    shocks: dict[str, np.ndarray]
    truth: dict[str, IRFEstimate]

    def __post_init__(self) -> None:
        leaked = set(self.shocks) & set(self.panel.names)
        if leaked:
            raise InvalidDimension(f"shocks exposed as panel columns: {sorted(leaked)}")


def fiscal_paths_from_shocks(
    u_tau: np.ndarray, u_a: np.ndarray, params: FiscalParams
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (tax, capital) paths from given shock arrays.

    Pre-sample values are zero: tax[0] = tax[1] = 0 and k starts at 0.
    """
    u_tau = np.asarray(u_tau, dtype=float)
    u_a = np.asarray(u_a, dtype=float)
    if u_tau.shape != u_a.shape:
        raise DimensionMismatch("shock arrays must share a length")
    n = u_tau.size
    kappa, theta, alpha = params.kappa, params.theta, params.alpha
    tax = np.zeros(n)
    tax[2:] = u_tau[:-2]
    cap = np.zeros(n)
    prev_k = 0.0
    prev_utau = 0.0
    for t in range(n):
        cap[t] = alpha * prev_k + u_a[t] - kappa * (theta * u_tau[t] + prev_utau)
        prev_k = cap[t]
        prev_utau = u_tau[t]
    return tax, cap


def simulate_fiscal(
    T: int,
    params: FiscalParams | None = None,
    seed=0,
    burn_in: int = 100,
    horizon: int = 6,
) -> DGPOutput:
    """Simulate the fiscal economy; a burn-in is discarded so initial
    conditions are negligible (alpha = 0.36 decays below 1e-10 within it).
    """
    if T < 50:
        raise InvalidDimension("need T >= 50")
    params = params or FiscalParams()
    rng = as_generator(seed)
    total = burn_in + T
    u_tau = rng.standard_normal(total)
    u_a = rng.standard_normal(total)
    tax, cap = fiscal_paths_from_shocks(u_tau, u_a, params)
    keep = slice(burn_in, burn_in + T)
    panel = TimeSeriesPanel(
        values=np.column_stack([tax[keep], cap[keep]]),
        names=["tax", "capital"],
        dates=_dates(T),
    )
    tax_irf, cap_irf = true_fiscal_irf(params, horizon)
    hs = np.arange(horizon + 1)
    truth = {
        "tax": IRFEstimate(horizons=hs, beta=tax_irf),
        "capital": IRFEstimate(horizons=hs, beta=cap_irf),
    }
    shocks = {"u_tau": u_tau[keep].copy(), "u_a": u_a[keep].copy()}
    return DGPOutput(panel=panel, shocks=shocks, truth=truth)


def true_fiscal_irf(params: FiscalParams, H: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact responses to a unit tax shock.

    Tax: 1 at horizon 2, zero elsewhere. Capital: c0 = -kappa theta,
    c1 = alpha c0 - kappa, then c_h = alpha c_{h-1}.
    """
    if H < 0:
        raise InvalidDimension("H must be nonnegative")
    tax = np.zeros(H + 1)
    if H >= 2:
        tax[2] = 1.0
    cap = np.zeros(H + 1)
    cap[0] = -params.kappa * params.theta
    if H >= 1:
        cap[1] = params.alpha * cap[0] - params.kappa
    for h in range(2, H + 1):
        cap[h] = params.alpha * cap[h - 1]
    return tax, cap


def gen_instrument(
    shocks: dict[str, np.ndarray], mode: str, seed=0
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Instrument for the tax shock, plus the auxiliary noise it loads on.

    strict:       z_t = 0.7 u_tau[t] + nu1[t-1] + nu2[t-1] + eps_z,
                  nu_i ~ N(0, 4) independent of the model, eps_z ~ N(0, 0.01)
    conditional:  z_t = 0.7 u_tau[t] + u_a[t-1] + u_tau[t-1] + eps_z

    The first conditional value needs pre-sample shocks and is NaN. The
    auxiliary dict carries the contemporaneous nu series in strict mode
    (they drive the informational panel of that experiment).
    """
    if mode not in ("strict", "conditional"):
        raise InvalidDimension("mode must be 'strict' or 'conditional'")
    u_tau = np.asarray(shocks["u_tau"], dtype=float)
    T = u_tau.size
    rng = as_generator(seed)
    eps_z = rng.normal(0.0, 0.1, T)
    if mode == "strict":
        nu1 = rng.normal(0.0, 2.0, T + 1)  # index 0 is the pre-sample period
        nu2 = rng.normal(0.0, 2.0, T + 1)
        z = 0.7 * u_tau + nu1[:-1] + nu2[:-1] + eps_z
        return z, {"nu1": nu1[1:], "nu2": nu2[1:]}
    u_a = np.asarray(shocks["u_a"], dtype=float)
    z = np.full(T, np.nan)
    z[1:] = 0.7 * u_tau[1:] + u_a[:-1] + u_tau[:-1] + eps_z[1:]
    return z, {}


def gen_informational(
    s1: np.ndarray,
    s2: np.ndarray,
    n: int = 100,
    noise_case: str = "strong",
    seed=0,
    sigma: float | None = None,
    block_sizes: tuple[int, int] | None = None,
) -> np.ndarray:
    """Panel of n series, each a noisy copy of one of two driving series.

    y*_i = b_i s1 + (1 - b_i) s2 + xi_i with b_i ~ Bernoulli(0.1) and
    xi_i ~ N(0, sigma_i^2); sigma_i ~ U(0, 1) (strong) or U(0, 4) (weak),
    drawn once per series. ``sigma`` fixes all noise scales and
    ``block_sizes`` fixes the exact split (s1 count, s2 count) instead of
    Bernoulli draws; together they reproduce the two-block equicorrelation
    benchmark whose eigenvalues are known in closed form.
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if s1.shape != s2.shape:
        raise DimensionMismatch("driving series must share a length")
    if noise_case not in ("strong", "weak"):
        raise InvalidDimension("noise_case must be 'strong' or 'weak'")
    rng = as_generator(seed)
    if block_sizes is not None:
        if sum(block_sizes) != n:
            raise InvalidDimension("block sizes must sum to n")
        b = np.concatenate([np.ones(block_sizes[0]), np.zeros(block_sizes[1])])
    else:
        b = (rng.random(n) < 0.1).astype(float)
    if sigma is not None:
        sig = np.full(n, float(sigma))
    else:
        high = 1.0 if noise_case == "strong" else 4.0
        sig = rng.uniform(0.0, high, n)
    noise = rng.standard_normal((s1.size, n)) * sig
    return b[None, :] * s1[:, None] + (1.0 - b[None, :]) * s2[:, None] + noise


# ---------------------------------------------------------------------------
# dynamic factor model
# ---------------------------------------------------------------------------


def _companion(coeffs: np.ndarray) -> np.ndarray:
    """Companion matrix of a (p, n, n) lag-coefficient stack."""
    p, n, _ = coeffs.shape
    comp = np.zeros((n * p, n * p))
    comp[:n] = np.concatenate(list(coeffs), axis=1)
    if p > 1:
        comp[n:, : n * (p - 1)] = np.eye(n * (p - 1))
    return comp


def _spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(mat)))) if mat.size else 0.0


@dataclass
class DFMParams:
    """Dynamic factor model: X_t = loadings f_t + v_t.

    Factors follow a VAR whose innovations are s * eps_t + u_t with eps the
    structural shock and u ~ N(0, factor_innovation_cov); each idiosyncratic
    component is an AR process with scale idio_scales[i]. The factor VAR
    companion matrix and every idiosyncratic AR must be stationary.
    """

    loadings: np.ndarray
    factor_coeffs: np.ndarray  # (p_f, n_f, n_f)
    factor_innovation_cov: np.ndarray  # covariance of the non-structural part
    shock_loading: np.ndarray  # (n_f,)
    idio_coeffs: np.ndarray  # (n_x, p_v)
    idio_scales: np.ndarray  # (n_x,)
    series_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        self.factor_coeffs = np.asarray(self.factor_coeffs, dtype=float)
        if self.factor_coeffs.ndim == 2:
            self.factor_coeffs = self.factor_coeffs[None]
        self.factor_innovation_cov = np.atleast_2d(
            np.asarray(self.factor_innovation_cov, dtype=float)
        )
        self.shock_loading = np.asarray(self.shock_loading, dtype=float).ravel()
        self.idio_coeffs = np.atleast_2d(np.asarray(self.idio_coeffs, dtype=float))
        self.idio_scales = np.asarray(self.idio_scales, dtype=float).ravel()
        n_x, n_f = self.loadings.shape
        if self.factor_coeffs.shape[1:] != (n_f, n_f):
            raise DimensionMismatch("factor_coeffs must be (p, n_f, n_f)")
        if self.factor_innovation_cov.shape != (n_f, n_f):
            raise DimensionMismatch("factor_innovation_cov must be (n_f, n_f)")
        if self.shock_loading.size != n_f:
            raise DimensionMismatch("shock_loading must have n_f entries")
        if self.idio_coeffs.shape[0] != n_x or self.idio_scales.size != n_x:
            raise DimensionMismatch("idiosyncratic parameters must cover n_x series")
        cov = self.factor_innovation_cov
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise InvalidDimension("factor innovation covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-10:
            raise InvalidDimension("factor innovation covariance must be PSD")
        rho = _spectral_radius(_companion(self.factor_coeffs))
        if rho >= 1.0:
            raise NonStationary(f"factor VAR spectral radius {rho:.4f} >= 1")
        for i in range(n_x):
            rho_i = _spectral_radius(_companion(self.idio_coeffs[i][:, None, None]))
            if rho_i >= 1.0:
                raise NonStationary(f"idiosyncratic AR {i} spectral radius {rho_i:.4f} >= 1")
        if not self.series_names:
            self.series_names = [f"x{i + 1:03d}" for i in range(n_x)]

    @property
    def n_series(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]


def make_default_dfm_params(
    n_series: int = 20,
    n_factors: int = 6,
    factor_var_lags: int = 4,
    idio_ar: float = 0.3,
    seed: int = 12345,
) -> DFMParams:
    """Synthetic but stable default calibration for tests and demos.

    Random loadings, a factor VAR rescaled to spectral radius 0.7, AR(1)
    idiosyncratics, and the structural shock loading on the first factor.
    """
    rng = np.random.default_rng(seed)
    lam = rng.standard_normal((n_series, n_factors))
    coeffs = rng.standard_normal((factor_var_lags, n_factors, n_factors)) * 0.2
    rho = _spectral_radius(_companion(coeffs))
    if rho > 0:
        scale = 0.7 / rho
        coeffs = np.stack([coeffs[p] * scale ** (p + 1) for p in range(factor_var_lags)])
    idio = np.zeros((n_series, 4))
    idio[:, 0] = idio_ar
    shock = np.zeros(n_factors)
    shock[0] = 1.0
    return DFMParams(
        loadings=lam,
        factor_coeffs=coeffs,
        factor_innovation_cov=np.eye(n_factors),
        shock_loading=shock,
        idio_coeffs=idio,
        idio_scales=np.ones(n_series),
    )


def true_dfm_irf(params: DFMParams, H: int) -> np.ndarray:
    """(n_series, H+1) responses to a unit structural shock: loadings
    times the factor-VAR moving-average coefficients times the shock loading.
    """
    n_f = params.n_factors
    comp = _companion(params.factor_coeffs)
    sel = np.zeros((comp.shape[0], n_f))
    sel[:n_f, :n_f] = np.eye(n_f)
    out = np.empty((params.n_series, H + 1))
    power = np.eye(comp.shape[0])
    for h in range(H + 1):
        psi = sel.T @ power @ sel
        out[:, h] = params.loadings @ (psi @ params.shock_loading)
        power = comp @ power
    return out


def dfm_paths_from_shocks(
    eps: np.ndarray, factor_noise: np.ndarray, idio_noise: np.ndarray, params: DFMParams
) -> np.ndarray:
    """Deterministic panel paths given every shock realization.

    ``factor_noise`` is the already-correlated non-structural innovation
    (T, n_f); ``idio_noise`` is (T, n_x) standard normals pre-scaling.
    """
    T = eps.size
    n_f, n_x = params.n_factors, params.n_series
    p_f = params.factor_coeffs.shape[0]
    p_v = params.idio_coeffs.shape[1]
    theta = factor_noise + eps[:, None] * params.shock_loading[None, :]
    f = np.zeros((T, n_f))
    for t in range(T):
        acc = theta[t].copy()
        for ell in range(1, p_f + 1):
            if t - ell >= 0:
                acc += params.factor_coeffs[ell - 1] @ f[t - ell]
        f[t] = acc
    v = np.zeros((T, n_x))
    scaled = idio_noise * params.idio_scales[None, :]
    for t in range(T):
        acc = scaled[t].copy()
        for ell in range(1, p_v + 1):
            if t - ell >= 0:
                acc += params.idio_coeffs[:, ell - 1] * v[t - ell]
        v[t] = acc
    return f @ params.loadings.T + v


def simulate_dfm(
    T: int,
    params: DFMParams | None = None,
    seed=0,
    burn_in: int = 200,
    horizon: int = 6,
) -> DGPOutput:
    """Simulate the factor model; returns observables, the hidden structural
    shock, the reduced-form factor innovations, and the analytic responses.
    """
    params = params or make_default_dfm_params()
    rng = as_generator(seed)
    total = burn_in + T
    n_f, n_x = params.n_factors, params.n_series
    eps = rng.standard_normal(total)
    chol = np.linalg.cholesky(
        params.factor_innovation_cov + 1e-12 * np.eye(n_f)
    )
    factor_noise = rng.standard_normal((total, n_f)) @ chol.T
    idio_noise = rng.standard_normal((total, n_x))
    X = dfm_paths_from_shocks(eps, factor_noise, idio_noise, params)
    keep = slice(burn_in, total)
    theta = factor_noise + eps[:, None] * params.shock_loading[None, :]
    panel = TimeSeriesPanel(
        values=X[keep], names=list(params.series_names), dates=_dates(T)
    )
    irf = true_dfm_irf(params, horizon)
    hs = np.arange(horizon + 1)
    truth = {
        name: IRFEstimate(horizons=hs, beta=irf[i])
        for i, name in enumerate(params.series_names)
    }
    shocks = {
        "eps_mp": eps[keep].copy(),
        "factor_innovations": theta[keep].copy(),
    }
    return DGPOutput(panel=panel, shocks=shocks, truth=truth)


def make_dfm_contamination(
    factor_innovations: np.ndarray,
    tax_weights: np.ndarray | None = None,
    tech_weights: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Tax/tech contamination components as linear combinations of the
    reduced-form factor innovations. Defaults are uniform weights over
    factors, normalized to sum to one (the calibrated weights are not
    published; these are configuration).
    """
    theta = np.asarray(factor_innovations, dtype=float)
    n_f = theta.shape[1]
    if tax_weights is None:
        tax_weights = np.full(n_f, 1.0 / n_f)
    if tech_weights is None:
        tech_weights = np.full(n_f, 1.0 / n_f)
    tax_weights = np.asarray(tax_weights, float) / np.sum(tax_weights)
    tech_weights = np.asarray(tech_weights, float) / np.sum(tech_weights)
    return {"tax": theta @ tax_weights, "tech": theta @ tech_weights}


def gen_dfm_instrument(
    eps_mp: np.ndarray,
    mode: str,
    seed=0,
    contamination: dict[str, np.ndarray] | None = None,
) -> np.ndarray:
    """Instrument for the structural shock in the factor-model experiments.

    strict:       z_t = sqrt(0.5) eps_t + nu_t, nu ~ N(0, 1)
    conditional:  z_t = eps_t + eps_{t-1} + tax_{t-1} + 0.9 tech_{t-1} + nu_t

    Conditional mode needs the contamination components and its first value
    is NaN (pre-sample lags).
    """
    if mode not in ("strict", "conditional"):
        raise InvalidDimension("mode must be 'strict' or 'conditional'")
    eps = np.asarray(eps_mp, dtype=float)
    rng = as_generator(seed)
    nu = rng.standard_normal(eps.size)
    if mode == "strict":
        return math.sqrt(0.5) * eps + nu
    if contamination is None:
        raise InvalidDimension("conditional mode requires contamination components")
    tax = np.asarray(contamination["tax"], dtype=float)
    tech = np.asarray(contamination["tech"], dtype=float)
    z = np.full(eps.size, np.nan)
    z[1:] = eps[1:] + eps[:-1] + tax[:-1] + 0.9 * tech[:-1] + nu[1:]
    return z


# ---------------------------------------------------------------------------
# parameter (de)serialization for the CLI
# ---------------------------------------------------------------------------


def dfm_params_to_json(params: DFMParams, path) -> None:
    payload = {
        "loadings": params.loadings.tolist(),
        "factor_coeffs": params.factor_coeffs.tolist(),
        "factor_innovation_cov": params.factor_innovation_cov.tolist(),
        "shock_loading": params.shock_loading.tolist(),
        "idio_coeffs": params.idio_coeffs.tolist(),
        "idio_scales": params.idio_scales.tolist(),
        "series_names": list(params.series_names),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def dfm_params_from_json(path) -> DFMParams:
    with open(path) as fh:
        payload = json.load(fh)
    return DFMParams(
        loadings=np.asarray(payload["loadings"], dtype=float),
        factor_coeffs=np.asarray(payload["factor_coeffs"], dtype=float),
        factor_innovation_cov=np.asarray(payload["factor_innovation_cov"], dtype=float),
        shock_loading=np.asarray(payload["shock_loading"], dtype=float),
        idio_coeffs=np.asarray(payload["idio_coeffs"], dtype=float),
        idio_scales=np.asarray(payload["idio_scales"], dtype=float),
        series_names=list(payload.get("series_names", [])),
    )
