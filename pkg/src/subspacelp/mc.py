"""Monte Carlo harness: replicate (DGP -> estimators -> IRFs), score
bias and RMSE, and emit comparison tables.

The replication is the unit of parallelism. Every replication derives its
own random streams by spawning the master SeedSequence, results are
gathered into a replication-indexed array, and BLAS threading is pinned to
one thread inside workers, so totals are bit-identical for any worker
count. RMSE follows

    sqrt( (1/(H+1)) sum_h (1/N) sum_i (beta_hat_{h,i} - beta_h_true)^2 )

per estimator and response variable; failed replications are excluded from
both numerator and denominator and reported as counts, never silently
dropped.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .data import TimeSeriesPanel
from .dgp import (
    DFMParams,
    DGPOutput,
    FiscalParams,
    gen_dfm_instrument,
    gen_informational,
    gen_instrument,
    make_default_dfm_params,
    make_dfm_contamination,
    simulate_dfm,
    simulate_fiscal,
    true_dfm_irf,
)
from .errors import InvalidDimension, SubspaceLPError
from .lp import (
    LPSpec,
    estimate_base_lp,
    estimate_falp,
    estimate_rslp_joint,
    make_cumulative_target,
    select_k_by_bic,
)

IDENTIFICATION_MODES = ("iv_strict", "iv_conditional", "svar")


@dataclass
class EstimatorSettings:
    """One estimator column of the comparison table."""

    name: str  # "base" | "rslp" | "falp"
    k: int = 50
    n_draws: int = 500
    weighting: str = "equal"
    n_factors: int = 2
    select_k: bool = False
    k_grid: tuple = (0, 10, 20, 30, 40, 50, 60)

    def __post_init__(self) -> None:
        if self.name not in ("base", "rslp", "falp"):
            raise InvalidDimension(f"unknown estimator {self.name!r}")


@dataclass
class ExperimentConfig:
    identification: str = "iv_strict"
    noise_case: str = "strong"
    T: int = 200
    n_replications: int = 1000
    horizon: int = 6
    seed: int = 0
    n_informational: int = 100
    dgp: str = "fiscal"
    fiscal_params: FiscalParams = field(default_factory=FiscalParams)
    dfm_params: DFMParams | None = None
    dfm_impulse: str | None = None  # default: largest impact response
    essential_lags: int = 2
    estimators: tuple = (EstimatorSettings("rslp"), EstimatorSettings("base"))
    responses: tuple = ("tax", "capital")
    baseline: str = "rslp"

    def __post_init__(self) -> None:
        if self.identification not in IDENTIFICATION_MODES:
            raise InvalidDimension(f"identification must be one of {IDENTIFICATION_MODES}")
        if self.dgp not in ("fiscal", "dfm"):
            raise InvalidDimension("dgp must be 'fiscal' or 'dfm'")
        if self.n_replications < 1:
            raise InvalidDimension("need at least one replication")
        if not self.estimators:
            raise InvalidDimension("estimator list is empty")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise InvalidDimension("estimator names must be unique")
        self.fiscal_params = replace(self.fiscal_params, noise_case=self.noise_case)
        if self.dgp == "dfm":
            if self.identification == "svar":
                raise InvalidDimension("the factor-model experiments use IV identification")
            if self.dfm_params is None:
                self.dfm_params = make_default_dfm_params()
            irf0 = true_dfm_irf(self.dfm_params, 0)[:, 0]
            names = list(self.dfm_params.series_names)
            if self.dfm_impulse is None:
                self.dfm_impulse = names[int(np.argmax(np.abs(irf0)))]
            if self.dfm_impulse not in names:
                raise InvalidDimension(f"unknown impulse series {self.dfm_impulse!r}")
            if abs(irf0[names.index(self.dfm_impulse)]) < 1e-12:
                raise InvalidDimension("impulse series has no impact response")
            if self.responses == ("tax", "capital"):
                self.responses = tuple(
                    n for n in names[:3] if n != self.dfm_impulse
                )[:2]


def fiscal_replication_data(
    config: ExperimentConfig, rep_seed
) -> tuple[TimeSeriesPanel, dict[str, LPSpec], DGPOutput]:
    """One simulated dataset plus the LP problem descriptions it implies.

    The structural shock stream is drawn first, so strict and conditional
    instrument experiments at the same seed share it and differ only in
    the instrument and informational series.
    """
    ss = np.random.SeedSequence(rep_seed) if not isinstance(
        rep_seed, np.random.SeedSequence
    ) else rep_seed
    s_shocks, s_instr, s_info = ss.spawn(3)
    out = simulate_fiscal(
        config.T, config.fiscal_params, seed=np.random.default_rng(s_shocks),
        horizon=config.horizon,
    )
    mode = "strict" if config.identification == "iv_strict" else "conditional"
    z, aux = gen_instrument(out.shocks, mode, seed=np.random.default_rng(s_instr))
    if config.identification == "iv_strict":
        s1, s2 = aux["nu1"], aux["nu2"]
    else:
        # the informational series carry the current structural shocks, so
        # their first lag controls exactly the lagged-shock contamination
        s1, s2 = out.shocks["u_tau"], out.shocks["u_a"]
    info = gen_informational(
        s1,
        s2,
        n=config.n_informational,
        noise_case=config.noise_case,
        seed=np.random.default_rng(s_info),
    )
    info_names = [f"info{i + 1:03d}" for i in range(config.n_informational)]
    panel = out.panel.with_columns(["z"], z).with_columns(info_names, info)
    lead = config.fiscal_params.foresight_lead
    specs: dict[str, LPSpec] = {}
    if config.identification == "svar":
        essentials = (("tax", 1), ("tax", 2), ("capital", 1), ("capital", 2))
        for resp in config.responses:
            specs[resp] = LPSpec(
                response=resp,
                impulse="tax",
                horizons=config.horizon,
                essential_controls=essentials,
                candidate_controls=tuple((n, 1) for n in info_names),
                identification="svar",
                svar_lead=lead,
            )
    else:
        # the instrumented variable is the accumulated future tax movement,
        # which the shock moves one-for-one on impact
        cum = make_cumulative_target(panel.column("tax"), lead)
        panel = panel.with_columns(["tax_cum"], cum)
        essentials = (
            ("tax", 1),
            ("tax", 2),
            ("capital", 1),
            ("capital", 2),
            ("z", 1),
            ("z", 2),
        )
        for resp in config.responses:
            specs[resp] = LPSpec(
                response=resp,
                impulse="tax_cum",
                horizons=config.horizon,
                instrument="z",
                essential_controls=essentials,
                candidate_controls=tuple((n, 1) for n in info_names),
                identification="iv",
            )
    return panel, specs, out


def dfm_replication_data(
    config: ExperimentConfig, rep_seed
) -> tuple[TimeSeriesPanel, dict[str, LPSpec], DGPOutput]:
    """One simulated factor-model dataset plus its LP problems.

    The impulse variable is instrumented directly; essential controls are
    lags of the impulse, the responses, and the instrument, and the first
    lag of every other observed series is a candidate.
    """
    ss = (
        np.random.SeedSequence(rep_seed)
        if not isinstance(rep_seed, np.random.SeedSequence)
        else rep_seed
    )
    s_shocks, s_instr = ss.spawn(2)
    out = simulate_dfm(
        config.T, config.dfm_params, seed=np.random.default_rng(s_shocks),
        horizon=config.horizon,
    )
    mode = "strict" if config.identification == "iv_strict" else "conditional"
    contamination = (
        make_dfm_contamination(out.shocks["factor_innovations"])
        if mode == "conditional"
        else None
    )
    z = gen_dfm_instrument(
        out.shocks["eps_mp"], mode, seed=np.random.default_rng(s_instr),
        contamination=contamination,
    )
    panel = out.panel.with_columns(["z"], z)
    impulse = config.dfm_impulse
    core = [impulse] + [r for r in config.responses if r != impulse]
    lags = range(1, config.essential_lags + 1)
    essentials = tuple((v, l) for v in core for l in lags) + tuple(
        ("z", l) for l in lags
    )
    candidates = tuple(
        (n, 1) for n in out.panel.names if n not in core
    )
    specs = {
        resp: LPSpec(
            response=resp,
            impulse=impulse,
            horizons=config.horizon,
            instrument="z",
            essential_controls=essentials,
            candidate_controls=candidates,
            identification="iv",
        )
        for resp in config.responses
    }
    return panel, specs, out


def _replication_data(config: ExperimentConfig, rep_seed):
    if config.dgp == "fiscal":
        return fiscal_replication_data(config, rep_seed)
    return dfm_replication_data(config, rep_seed)


def experiment_truth(config: ExperimentConfig) -> np.ndarray:
    """(n_responses, H+1) analytic responses the estimators are scored on.

    Factor-model truth is normalized by the impulse variable's impact
    response (the unit-impact convention of the horizon regressions).
    """
    if config.dgp == "fiscal":
        out = simulate_fiscal(
            config.T, config.fiscal_params, seed=0, horizon=config.horizon
        )
        return np.stack([out.truth[v].beta for v in config.responses])
    irf = true_dfm_irf(config.dfm_params, config.horizon)
    names = list(config.dfm_params.series_names)
    scale = irf[names.index(config.dfm_impulse), 0]
    return np.stack([irf[names.index(v)] / scale for v in config.responses])


def _run_estimator(
    est: EstimatorSettings,
    panel: TimeSeriesPanel,
    specs: Sequence[LPSpec],
    seed,
) -> np.ndarray:
    """(n_responses, H+1) coefficients for one estimator on one dataset."""
    if est.name == "base":
        return np.stack([estimate_base_lp(panel, s).beta for s in specs])
    if est.name == "falp":
        return np.stack(
            [estimate_falp(panel, s, n_factors=est.n_factors).beta for s in specs]
        )
    k = est.k
    if est.select_k:
        sel_seed, seed = np.random.SeedSequence(seed).spawn(2)
        k = select_k_by_bic(
            panel, specs[0], grid=est.k_grid, n_R=est.n_draws, seed=sel_seed
        )
    results = estimate_rslp_joint(
        panel, specs, k=k, n_R=est.n_draws, seed=seed, weighting=est.weighting
    )
    return np.stack([irf.beta for irf, _ in results])


def replicate(config: ExperimentConfig, index: int) -> np.ndarray:
    """Run one replication; (n_estimators, n_responses, H+1) with NaN rows
    for estimators that raised."""
    rep_ss = np.random.SeedSequence(config.seed).spawn(config.n_replications)[index]
    data_ss, est_ss = rep_ss.spawn(2)
    panel, spec_map, _ = _replication_data(config, data_ss)
    specs = [spec_map[r] for r in config.responses]
    est_streams = est_ss.spawn(len(config.estimators))
    H1 = config.horizon + 1
    out = np.full((len(config.estimators), len(config.responses), H1), np.nan)
    for e, est in enumerate(config.estimators):
        try:
            out[e] = _run_estimator(est, panel, specs, est_streams[e])
        except (SubspaceLPError, np.linalg.LinAlgError):
            out[e] = np.nan
    return out


@dataclass
class ScoreTable:
    """Per-estimator scores against the analytic truth."""

    estimators: list[str]
    variables: list[str]
    horizons: np.ndarray
    truth: np.ndarray  # (n_var, H+1)
    estimates: np.ndarray  # (n_rep, n_est, n_var, H+1), NaN on failure
    baseline: str
    rmse: np.ndarray = field(init=False)  # (n_est, n_var)
    rel_rmse: np.ndarray = field(init=False)
    bias: np.ndarray = field(init=False)  # (n_est, n_var, H+1)
    failures: np.ndarray = field(init=False)  # (n_est,)

    def __post_init__(self) -> None:
        n_rep, n_est, n_var, H1 = self.estimates.shape
        ok = np.isfinite(self.estimates).all(axis=(2, 3))  # (n_rep, n_est)
        self.failures = n_rep - ok.sum(axis=0)
        self.rmse = np.full((n_est, n_var), np.nan)
        self.bias = np.full((n_est, n_var, H1), np.nan)
        for e in range(n_est):
            good = self.estimates[ok[:, e], e]  # (n_ok, n_var, H1)
            if good.shape[0] == 0:
                continue
            err = good - self.truth[None]
            self.rmse[e] = np.sqrt(np.mean(err**2, axis=(0, 2)))
            self.bias[e] = np.mean(err, axis=0)
        b = self.estimators.index(self.baseline)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.rel_rmse = self.rmse / self.rmse[b][None, :]

    def rmse_of(self, estimator: str, variable: str) -> float:
        return float(
            self.rmse[self.estimators.index(estimator), self.variables.index(variable)]
        )

    def relative_rmse_of(self, estimator: str, variable: str) -> float:
        return float(
            self.rel_rmse[
                self.estimators.index(estimator), self.variables.index(variable)
            ]
        )

    def to_csv(self, path) -> None:
        """Rows are estimator:variable labels (sorted, so the file loads as
        a panel), columns the scores and per-horizon biases."""
        rows = []
        for e, est in enumerate(self.estimators):
            for v, var in enumerate(self.variables):
                label = f"{est}:{var}"
                rows.append((label, e, v))
        rows.sort(key=lambda r: r[0])
        headers = ["case", "rmse", "rel_rmse"] + [f"bias_h{h}" for h in self.horizons]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(headers) + "\n")
            for label, e, v in rows:
                vals = [self.rmse[e, v], self.rel_rmse[e, v]] + list(self.bias[e, v])
                fh.write(label + "," + ",".join(f"{x:.17e}" for x in vals) + "\n")

    def to_json(self, path) -> None:
        payload = {
            "estimators": self.estimators,
            "variables": self.variables,
            "horizons": self.horizons.tolist(),
            "rmse": self.rmse.tolist(),
            "rel_rmse": self.rel_rmse.tolist(),
            "bias": self.bias.tolist(),
            "failures": self.failures.tolist(),
            "baseline": self.baseline,
            "n_replications": int(self.estimates.shape[0]),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)


def _pinned(fn, index: int):
    with threadpool_limits(limits=1):
        return fn(index)


def _parallel_map(fn, indices: Sequence[int], n_workers: int):
    """Order-preserving map over replication indices.

    Tasks pin BLAS to one thread and results are gathered by index, so the
    output is bit-identical for every worker count. Workers are separate
    processes; ``fn`` must be picklable and a pure function of the index.
    """
    if n_workers <= 1:
        return [_pinned(fn, i) for i in indices]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(partial(_pinned, fn), indices, chunksize=4))


def run_experiment(config: ExperimentConfig, n_workers: int = 1) -> ScoreTable:
    """Replicate the configured experiment and score every estimator."""
    truth = experiment_truth(config)
    results = _parallel_map(
        partial(replicate, config), range(config.n_replications), n_workers
    )
    estimates = np.stack(results)
    return ScoreTable(
        estimators=[e.name for e in config.estimators],
        variables=list(config.responses),
        horizons=np.arange(config.horizon + 1),
        truth=truth,
        estimates=estimates,
        baseline=config.baseline,
    )


def _sweep_replicate(
    config: ExperimentConfig,
    ks: list[int],
    n_draws: int,
    weighting: str,
    index: int,
) -> np.ndarray:
    """One sweep replication: base estimate plus the subspace estimate at
    each grid dimension (base echoed at k = 0), sharing the panel."""
    rep_ss = np.random.SeedSequence(config.seed).spawn(config.n_replications)[index]
    data_ss, est_ss = rep_ss.spawn(2)
    panel, spec_map, _ = _replication_data(config, data_ss)
    specs = [spec_map[r] for r in config.responses]
    streams = est_ss.spawn(len(ks))
    n_var = len(config.responses)
    out = np.full((len(ks) + 1, n_var, config.horizon + 1), np.nan)
    try:
        for v in range(n_var):
            out[-1, v] = estimate_base_lp(panel, specs[v]).beta
        for j, k in enumerate(ks):
            if k == 0:
                out[j] = out[-1]
                continue
            results = estimate_rslp_joint(
                panel, specs, k=k, n_R=n_draws, seed=streams[j], weighting=weighting
            )
            for v, (irf, _) in enumerate(results):
                out[j, v] = irf.beta
    except (SubspaceLPError, np.linalg.LinAlgError):
        out[:] = np.nan
    return out


@dataclass
class SweepResult:
    """Relative-RMSE curves over the subspace-dimension grid."""

    k_grid: list[int]
    variables: list[str]
    rel_rmse: np.ndarray  # (n_k, n_var): RMSE(RSLP_k) / RMSE(base)
    rmse: np.ndarray
    base_rmse: np.ndarray
    failures: int

    def minimizing_k(self, variable: str) -> int:
        v = self.variables.index(variable)
        return int(self.k_grid[int(np.argmin(self.rel_rmse[:, v]))])

    def to_csv(self, path) -> None:
        headers = ["k"] + [f"rel_rmse_{v}" for v in self.variables]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(headers) + "\n")
            for i, k in enumerate(self.k_grid):
                vals = ",".join(f"{x:.17e}" for x in self.rel_rmse[i])
                fh.write(f"{k},{vals}\n")


def sweep_subspace_dimension(
    config: ExperimentConfig,
    k_grid: Sequence[int] = (0, 10, 20, 30, 40, 50, 60),
    n_workers: int = 1,
    n_draws: int = 200,
    weighting: str = "equal",
) -> SweepResult:
    """Relative RMSE of the subspace estimator against the base LP for each
    grid dimension, sharing the simulated panels across grid points.

    k = 0 reuses the base estimate itself, so its ratio is exactly one.
    """
    ks = sorted({int(k) for k in k_grid})
    if not ks:
        raise InvalidDimension("empty subspace-dimension grid")
    results = np.stack(
        _parallel_map(
            partial(_sweep_replicate, config, ks, n_draws, weighting),
            range(config.n_replications),
            n_workers,
        )
    )  # (n_rep, n_k + 1, n_var, H1)
    truth = experiment_truth(config)
    ok = np.isfinite(results).all(axis=(1, 2, 3))
    good = results[ok]
    err = good - truth[None, None]
    rmse_all = np.sqrt(np.mean(err**2, axis=(0, 3)))  # (n_k + 1, n_var)
    base = rmse_all[-1]
    rmse_k = rmse_all[:-1]
    rel = rmse_k / base[None, :]
    rel[np.array(ks) == 0] = 1.0  # identical estimates by construction
    return SweepResult(
        k_grid=ks,
        variables=list(config.responses),
        rel_rmse=rel,
        rmse=rmse_k,
        base_rmse=base,
        failures=int((~ok).sum()),
    )
