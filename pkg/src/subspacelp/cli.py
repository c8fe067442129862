"""Command-line entry point.

Subcommands: estimate, simulate, experiment, sweep, factor-structure.
Configuration lives in an INI file (flat keys plus estimator subsections);
command-line flags override file values. Every run writes its outputs plus
a manifest.json capturing the fully resolved configuration, the seed, the
tool version, and digests of the input files, so identical manifests imply
byte-identical outputs. Exit codes: 0 ok, 2 configuration error, 3 runtime
error.
"""
from __future__ import annotations

import argparse
import configparser
import fnmatch
import hashlib
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .data import apply_tcodes, factor_structure_report, load_csv
from .dgp import (
    FiscalParams,
    dfm_params_from_json,
    gen_informational,
    gen_instrument,
    make_default_dfm_params,
    simulate_dfm,
    simulate_fiscal,
)
from .errors import ConfigError, SubspaceLPError
from .inference import (
    BootstrapConfig,
    block_bootstrap_bands,
    buckland_bands,
    rslp_newey_west_variances,
)
from .lp import (
    LPSpec,
    estimate_rslp,
    falp_problem,
    make_cumulative_target,
    select_k_by_bic,
)
from .mc import (
    EstimatorSettings,
    ExperimentConfig,
    run_experiment,
    sweep_subspace_dimension,
)

_FMT = "{:.17e}"


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------


def _read_ini(path: str | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config: file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from exc
    return {s: dict(parser.items(s)) for s in parser.sections()}


class _Conf:
    def __init__(self, sections: dict[str, dict[str, str]]):
        self.sections = sections

    def get(self, section: str, key: str, default=None, cast=str):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            if cast is bool:
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return low in ("true", "1", "yes")
            return cast(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None

    def require(self, section: str, key: str, cast=str):
        if self.sections.get(section, {}).get(key) is None:
            raise ConfigError(f"missing required key [{section}] {key}")
        return self.get(section, key, cast=cast)


def _parse_pairs(text: str, panel_names: list[str]) -> tuple[tuple[str, int], ...]:
    """'tax:1 cap*:2' -> ((var, lag), ...) with glob expansion on names."""
    out: list[tuple[str, int]] = []
    for token in text.split():
        if ":" in token:
            name, lag_s = token.rsplit(":", 1)
            try:
                lag = int(lag_s)
            except ValueError:
                raise ConfigError(f"bad control token {token!r}") from None
        else:
            name, lag = token, 0
        if any(ch in name for ch in "*?["):
            matches = [n for n in panel_names if fnmatch.fnmatch(n, name)]
            if not matches:
                raise ConfigError(f"control pattern {name!r} matches nothing")
            out.extend((m, lag) for m in matches)
        else:
            out.append((name, lag))
    return tuple(out)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, resolved: dict, inputs: list[str]) -> None:
    digests = {}
    for p in inputs:
        path = Path(p)
        if path.exists():
            digests[str(p)] = _sha256(path)
    payload = {
        "command": command,
        "config": resolved,
        "version": __version__,
        "input_digests": digests,
    }
    (out_dir / "manifest.json").write_text(json.dumps(payload, indent=1, sort_keys=True))


def _write_table(path: Path, headers: list[str], columns: list) -> None:
    """Locale-independent CSV, full double precision, blanks for None/NaN."""
    n = len(columns[0])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(headers) + "\n")
        for i in range(n):
            cells = []
            for col in columns:
                v = col[i]
                if v is None or (isinstance(v, float) and not np.isfinite(v)):
                    cells.append("")
                elif isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                elif isinstance(v, float):
                    cells.append(_FMT.format(v))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    conf = _Conf(_read_ini(args.config))
    panel_path = conf.require("data", "panel")
    panel = load_csv(panel_path)
    if conf.get("data", "apply_tcodes", default=False, cast=bool):
        panel = apply_tcodes(panel)

    names = panel.names
    ident = conf.get("spec", "identification", default="observed")
    spec = LPSpec(
        response=conf.require("spec", "response"),
        impulse=conf.require("spec", "impulse"),
        horizons=conf.get("spec", "horizons", default=6, cast=int),
        instrument=conf.get("spec", "instrument", default=None),
        essential_controls=_parse_pairs(conf.get("spec", "essential", default=""), names),
        candidate_controls=_parse_pairs(conf.get("spec", "candidates", default=""), names),
        identification=ident,
        response_transform=conf.get("spec", "response_transform", default="lead"),
        svar_lead=conf.get("spec", "svar_lead", default=None, cast=int),
        svar_first_stage_essentials=(
            _parse_pairs(conf.get("spec", "svar_first_stage_essential"), names)
            if conf.get("spec", "svar_first_stage_essential") is not None
            else None
        ),
        svar_first_stage_candidate_lag=conf.get(
            "spec", "svar_first_stage_candidate_lag", default=0, cast=int
        ),
    )

    name = args.estimator or conf.get("estimator", "name", default="rslp")
    if name not in ("base", "rslp", "falp"):
        raise ConfigError(f"bad value for [estimator] name: {name!r}")
    k = args.k if args.k is not None else conf.get("estimator", "k", default=50, cast=int)
    n_draws = (
        args.n_draws
        if args.n_draws is not None
        else conf.get("estimator", "n_draws", default=1000, cast=int)
    )
    weighting = args.weighting or conf.get("estimator", "weighting", default="equal")
    select_k = args.select_k or conf.get("estimator", "select_k", default=False, cast=bool)
    seed = args.seed if args.seed is not None else conf.get("estimator", "seed", default=0, cast=int)
    band_method = args.bands or conf.get("bands", "method", default="none")
    if band_method not in ("none", "bootstrap", "buckland"):
        raise ConfigError(f"bad value for [bands] method: {band_method!r}")

    seeds = np.random.SeedSequence(seed).spawn(3)
    est_panel, est_spec = panel, spec
    if name == "falp":
        est_panel, est_spec = falp_problem(
            panel, spec, conf.get("estimator", "n_factors", default=2, cast=int)
        )
    if name == "rslp":
        if select_k:
            grid = tuple(
                int(t)
                for t in conf.get("estimator", "k_grid", default="0 10 20 30 40 50 60").split()
            )
            k = select_k_by_bic(est_panel, est_spec, grid=grid, n_R=n_draws, seed=seeds[0])
        irf, ens = estimate_rslp(
            est_panel, est_spec, k=k, n_R=n_draws, seed=seeds[1], weighting=weighting
        )
    else:
        irf, ens = estimate_rslp(est_panel, est_spec, k=0, n_R=1, seed=seeds[1])
        irf.meta["estimator"] = name

    lower = upper = [None] * irf.horizons.size
    level = conf.get("bands", "level", default=0.90, cast=float)
    if band_method == "bootstrap":
        cfg = BootstrapConfig(
            n_boot=conf.get("bands", "n_boot", default=500, cast=int),
            seed=seeds[2],
            nominal_level=level,
        )
        lo, up = block_bootstrap_bands(est_panel, est_spec, ens, cfg)
        lower, upper = list(lo), list(up)
    elif band_method == "buckland":
        nw = rslp_newey_west_variances(est_panel, est_spec, ens)
        lo, up = buckland_bands(ens, nw, nominal_level=level)
        lower, upper = list(lo), list(up)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_table(
        out_dir / "irf.csv",
        ["horizon", "estimate", "lower", "upper"],
        [list(irf.horizons), list(irf.beta), lower, upper],
    )
    resolved = {
        "estimator": name,
        "k": int(k),
        "n_draws": int(n_draws),
        "weighting": weighting,
        "select_k": bool(select_k),
        "seed": int(seed),
        "bands": band_method,
        "level": level,
        "spec": {
            "response": spec.response,
            "impulse": spec.impulse,
            "identification": spec.identification,
            "horizons": list(spec.horizons),
            "instrument": spec.instrument,
            "essential": list(map(list, spec.essential_controls)),
            "n_candidates": spec.n_candidates,
        },
        "panel": str(panel_path),
    }
    _write_manifest(out_dir, "estimate", resolved, [panel_path] + ([args.config] if args.config else []))
    return 0


def cmd_simulate(args) -> int:
    conf = _Conf(_read_ini(args.config))
    kind = conf.get("dgp", "kind", default="fiscal")
    T = conf.get("dgp", "t", default=200, cast=int)
    horizon = conf.get("dgp", "horizon", default=6, cast=int)
    seed = args.seed if args.seed is not None else conf.get("dgp", "seed", default=0, cast=int)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [args.config] if args.config else []

    if kind == "fiscal":
        params = FiscalParams(
            theta=conf.get("dgp", "theta", default=0.2673, cast=float),
            tau=conf.get("dgp", "tau", default=0.25, cast=float),
            alpha=conf.get("dgp", "alpha", default=0.36, cast=float),
            noise_case=conf.get("dgp", "noise_case", default="strong"),
        )
        seeds = np.random.SeedSequence(seed).spawn(3)
        out = simulate_fiscal(T, params, seed=np.random.default_rng(seeds[0]), horizon=horizon)
        panel = out.panel
        mode = conf.get("dgp", "instrument", default="strict")
        if mode != "none":
            z, aux = gen_instrument(out.shocks, mode, seed=np.random.default_rng(seeds[1]))
            panel = panel.with_columns(["z"], z)
            # derived accumulated-impulse column so the panel feeds the
            # estimate command's IV configuration directly
            panel = panel.with_columns(
                ["tax_cum"], make_cumulative_target(panel.column("tax"), 2)
            )
            n_info = conf.get("dgp", "informational", default=100, cast=int)
            if n_info > 0:
                if mode == "strict":
                    s1, s2 = aux["nu1"], aux["nu2"]
                else:
                    s1, s2 = out.shocks["u_tau"], out.shocks["u_a"]
                info = gen_informational(
                    s1, s2, n=n_info, noise_case=params.noise_case,
                    seed=np.random.default_rng(seeds[2]),
                )
                panel = panel.with_columns(
                    [f"info{i + 1:03d}" for i in range(n_info)], info
                )
        truth = out.truth
        resolved = {
            "kind": kind, "T": T, "horizon": horizon, "seed": int(seed),
            "instrument": mode, "noise_case": params.noise_case,
            "theta": params.theta, "tau": params.tau, "alpha": params.alpha,
        }
    elif kind == "dfm":
        params_file = conf.get("dgp", "params_file", default=None)
        if params_file:
            params = dfm_params_from_json(params_file)
            inputs.append(params_file)
        else:
            params = make_default_dfm_params(
                n_series=conf.get("dgp", "n_series", default=20, cast=int)
            )
        out = simulate_dfm(T, params, seed=np.random.default_rng(seed), horizon=horizon)
        panel, truth = out.panel, out.truth
        resolved = {"kind": kind, "T": T, "horizon": horizon, "seed": int(seed)}
    else:
        raise ConfigError(f"bad value for [dgp] kind: {kind!r}")

    headers = ["date"] + panel.names
    cols = [panel.dates] + [list(panel.values[:, j]) for j in range(panel.n_series)]
    _write_table(out_dir / "panel.csv", headers, cols)
    tnames = list(truth)
    _write_table(
        out_dir / "truth.csv",
        ["horizon"] + tnames,
        [list(truth[tnames[0]].horizons)] + [list(truth[nm].beta) for nm in tnames],
    )
    _write_manifest(out_dir, "simulate", resolved, inputs)
    return 0


def _experiment_config(conf: _Conf, args) -> ExperimentConfig:
    names = conf.get("experiment", "estimators", default="rslp base").split()
    ests = []
    for nm in names:
        sec = nm if nm in conf.sections else "estimator"
        ests.append(
            EstimatorSettings(
                name=nm,
                k=args.k if args.k is not None else conf.get(sec, "k", default=50, cast=int),
                n_draws=(
                    args.n_draws
                    if args.n_draws is not None
                    else conf.get(sec, "n_draws", default=500, cast=int)
                ),
                weighting=args.weighting or conf.get(sec, "weighting", default="equal"),
                n_factors=conf.get(sec, "n_factors", default=2, cast=int),
                select_k=args.select_k or conf.get(sec, "select_k", default=False, cast=bool),
            )
        )
    seed = args.seed if args.seed is not None else conf.get("experiment", "seed", default=0, cast=int)
    dgp = conf.get("experiment", "dgp", default="fiscal")
    dfm_params = None
    if dgp == "dfm":
        params_file = conf.get("experiment", "params_file", default=None)
        dfm_params = (
            dfm_params_from_json(params_file)
            if params_file
            else make_default_dfm_params(
                n_series=conf.get("experiment", "n_series", default=20, cast=int)
            )
        )
    return ExperimentConfig(
        identification=conf.get("experiment", "identification", default="iv_strict"),
        noise_case=conf.get("experiment", "noise_case", default="strong"),
        T=conf.get("experiment", "t", default=200, cast=int),
        n_replications=conf.get("experiment", "replications", default=200, cast=int),
        horizon=conf.get("experiment", "horizon", default=6, cast=int),
        seed=seed,
        n_informational=conf.get("experiment", "informational", default=100, cast=int),
        dgp=dgp,
        dfm_params=dfm_params,
        dfm_impulse=conf.get("experiment", "impulse", default=None),
        estimators=tuple(ests),
        baseline=conf.get("experiment", "baseline", default="rslp"),
    )


def cmd_experiment(args) -> int:
    conf = _Conf(_read_ini(args.config))
    config = _experiment_config(conf, args)
    table = run_experiment(config, n_workers=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "scores.csv")
    table.to_json(out_dir / "scores.json")
    resolved = {
        "identification": config.identification,
        "noise_case": config.noise_case,
        "T": config.T,
        "replications": config.n_replications,
        "horizon": config.horizon,
        "seed": config.seed,
        "estimators": [vars(e) | {"k_grid": list(e.k_grid)} for e in config.estimators],
        "baseline": config.baseline,
        "failures": {n: int(f) for n, f in zip(table.estimators, table.failures)},
    }
    _write_manifest(out_dir, "experiment", resolved, [args.config] if args.config else [])
    if int(table.failures.min()) >= config.n_replications:
        print("all replications failed", file=sys.stderr)
        return 3
    for nm, f in zip(table.estimators, table.failures):
        if f:
            print(f"note: {f} failed replication(s) for {nm}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    conf = _Conf(_read_ini(args.config))
    config = _experiment_config(conf, args)
    grid = tuple(
        int(t) for t in conf.get("sweep", "k_grid", default="0 10 20 30 40 50 60").split()
    )
    n_draws = args.n_draws if args.n_draws is not None else conf.get(
        "sweep", "n_draws", default=200, cast=int
    )
    result = sweep_subspace_dimension(
        config, k_grid=grid, n_workers=args.threads, n_draws=n_draws
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.to_csv(out_dir / "sweep.csv")
    resolved = {
        "identification": config.identification,
        "noise_case": config.noise_case,
        "T": config.T,
        "replications": config.n_replications,
        "seed": config.seed,
        "k_grid": list(grid),
        "n_draws": int(n_draws),
        "failures": result.failures,
    }
    _write_manifest(out_dir, "sweep", resolved, [args.config] if args.config else [])
    return 0


def cmd_factor_structure(args) -> int:
    panel = load_csv(args.panel)
    m = args.max_components
    cap = min(panel.n_obs, panel.n_series)
    if m > cap:
        warnings.warn(f"max components {m} clamped to {cap}", UserWarning, stacklevel=1)
        m = cap
    comps, cum = factor_structure_report(panel, m)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_table(
        out_dir / "factor_structure.csv",
        ["component", "cumulative_share"],
        [list(comps), list(cum)],
    )
    _write_manifest(
        out_dir,
        "factor-structure",
        {"panel": str(args.panel), "max_components": int(m)},
        [args.panel],
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subspacelp",
        description="Impulse responses by random-subspace local projections.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-dir", default=".", help="directory for result files")

    p_est = sub.add_parser("estimate", help="estimate an IRF from a panel CSV")
    common(p_est, config_required=True)
    p_est.add_argument("--estimator", choices=["base", "rslp", "falp"], default=None)
    p_est.add_argument("--k", type=int, default=None)
    p_est.add_argument("--n-draws", type=int, default=None)
    p_est.add_argument("--bands", choices=["none", "bootstrap", "buckland"], default=None)
    p_est.add_argument("--weighting", choices=["equal", "bic"], default=None)
    p_est.add_argument("--select-k", action="store_true", default=False)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="simulate a DGP to panel/truth CSVs")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_exp = sub.add_parser("experiment", help="replicated estimator comparison")
    common(p_exp)
    p_exp.add_argument("--k", type=int, default=None)
    p_exp.add_argument("--n-draws", type=int, default=None)
    p_exp.add_argument("--weighting", choices=["equal", "bic"], default=None)
    p_exp.add_argument("--select-k", action="store_true", default=False)
    p_exp.set_defaults(func=cmd_experiment)

    p_swp = sub.add_parser("sweep", help="relative RMSE over subspace dimensions")
    common(p_swp)
    p_swp.add_argument("--k", type=int, default=None)
    p_swp.add_argument("--n-draws", type=int, default=None)
    p_swp.add_argument("--weighting", choices=["equal", "bic"], default=None)
    p_swp.add_argument("--select-k", action="store_true", default=False)
    p_swp.set_defaults(func=cmd_sweep)

    p_fs = sub.add_parser("factor-structure", help="cumulative PC variance curve")
    common(p_fs)
    p_fs.add_argument("--panel", required=True, help="panel CSV")
    p_fs.add_argument("--max-components", type=int, default=10)
    p_fs.set_defaults(func=cmd_factor_structure)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SubspaceLPError, np.linalg.LinAlgError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
