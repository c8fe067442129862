import math
import warnings

import numpy as np
import pytest

from subspacelp.data import TimeSeriesPanel, build_design
from subspacelp.errors import EmptyGrid, InsufficientSample, InvalidDimension, UndefinedBIC
from subspacelp.linreg import RegressionFit, ols
from subspacelp.lp import (
    LPSpec,
    bic_softmax_weights,
    estimate_base_lp,
    estimate_falp,
    estimate_lp_iv,
    estimate_lp_svar,
    estimate_rslp,
    estimate_rslp_joint,
    first_stage_bic,
    make_cumulative_target,
    normalize_unit_response,
    select_k_by_bic,
)
from subspacelp.subspace import CategoryLayout, SelectionDraw, draw_uniform


def make_panel(values, names):
    T = np.asarray(values).shape[0]
    return TimeSeriesPanel(values, names, [f"t{i:04d}" for i in range(T)])


def noise_panel(T, n_cand, seed, beta=1.0):
    """Observed-shock panel: y depends on x only, candidates are noise."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(T)
    y = beta * x + rng.standard_normal(T)
    G = rng.standard_normal((T, n_cand))
    panel = make_panel(
        np.column_stack([y, x, G]), ["y", "x"] + [f"g{i}" for i in range(n_cand)]
    )
    spec = LPSpec(
        response="y",
        impulse="x",
        horizons=3,
        essential_controls=(("y", 1),),
        candidate_controls=tuple((f"g{i}", 1) for i in range(n_cand)),
    )
    return panel, spec


# --- cumulative target -------------------------------------------------------


def test_cumulative_target_zero_series():
    out = make_cumulative_target(np.zeros(20), 2)
    assert np.all(out[1:-2] == 0.0)
    assert np.isnan(out[0]) and np.isnan(out[-2:]).all()


def test_cumulative_target_unit_impulse():
    s = np.zeros(20)
    t0 = 9
    s[t0] = 1.0
    out = make_cumulative_target(s, 2)
    valid = ~np.isnan(out)
    expect = np.zeros(20)
    expect[[t0 - 2, t0 - 1, t0]] = 1.0
    np.testing.assert_array_equal(out[valid], expect[valid])


def test_cumulative_target_constant():
    out = make_cumulative_target(np.full(15, 2.5), 2)
    np.testing.assert_allclose(out[1:-2], 7.5)


def test_cumulative_target_direct_sum_oracle():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(40)
    ell = 3
    out = make_cumulative_target(s, ell)
    for t in range(1, 40 - ell):
        assert out[t] == pytest.approx(s[t : t + ell + 1].sum(), rel=1e-12)


def test_cumulative_target_errors():
    with pytest.raises(InvalidDimension):
        make_cumulative_target(np.ones(10), 0)
    with pytest.raises(InsufficientSample):
        make_cumulative_target(np.ones(3), 2)


# --- base LP -----------------------------------------------------------------


def test_base_lp_recovers_shifted_impulse_exactly():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(200)
    y = np.roll(x, 2)  # y_t = x_{t-2}, so y_{t+2} = x_t
    y[:2] = rng.standard_normal(2)
    panel = make_panel(np.column_stack([y, x]), ["y", "x"])
    spec = LPSpec(response="y", impulse="x", horizons=4)
    irf = estimate_base_lp(panel, spec)
    assert irf.beta[2] == pytest.approx(1.0, abs=1e-10)


def test_base_lp_white_noise_null():
    reps = 60
    betas = np.empty((reps, 3))
    for i in range(reps):
        rng = np.random.default_rng(100 + i)
        vals = rng.standard_normal((150, 2))
        panel = make_panel(vals, ["y", "x"])
        spec = LPSpec(response="y", impulse="x", horizons=2)
        betas[i] = estimate_base_lp(panel, spec).beta
    mean = betas.mean(axis=0)
    se = betas.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(mean) < 3 * se + 1e-3)


def test_base_lp_insufficient_sample():
    panel, spec = noise_panel(20, 0, seed=2)
    spec = LPSpec(
        response="y", impulse="x", horizons=15, essential_controls=(("y", 1),)
    )
    with pytest.raises(InsufficientSample):
        estimate_base_lp(panel, spec)


# --- subspace ensemble --------------------------------------------------------


def test_rslp_full_subset_equals_full_control_lp():
    panel, spec = noise_panel(300, 6, seed=3)
    irf, ens = estimate_rslp(panel, spec, k=6, n_R=5, seed=0)
    full_spec = LPSpec(
        response="y",
        impulse="x",
        horizons=spec.horizons,
        essential_controls=spec.essential_controls + spec.candidate_controls,
    )
    full = estimate_base_lp(panel, full_spec)
    np.testing.assert_allclose(irf.beta, full.beta, rtol=1e-12, atol=1e-12)


def test_rslp_empty_candidates_equals_base():
    panel, spec = noise_panel(250, 0, seed=4)
    irf, _ = estimate_rslp(panel, spec, k=0, n_R=7, seed=0)
    base = estimate_base_lp(panel, spec)
    np.testing.assert_allclose(irf.beta, base.beta, rtol=1e-12, atol=1e-14)


def test_rslp_k_zero_with_candidates_equals_base():
    panel, spec = noise_panel(250, 8, seed=5)
    irf, _ = estimate_rslp(panel, spec, k=0, n_R=4, seed=0)
    base = estimate_base_lp(panel, spec)
    np.testing.assert_allclose(irf.beta, base.beta, rtol=1e-12, atol=1e-14)


def test_rslp_full_enumeration_oracle():
    # independent oracle: average over all C(6,2) subsets via build_design + ols
    panel, spec = noise_panel(260, 6, seed=6)
    from itertools import combinations

    subsets = [
        SelectionDraw(np.array(c, dtype=np.intp), 6) for c in combinations(range(6), 2)
    ]
    irf, ens = estimate_rslp(panel, spec, n_R=len(subsets), seed=0, draws=subsets)
    oracle = np.zeros(len(spec.horizons))
    for d in subsets:
        for hp, h in enumerate(spec.horizons):
            arrays = build_design(panel, spec, h, d)
            fit = ols(
                np.column_stack([arrays.impulse, arrays.controls]), arrays.response
            )
            oracle[hp] += fit.coefficients[1]
    oracle /= len(subsets)
    np.testing.assert_allclose(irf.beta, oracle, rtol=1e-12, atol=1e-12)


def test_rslp_seed_determinism():
    panel, spec = noise_panel(220, 12, seed=7)
    a, ens_a = estimate_rslp(panel, spec, k=5, n_R=40, seed=99)
    b, ens_b = estimate_rslp(panel, spec, k=5, n_R=40, seed=99)
    assert np.array_equal(a.beta, b.beta)
    assert np.array_equal(ens_a.betas, ens_b.betas)
    c, _ = estimate_rslp(panel, spec, k=5, n_R=40, seed=100)
    assert not np.array_equal(a.beta, c.beta)


def test_rslp_ensemble_mean_identity():
    panel, spec = noise_panel(220, 10, seed=8)
    irf, ens = estimate_rslp(panel, spec, k=4, n_R=25, seed=1)
    np.testing.assert_allclose(irf.beta, ens.betas.mean(axis=0), rtol=1e-12, atol=1e-14)
    assert ens.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_rslp_clamps_oversized_k():
    panel, spec = noise_panel(220, 4, seed=9)
    with pytest.warns(UserWarning, match="clamping"):
        big, _ = estimate_rslp(panel, spec, k=9, n_R=6, seed=3)
    exact, _ = estimate_rslp(panel, spec, k=4, n_R=6, seed=3)
    assert np.array_equal(big.beta, exact.beta)


def test_rslp_bic_weighting_degenerates_to_equal():
    # empty candidate set: every draw is identical, so all BICs agree
    panel, spec = noise_panel(250, 0, seed=10)
    eq, _ = estimate_rslp(panel, spec, k=0, n_R=6, seed=0, weighting="equal")
    bw, ens = estimate_rslp(panel, spec, k=0, n_R=6, seed=0, weighting="bic")
    assert np.array_equal(eq.beta, bw.beta)
    np.testing.assert_allclose(ens.weights, np.full(6, 1 / 6), atol=1e-15)


def test_rslp_bic_weighting_downweights_poor_first_stage():
    panel, spec = noise_panel(300, 8, seed=11)
    irf, ens = estimate_rslp(panel, spec, k=3, n_R=30, seed=2, weighting="bic")
    w = ens.weights
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(w) == np.argmin(ens.first_stage_bics)
    # weights are monotone decreasing in the BIC
    by_bic = w[np.argsort(ens.first_stage_bics)]
    assert np.all(np.diff(by_bic) <= 1e-15)


def test_rslp_joint_matches_separate():
    rng = np.random.default_rng(12)
    T = 260
    x = rng.standard_normal(T)
    y1 = x + rng.standard_normal(T)
    y2 = -0.5 * x + rng.standard_normal(T)
    G = rng.standard_normal((T, 6))
    panel = make_panel(
        np.column_stack([y1, y2, x, G]),
        ["y1", "y2", "x"] + [f"g{i}" for i in range(6)],
    )

    def spec(resp):
        return LPSpec(
            response=resp,
            impulse="x",
            horizons=2,
            candidate_controls=tuple((f"g{i}", 1) for i in range(6)),
        )

    joint = estimate_rslp_joint(panel, [spec("y1"), spec("y2")], k=3, n_R=20, seed=5)
    for (irf_j, _), resp in zip(joint, ["y1", "y2"]):
        sep, _ = estimate_rslp(panel, spec(resp), k=3, n_R=20, seed=5)
        np.testing.assert_allclose(irf_j.beta, sep.beta, rtol=1e-12, atol=1e-14)


def test_rslp_category_layout():
    panel, spec = noise_panel(300, 10, seed=13)
    layout = CategoryLayout(["a", "b"], [4, 6], [2, 3])
    irf, ens = estimate_rslp(panel, spec, n_R=15, seed=4, category_layout=layout)
    for d in ens.draws:
        assert d.k == 5
        assert int((d.indices < 4).sum()) == 2
    assert np.isfinite(irf.beta).all()


def test_rslp_per_draw_listwise_on_unbalanced_candidates():
    # one candidate has an interior hole: the batched path must yield to the
    # per-draw path, and draws avoiding the hole keep more rows
    panel, spec = noise_panel(200, 3, seed=14)
    values = panel.values.copy()
    values[100, 2] = np.nan  # g0 column
    holed = TimeSeriesPanel(values, panel.names, panel.dates)
    from subspacelp.lp import _Workspace, _single_draw_fits

    ws = _Workspace(holed, [spec])
    assert not ws.uniform_candidates
    _, _, fits_with = _single_draw_fits(ws, SelectionDraw(np.array([0]), 3))
    _, _, fits_without = _single_draw_fits(ws, SelectionDraw(np.array([1]), 3))
    assert fits_without[0].n_obs == fits_with[0].n_obs + 1
    irf, _ = estimate_rslp(holed, spec, k=1, n_R=6, seed=0)
    assert np.isfinite(irf.beta).all()


# --- IV and SVAR single-draw estimators ---------------------------------------


def _iv_panel(T, seed, p_g=4):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(T)
    z = e + 0.3 * rng.standard_normal(T)
    x = e + 0.5 * rng.standard_normal(T)
    y = 1.5 * x + rng.standard_normal(T)
    G = rng.standard_normal((T, p_g))
    panel = make_panel(
        np.column_stack([y, x, z, G]), ["y", "x", "z"] + [f"g{i}" for i in range(p_g)]
    )
    spec = LPSpec(
        response="y",
        impulse="x",
        horizons=2,
        instrument="z",
        essential_controls=(("y", 1),),
        candidate_controls=tuple((f"g{i}", 1) for i in range(p_g)),
        identification="iv",
    )
    return panel, spec


def test_lp_iv_perfect_instrument_equals_ols_lp():
    panel, spec = _iv_panel(300, seed=15)
    vals = panel.values.copy()
    vals[:, 2] = vals[:, 1]  # z := x
    panel = TimeSeriesPanel(vals, panel.names, panel.dates)
    draw = SelectionDraw(np.array([0, 2]), 4)
    betas, first = estimate_lp_iv(panel, spec, draw)
    ols_spec = LPSpec(
        response="y",
        impulse="x",
        horizons=2,
        instrument="z",
        essential_controls=spec.essential_controls,
        candidate_controls=spec.candidate_controls,
        identification="observed",
    )
    # same rows: the observed-shock run keeps z in the workspace mask
    from subspacelp.lp import _Workspace, _single_draw_fits

    ws = _Workspace(panel, [ols_spec])
    betas_ols, _, _ = _single_draw_fits(ws, draw)
    np.testing.assert_allclose(betas, betas_ols, atol=1e-10)
    assert first is not None and first.n_obs > 0


def test_lp_iv_first_stage_horizon_invariant():
    panel, spec = _iv_panel(250, seed=16)
    draw = SelectionDraw(np.array([1]), 4)
    betas, first = estimate_lp_iv(panel, spec, draw)
    assert betas.shape == (3,)
    # first stage regressors: intercept, z, essentials, selected candidate
    assert first.n_params == 1 + 1 + 1 + 1


def test_lp_svar_shock_series_oracle():
    rng = np.random.default_rng(17)
    T = 2000
    s = rng.standard_normal(T)
    y = np.roll(s, 1) * 2.0 + rng.standard_normal(T) * 0.1
    y[0] = 0.0
    panel = make_panel(np.column_stack([y, s]), ["y", "s"])
    spec = LPSpec(
        response="y",
        impulse="s",
        horizons=2,
        identification="svar",
        svar_lead=2,
        svar_first_stage_essentials=(("s", 0),),
    )
    draw = SelectionDraw(np.empty(0, dtype=np.intp), 0)
    betas, first = estimate_lp_svar(panel, spec, draw)
    lam = first.coefficients[1]  # first stage is the identity up to scale
    assert lam == pytest.approx(1.0, abs=5 * T**-0.5 * 3)
    # exact mechanical oracle: second stage on an affine transform of s
    from subspacelp.lp import _Workspace

    ws = _Workspace(panel, [spec])
    rows1 = ws.rows_stage1()
    for hp, h in enumerate(spec.horizons):
        rows = np.flatnonzero(ws.mask1 & ws.y_masks[0, hp])
        direct = ols(s[rows][:, None], y[rows + h] if False else ws.y[0, hp][rows])
        assert betas[hp] * lam == pytest.approx(direct.coefficients[1], rel=1e-8)
    assert rows1.size == T - 3


# --- BIC ----------------------------------------------------------------------


def _fit_with_ssr(ssr, n_obs):
    return RegressionFit(
        coefficients=np.zeros(2),
        residuals=np.zeros(n_obs),
        fitted=np.zeros(n_obs),
        ssr=ssr,
        n_obs=n_obs,
        n_params=2,
    )


def test_first_stage_bic_formula():
    bic = first_stage_bic(_fit_with_ssr(100.0, 100), k=10, p_V=4)
    assert bic == pytest.approx(math.log(100) * 16, rel=1e-12)


def test_first_stage_bic_penalty_arithmetic():
    b1 = first_stage_bic(_fit_with_ssr(37.0, 200), k=5, p_V=3)
    b2 = first_stage_bic(_fit_with_ssr(37.0, 200), k=15, p_V=3)
    assert b2 - b1 == pytest.approx(10 * math.log(200), rel=1e-12)


def test_first_stage_bic_ssr_halved():
    b1 = first_stage_bic(_fit_with_ssr(80.0, 150), k=5, p_V=3)
    b2 = first_stage_bic(_fit_with_ssr(40.0, 150), k=5, p_V=3)
    assert b1 - b2 == pytest.approx(150 * math.log(2), rel=1e-12)


def test_first_stage_bic_perfect_fit_sentinel():
    with pytest.warns(UndefinedBIC):
        assert first_stage_bic(_fit_with_ssr(0.0, 50), k=1, p_V=1) == -math.inf


def test_bic_softmax_weights():
    np.testing.assert_allclose(bic_softmax_weights([5.0, 5.0, 5.0]), np.full(3, 1 / 3))
    np.testing.assert_allclose(
        bic_softmax_weights([0.0, math.log(2.0)]), [2 / 3, 1 / 3], rtol=1e-12
    )
    np.testing.assert_allclose(bic_softmax_weights([-np.inf, 3.0, 1.0]), [1.0, 0, 0])
    # min-shift keeps huge BICs finite
    w = bic_softmax_weights([1e8, 1e8 + 1.0])
    np.testing.assert_allclose(w, [np.e / (1 + np.e), 1 / (1 + np.e)], rtol=1e-10)


# --- subspace-dimension selection ----------------------------------------------


def test_select_k_trivial_grid():
    panel, spec = noise_panel(250, 8, seed=18)
    assert select_k_by_bic(panel, spec, grid=(0,), n_R=10, seed=0) == 0


def test_select_k_drops_oversized_grid_values_and_empty():
    panel, spec = noise_panel(250, 5, seed=19)
    with pytest.warns(UserWarning, match="dropped"):
        k = select_k_by_bic(panel, spec, grid=(0, 50), n_R=10, seed=0)
    assert k == 0
    with pytest.raises(EmptyGrid):
        select_k_by_bic(panel, spec, grid=(50,), n_R=10, seed=0)


def test_select_k_prefers_small_k_for_noise_candidates():
    hits = 0
    reps = 20
    for i in range(reps):
        panel, spec = noise_panel(300, 30, seed=500 + i)
        k = select_k_by_bic(panel, spec, grid=(0, 10, 20, 30), n_R=40, seed=i)
        hits += k <= 10
    assert hits >= 0.8 * reps


# --- FALP ----------------------------------------------------------------------


def test_falp_all_factors_equals_full_control_lp():
    panel, spec = noise_panel(300, 4, seed=20)
    falp = estimate_falp(panel, spec, n_factors=4)
    full_spec = LPSpec(
        response="y",
        impulse="x",
        horizons=spec.horizons,
        essential_controls=spec.essential_controls + spec.candidate_controls,
    )
    full = estimate_base_lp(panel, full_spec)
    np.testing.assert_allclose(falp.beta, full.beta, atol=1e-8)


def test_falp_noise_candidates_close_to_base():
    reps = 20
    diffs = np.empty((reps, 4))
    for i in range(reps):
        panel, spec = noise_panel(260, 12, seed=700 + i)
        diffs[i] = (
            estimate_falp(panel, spec, n_factors=2).beta
            - estimate_base_lp(panel, spec).beta
        )
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(mean) < 3 * se + 0.02)


def test_falp_requires_candidates():
    panel, spec = noise_panel(200, 0, seed=21)
    with pytest.raises(InvalidDimension):
        estimate_falp(panel, spec)


# --- misc ----------------------------------------------------------------------


def test_normalize_unit_response():
    a = estimate_base_lp(*noise_panel(200, 0, seed=22)[:2])
    irfs = {"a": a}
    pos = 1
    out = normalize_unit_response(irfs, "a", int(a.horizons[pos]))
    assert out["a"].beta[pos] == pytest.approx(1.0)


def test_spec_validation():
    with pytest.raises(InvalidDimension):
        LPSpec(response="y", impulse="x", horizons=[])
    with pytest.raises(InvalidDimension):
        LPSpec(response="y", impulse="x", horizons=2, identification="iv")
    with pytest.raises(InvalidDimension):
        LPSpec(response="y", impulse="x", horizons=2, identification="svar")
    with pytest.raises(InvalidDimension):
        LPSpec(
            response="y",
            impulse="x",
            horizons=2,
            essential_controls=(("v", 1),),
            candidate_controls=(("v", 1),),
        )
    spec = LPSpec(
        response="y",
        impulse="x",
        horizons=2,
        identification="svar",
        svar_lead=2,
        essential_controls=(("a", 1), ("a", 2), ("b", 1)),
    )
    assert spec.svar_first_stage_essentials == (("a", 0), ("b", 0))


def test_irf_estimate_band_validation():
    from subspacelp.lp import IRFEstimate

    with pytest.raises(InvalidDimension):
        IRFEstimate(
            horizons=[0, 1], beta=[0.0, 1.0], lower=[0.5, 0.0], upper=[1.0, 2.0]
        )
