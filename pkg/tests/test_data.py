import math

import numpy as np
import pytest

from subspacelp.data import (
    TimeSeriesPanel,
    apply_tcodes,
    build_design,
    factor_structure_report,
    load_csv,
    pca,
)
from subspacelp.errors import (
    DegenerateColumn,
    DimensionMismatch,
    DuplicateName,
    InvalidDimension,
    MissingVariable,
    ParseError,
    UnknownTcode,
)
from subspacelp.lp import LPSpec


def make_panel(values, names, **kw):
    T = np.asarray(values).shape[0]
    return TimeSeriesPanel(values=values, names=names, dates=[f"t{i:03d}" for i in range(T)], **kw)


# --- loading ---------------------------------------------------------------


def test_load_clean_csv(tmp_path):
    p = tmp_path / "small.csv"
    p.write_text("date,a,b\n2001,1.5,2\n2002,2.5,3\n2003,3.5,4\n")
    panel = load_csv(p)
    assert panel.n_obs == 3 and panel.n_series == 2
    assert panel.names == ["a", "b"]
    np.testing.assert_allclose(panel.column("a"), [1.5, 2.5, 3.5])
    assert panel.tcodes is None


def test_load_fred_style_tcode_row(tmp_path):
    p = tmp_path / "fred.csv"
    p.write_text(
        "sasdate,GDP,CPI\nTransform:,5,6\n1/31/1959,100,10\n2/28/1959,101,11\n"
    )
    panel = load_csv(p)
    assert panel.tcodes == [5, 6]
    assert panel.n_obs == 2
    np.testing.assert_allclose(panel.column("GDP"), [100.0, 101.0])


def test_load_missing_cell_becomes_nan_not_zero(tmp_path):
    p = tmp_path / "gap.csv"
    p.write_text("date,a\n2001,1\n2002,\n2003,3\n")
    panel = load_csv(p)
    assert np.isnan(panel.column("a")[1])


def test_load_parse_error_locates_cell(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("date,a\n2001,1\n2002,oops\n")
    with pytest.raises(ParseError, match="column 'a'"):
        load_csv(p)


def test_load_duplicate_names(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("date,a,a\n2001,1,2\n")
    with pytest.raises(DuplicateName):
        load_csv(p)


def test_panel_validation():
    with pytest.raises(DuplicateName):
        make_panel(np.zeros((3, 2)), ["x", "x"])
    with pytest.raises(DimensionMismatch):
        TimeSeriesPanel(np.zeros((3, 1)), ["x"], dates=["b", "a", "c"])
    with pytest.raises(MissingVariable):
        make_panel(np.zeros((3, 1)), ["x"]).column("y")


# --- transform codes ---------------------------------------------------------


def test_tcode_level_unchanged():
    panel = make_panel(np.arange(5.0)[:, None], ["x"], tcodes=[1])
    np.testing.assert_array_equal(apply_tcodes(panel).column("x"), np.arange(5.0))


def test_tcode_log_difference_hand_case():
    e = math.e
    panel = make_panel(np.array([1.0, e, e**2])[:, None], ["x"], tcodes=[5])
    out = apply_tcodes(panel).column("x")
    assert np.isnan(out[0])
    np.testing.assert_allclose(out[1:], [1.0, 1.0], rtol=1e-12)


def test_tcode_first_difference_of_constant():
    panel = make_panel(np.full((4, 1), 7.0), ["x"], tcodes=[2])
    out = apply_tcodes(panel).column("x")
    assert np.isnan(out[0])
    np.testing.assert_array_equal(out[1:], np.zeros(3))


def test_tcode_unknown():
    panel = make_panel(np.ones((3, 1)), ["x"], tcodes=[9])
    with pytest.raises(UnknownTcode):
        apply_tcodes(panel)


def test_tcode_roundtrip_levels_and_logs():
    rng = np.random.default_rng(0)
    x = np.exp(rng.standard_normal(20))
    panel = make_panel(np.column_stack([x, x]), ["lvl", "lg"], tcodes=[1, 4])
    out = apply_tcodes(panel)
    np.testing.assert_allclose(out.column("lvl"), x, rtol=1e-12)
    np.testing.assert_allclose(np.exp(out.column("lg")), x, rtol=1e-12)


def test_tcode_second_log_difference():
    x = np.array([1.0, 2.0, 8.0, 16.0])
    panel = make_panel(x[:, None], ["x"], tcodes=[6])
    out = apply_tcodes(panel).column("x")
    lx = np.log(x)
    np.testing.assert_allclose(out[2:], np.diff(np.diff(lx)), rtol=1e-12)
    assert np.isnan(out[:2]).all()


# --- design building ---------------------------------------------------------


def _simple_spec(**kw):
    defaults = dict(response="y", impulse="x", horizons=2)
    defaults.update(kw)
    return LPSpec(**defaults)


def test_build_design_h0_plain_lead():
    rng = np.random.default_rng(1)
    vals = rng.standard_normal((30, 2))
    panel = make_panel(vals, ["y", "x"])
    d = build_design(panel, _simple_spec(), horizon=0)
    np.testing.assert_array_equal(d.response, panel.column("y"))
    np.testing.assert_array_equal(d.impulse, panel.column("x"))
    assert d.controls.shape == (30, 0)


def test_build_design_level_change_index_arithmetic():
    y = np.array([1.0, 2.0, 4.0, 8.0])
    panel = make_panel(np.column_stack([y, y]), ["y", "x"])
    spec = _simple_spec(horizons=[1], response_transform="level_change")
    d = build_design(panel, spec, horizon=1)
    # at t = 2: y_{t+1} - y_{t-1} = 8 - 2 = 6
    t_pos = list(d.rows).index(2)
    assert d.response[t_pos] == pytest.approx(6.0)


def test_build_design_empty_draw_keeps_only_essentials():
    rng = np.random.default_rng(2)
    panel = make_panel(rng.standard_normal((40, 4)), ["y", "x", "v", "g"])
    spec = _simple_spec(essential_controls=(("v", 1),), candidate_controls=(("g", 1),))
    from subspacelp.subspace import SelectionDraw

    d = build_design(panel, spec, 0, SelectionDraw(np.empty(0, dtype=int), 1))
    assert d.controls.shape[1] == 1  # just the essential lag


def test_build_design_rows_weakly_decreasing_in_horizon():
    rng = np.random.default_rng(3)
    panel = make_panel(rng.standard_normal((50, 2)), ["y", "x"])
    spec = _simple_spec(horizons=5)
    counts = [build_design(panel, spec, h).rows.size for h in range(6)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


# --- PCA ---------------------------------------------------------------------


def test_pca_two_perfectly_correlated_columns():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(100)
    res = pca(np.column_stack([x, 2 * x]), m=1)
    assert res.explained[0] == pytest.approx(1.0, abs=1e-10)


def test_pca_independent_columns_flat_spectrum():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20_000, 4))
    res = pca(X, m=2)
    np.testing.assert_allclose(res.explained, [0.25, 0.25], atol=0.02)


def test_pca_reconstruction_and_orthogonality():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((60, 5)) @ rng.standard_normal((5, 5))
    res = pca(X, m=5)
    Xs = (X - X.mean(0)) / X.std(0)
    np.testing.assert_allclose(res.factors @ res.loadings.T, Xs, atol=1e-8)
    gram = res.factors.T @ res.factors
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-8 * np.max(np.abs(gram))
    assert np.all(np.diff(res.explained) <= 1e-12)
    assert res.explained.sum() == pytest.approx(1.0, abs=1e-10)


def test_pca_drops_constant_column_with_warning():
    rng = np.random.default_rng(7)
    X = np.column_stack([rng.standard_normal(50), np.full(50, 3.0)])
    with pytest.warns(DegenerateColumn):
        res = pca(X, m=1)
    assert res.kept_columns.tolist() == [0]


def test_pca_dimension_validation():
    with pytest.raises(InvalidDimension):
        pca(np.random.default_rng(8).standard_normal((10, 3)), m=4)


# --- factor structure --------------------------------------------------------


def test_factor_structure_rank_one():
    rng = np.random.default_rng(9)
    x = rng.standard_normal(80)
    X = np.outer(x, [1.0, -2.0, 0.5])
    comps, cum = factor_structure_report(X, 3)
    assert cum[0] == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_array_equal(comps, [1, 2, 3])


def test_factor_structure_monotone():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((100, 8))
    _, cum = factor_structure_report(X, 8)
    assert np.all(np.diff(cum) >= -1e-12)
    assert cum[-1] == pytest.approx(1.0, abs=1e-8)
