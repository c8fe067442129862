"""Local-projection estimators.

Implements the base LP, the random-subspace ensemble (equal or BIC-softmax
weights), the two-stage IV variant, the cumulative-SVAR variant, the
factor-augmented benchmark, and BIC selection of the subspace dimension.

Per horizon h the regression is

    y_{t+h} = mu_h + beta_h * x_t + Theta_h' V_t + Gamma_h' G_t^(j) + xi,

where V_t are always-included controls and G_t^(j) is one random subset of
the candidate controls. Under IV identification x_t is replaced by its
first-stage fit on (intercept, instrument, V_t, G_t^(j)); under cumulative
SVAR identification the first stage projects the accumulated future movement
of the impulse variable on contemporaneous controls. The first stage does
not depend on the horizon and is computed once per draw.

Two equivalent execution paths exist: a batched path that precomputes one
Gram matrix per horizon and assembles every draw's normal equations by
index gathers, and a per-draw reference path built on :mod:`linreg`. The
batched path requires all candidate columns to share one missingness
pattern (always true for simulated panels); otherwise the reference path
runs. Both are pure functions of (panel, spec, draws), so results never
depend on worker counts. Several responses that share one right-hand side
can be estimated jointly, reusing the first stage and every Gram gather.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linreg
from .data import TimeSeriesPanel, lag, lead
from .errors import (
    EmptyGrid,
    InsufficientSample,
    InvalidDimension,
    UndefinedBIC,
)
from .subspace import CategoryLayout, SelectionDraw, draw_by_category, draw_uniform

IDENTIFICATIONS = ("observed", "iv", "svar")


@dataclass
class LPSpec:
    """Declarative description of one LP problem.

    ``essential_controls`` and ``candidate_controls`` are (variable, lag)
    pairs entering the horizon regressions; under SVAR identification they
    describe the second stage, while the first stage uses
    ``svar_first_stage_essentials`` (default: the essential variables at
    lag 0) and the candidate variables at ``svar_first_stage_candidate_lag``.
    """

    response: str
    impulse: str
    horizons: int | Sequence[int]
    instrument: str | None = None
    essential_controls: tuple = ()
    candidate_controls: tuple = ()
    identification: str = "observed"
    response_transform: str = "lead"  # or "level_change": y_{t+h} - y_{t-1}
    svar_lead: int | None = None
    svar_first_stage_essentials: tuple | None = None
    svar_first_stage_candidate_lag: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.horizons, (int, np.integer)):
            if self.horizons < 0:
                raise InvalidDimension("H must be nonnegative")
            self.horizons = tuple(range(int(self.horizons) + 1))
        else:
            self.horizons = tuple(int(h) for h in self.horizons)
        if not self.horizons or any(h < 0 for h in self.horizons):
            raise InvalidDimension("horizons must be nonempty and nonnegative")
        self.essential_controls = tuple((str(v), int(l)) for v, l in self.essential_controls)
        self.candidate_controls = tuple((str(v), int(l)) for v, l in self.candidate_controls)
        overlap = set(self.essential_controls) & set(self.candidate_controls)
        if overlap:
            raise InvalidDimension(f"controls in both essential and candidate sets: {overlap}")
        if self.identification not in IDENTIFICATIONS:
            raise InvalidDimension(f"identification must be one of {IDENTIFICATIONS}")
        if self.identification == "iv" and not self.instrument:
            raise InvalidDimension("IV identification requires an instrument")
        if self.identification == "svar":
            if self.svar_lead is None or self.svar_lead < 1:
                raise InvalidDimension("SVAR identification requires accumulation lead >= 1")
            if self.svar_first_stage_essentials is None:
                seen: list[str] = []
                for v, _ in self.essential_controls:
                    if v not in seen:
                        seen.append(v)
                self.svar_first_stage_essentials = tuple((v, 0) for v in seen)
            else:
                self.svar_first_stage_essentials = tuple(
                    (str(v), int(l)) for v, l in self.svar_first_stage_essentials
                )
        if self.response_transform not in ("lead", "level_change"):
            raise InvalidDimension("response_transform must be 'lead' or 'level_change'")

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_controls)

    def shares_design_with(self, other: "LPSpec") -> bool:
        """True when the two problems differ at most in the response."""
        keys = (
            "impulse",
            "horizons",
            "instrument",
            "essential_controls",
            "candidate_controls",
            "identification",
            "response_transform",
            "svar_lead",
            "svar_first_stage_essentials",
            "svar_first_stage_candidate_lag",
        )
        return all(getattr(self, k) == getattr(other, k) for k in keys)


@dataclass
class IRFEstimate:
    """Per-horizon point estimates with optional error bands."""

    horizons: np.ndarray
    beta: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.horizons = np.asarray(self.horizons, dtype=int)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != self.horizons.shape:
            raise InvalidDimension("beta and horizons must have equal length")
        for name in ("lower", "upper"):
            b = getattr(self, name)
            if b is not None:
                b = np.asarray(b, dtype=float)
                if b.shape != self.beta.shape:
                    raise InvalidDimension(f"{name} must match horizons")
                setattr(self, name, b)
        if self.lower is not None and self.upper is not None:
            if np.any(self.lower > self.beta + 1e-12) or np.any(self.beta > self.upper + 1e-12):
                raise InvalidDimension("bands must satisfy lower <= beta <= upper")


@dataclass
class SubspaceEnsemble:
    """Per-draw coefficients and first-stage BICs behind one RSLP estimate."""

    betas: np.ndarray  # (n_R, n_horizons)
    first_stage_bics: np.ndarray  # (n_R,)
    draws: list
    weights: np.ndarray  # (n_R,), sums to one
    horizons: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.betas.shape[0]


def make_cumulative_target(series, accumulation_lead: int) -> np.ndarray:
    """Accumulated forward movement: out[t] = sum(series[t .. t+lead]).

    Equals accum_{t+lead} - accum_{t-1} for the running sum started at the
    first observation, so the first entry and the trailing ``lead`` entries
    are undefined (NaN). Windows containing a missing value are NaN.
    """
    s = np.asarray(series, dtype=float).ravel()
    ell = int(accumulation_lead)
    if ell < 1:
        raise InvalidDimension("accumulation lead must be >= 1")
    T = s.size
    if T <= ell + 1:
        raise InsufficientSample(f"need T > lead + 1 = {ell + 1}, got {T}")
    out = np.full(T, np.nan)
    filled = np.where(np.isfinite(s), s, 0.0)
    csum = np.concatenate([[0.0], np.cumsum(filled)])
    cnt = np.concatenate([[0], np.cumsum(np.isfinite(s).astype(int))])
    width = ell + 1
    window_sum = csum[width:] - csum[:-width]
    window_ok = (cnt[width:] - cnt[:-width]) == width
    vals = np.where(window_ok, window_sum, np.nan)
    out[1 : T - ell] = vals[1:]
    return out


# ---------------------------------------------------------------------------
# workspace: shifted columns, masks, and column maps shared by all paths
# ---------------------------------------------------------------------------


class _Workspace:
    """Precomputed regressor pool for one right-hand-side design, possibly
    holding several response variables that share it."""

    def __init__(self, panel: TimeSeriesPanel, specs: Sequence[LPSpec]):
        spec = specs[0]
        for other in specs[1:]:
            if not spec.shares_design_with(other):
                raise InvalidDimension("joint estimation requires a shared design")
        self.spec = spec
        self.n_resp = len(specs)
        T = panel.n_obs
        self.T = T
        self.horizons = np.asarray(spec.horizons, dtype=int)
        ys = []
        for s in specs:
            resp = panel.column(s.response)
            if s.response_transform == "level_change":
                base = lag(resp, 1)
                ys.append(np.stack([lead(resp, int(h)) - base for h in self.horizons]))
            else:
                ys.append(np.stack([lead(resp, int(h)) for h in self.horizons]))
        self.y = np.stack(ys)  # (n_resp, H+1, T)
        self.y_masks = np.isfinite(self.y)
        self.uniform_responses = bool(
            np.all(self.y_masks == self.y_masks[:1])
        )

        if spec.identification == "svar":
            x = make_cumulative_target(panel.column(spec.impulse), spec.svar_lead)
        else:
            x = panel.column(spec.impulse).astype(float)

        cols: list[np.ndarray] = [np.ones(T), x]
        self.x_col = 1
        self.v2_idx: list[int] = []
        for v, L in spec.essential_controls:
            self.v2_idx.append(len(cols))
            cols.append(lag(panel.column(v), L))
        self.z_idx = None
        self.v1_idx: list[int] = []
        if spec.identification == "iv":
            self.z_idx = len(cols)
            cols.append(panel.column(spec.instrument).astype(float))
        elif spec.identification == "svar":
            for v, L in spec.svar_first_stage_essentials:
                self.v1_idx.append(len(cols))
                cols.append(lag(panel.column(v), L))
        self.p_G = spec.n_candidates
        self.g2_off = len(cols)
        for v, L in spec.candidate_controls:
            cols.append(lag(panel.column(v), L))
        self.g1_off = None
        if spec.identification == "svar":
            self.g1_off = len(cols)
            L1 = spec.svar_first_stage_candidate_lag
            for v, _ in spec.candidate_controls:
                cols.append(lag(panel.column(v), L1))
        self.U = np.column_stack(cols)
        self.n_U = self.U.shape[1]

        fixed_cols = (
            [0, 1]
            + self.v2_idx
            + ([self.z_idx] if self.z_idx is not None else [])
            + self.v1_idx
        )
        self.fixed_mask = np.all(np.isfinite(self.U[:, fixed_cols]), axis=1)
        g_cols = list(range(self.g2_off, self.g2_off + self.p_G))
        if self.g1_off is not None:
            g_cols += list(range(self.g1_off, self.g1_off + self.p_G))
        self.cand_masks = np.isfinite(self.U[:, g_cols]) if g_cols else None
        if self.cand_masks is None:
            self.uniform_candidates = True
            self.all_cand_mask = np.ones(T, dtype=bool)
        else:
            first = self.cand_masks[:, :1]
            self.uniform_candidates = bool(np.all(self.cand_masks == first))
            self.all_cand_mask = np.all(self.cand_masks, axis=1)
        self.mask1 = self.fixed_mask & self.all_cand_mask

        ident = spec.identification
        self.stage2_fixed = [0] + self.v2_idx  # impulse slot handled separately
        if ident == "iv":
            self.stage1_fixed = [0] + self.v2_idx + [self.z_idx]
            self.stage1_cand_off = self.g2_off
        elif ident == "svar":
            self.stage1_fixed = [0] + self.v1_idx
            self.stage1_cand_off = self.g1_off
        else:
            self.stage1_fixed = [0, 1] + self.v2_idx  # BIC target regression
            self.stage1_cand_off = self.g2_off
        # always-included controls entering the BIC penalty (2 + p_V + k)
        self.bic_p_v = len(self.v1_idx) if ident == "svar" else len(self.v2_idx)

    def rows_stage1(self) -> np.ndarray:
        return np.flatnonzero(self.mask1)

    def rows_stage2(self, h_pos: int, resp: int = 0) -> np.ndarray:
        return np.flatnonzero(self.mask1 & self.y_masks[resp, h_pos])

    def draw_mask(self, draw: SelectionDraw) -> np.ndarray:
        """Listwise-complete rows for one draw (per-draw candidate columns)."""
        m = self.fixed_mask.copy()
        if self.cand_masks is not None and draw.indices.size:
            sel = list(draw.indices)
            if self.g1_off is not None:
                sel = sel + [self.p_G + int(i) for i in draw.indices]
            m &= np.all(self.cand_masks[:, sel], axis=1)
        return m

    def check_sample(self, k_max: int, slack: int) -> None:
        h_largest = int(np.argmax(self.horizons))
        for r in range(self.n_resp):
            n = int(np.count_nonzero(self.fixed_mask & self.y_masks[r, h_largest]))
            p2 = 2 + len(self.v2_idx) + k_max
            if n < p2 + slack:
                raise InsufficientSample(
                    f"{n} usable rows at horizon {int(self.horizons[h_largest])} "
                    f"for {p2} parameters (+{slack} slack)"
                )


# ---------------------------------------------------------------------------
# batched path
# ---------------------------------------------------------------------------


def _gather_gram(gram: np.ndarray, fixed: list[int], cand: np.ndarray) -> np.ndarray:
    """A[j] = gram over columns [fixed..., cand[j]...]; cand is (n_R, k)."""
    n_R, k = cand.shape
    f = len(fixed)
    p = f + k
    A = np.empty((n_R, p, p))
    fixed_arr = np.asarray(fixed, dtype=np.intp)
    A[:, :f, :f] = gram[np.ix_(fixed_arr, fixed_arr)]
    if k:
        fc = gram[fixed_arr[:, None, None], cand[None, :, :]]  # (f, n_R, k)
        fc = np.moveaxis(fc, 1, 0)
        A[:, :f, f:] = fc
        A[:, f:, :f] = fc.transpose(0, 2, 1)
        A[:, f:, f:] = gram[cand[:, :, None], cand[:, None, :]]
    return A


def _gather_vec(vec: np.ndarray, fixed: list[int], cand: np.ndarray) -> np.ndarray:
    """b[j] = vec over columns [fixed..., cand[j]...]; vec may be (n_U,) or
    (n_U, r) for several right-hand sides."""
    n_R, k = cand.shape
    fixed_arr = np.asarray(fixed, dtype=np.intp)
    if vec.ndim == 1:
        b = np.empty((n_R, len(fixed) + k))
    else:
        b = np.empty((n_R, len(fixed) + k, vec.shape[1]))
    b[:, : len(fixed)] = vec[fixed_arr]
    if k:
        b[:, len(fixed) :] = vec[cand]
    return b


def _solve_batch(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Batched symmetric solve with per-draw least-squares fallback.

    B may be (n, p) or (n, p, r). Ill-conditioned draws (detected from the
    normal-equation residual) are re-solved by minimum-norm least squares so
    a collinear draw can never poison the ensemble.
    """
    single = B.ndim == 2
    rhs = B[..., None] if single else B
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        sol = np.full(rhs.shape, np.nan)
    resid = np.einsum("npq,nqr->npr", A, sol) - rhs
    scale = np.sqrt(np.einsum("npr,npr->nr", rhs, rhs)) + 1e-300
    bad = ~np.isfinite(sol).all(axis=(1, 2))
    bad |= np.sqrt(np.einsum("npr,npr->nr", resid, resid)).max(axis=1) > 1e-6 * scale.max(
        axis=1
    )
    for j in np.flatnonzero(bad):
        sol[j] = np.linalg.lstsq(A[j], rhs[j], rcond=None)[0]
    return sol[..., 0] if single else sol


def _bic_value(ssr: float, n_obs: int, k: int, p_v: int) -> float:
    if ssr <= 0.0:
        warnings.warn("perfect first-stage fit: BIC set to -inf", UndefinedBIC, stacklevel=3)
        return -math.inf
    return n_obs * math.log(ssr / n_obs) + math.log(n_obs) * (2 + p_v + k)


class _Stage1Batch:
    """First-stage solutions for every draw on the stage-1 sample."""

    def __init__(self, ws: _Workspace, cand_idx: np.ndarray, resp: int = 0):
        self.ws = ws
        ident = ws.spec.identification
        if ident == "observed":
            # BIC target regression: the shortest-horizon LP itself
            rows = ws.rows_stage2(0, resp)
            target = ws.y[resp, 0][rows]
        else:
            rows = ws.rows_stage1()
            target = ws.U[rows, ws.x_col]
        self.rows = rows
        U1 = ws.U[rows]
        gram = U1.T @ U1
        uy = U1.T @ target
        fixed = ws.stage1_fixed
        cand = ws.stage1_cand_off + cand_idx
        A = _gather_gram(gram, fixed, cand)
        b = _gather_vec(uy, fixed, cand)
        self.coef = _solve_batch(A, b)  # (n_R, f1 + k)
        quad = np.einsum("np,npq,nq->n", self.coef, A, self.coef)
        ssr = float(target @ target) - 2.0 * np.einsum("np,np->n", self.coef, b) + quad
        self.ssr = np.maximum(ssr, 0.0)
        self.n_obs = rows.size
        k = cand_idx.shape[1]
        self.bics = np.array([_bic_value(s, self.n_obs, k, ws.bic_p_v) for s in self.ssr])
        self.fixed = fixed
        self.cand = cand

    def mean_fitted(self) -> np.ndarray:
        """Ensemble-average fitted values on the stage-1 sample (for k selection)."""
        ws = self.ws
        U1 = ws.U[self.rows]
        f1 = len(self.fixed)
        out = U1[:, self.fixed] @ self.coef[:, :f1].mean(axis=0)
        if self.cand.shape[1]:
            acc = np.zeros(self.rows.size)
            for j in range(self.coef.shape[0]):
                acc += U1[:, self.cand[j]] @ self.coef[j, f1:]
            out += acc / self.coef.shape[0]
        return out


def _ensemble_fast(ws: _Workspace, cand_idx: np.ndarray, want_inference: bool = False):
    """Batched per-draw betas for every response sharing the workspace.

    Returns (betas (n_resp, n_R, H+1), bics (n_resp, n_R), payloads).
    Under IV/SVAR the first stage and its BICs are response-invariant; under
    observed identification the BIC target regression involves the response,
    so each response gets its own.
    """
    spec = ws.spec
    ident = spec.identification
    n_R, k = cand_idx.shape
    nH = ws.horizons.size
    nr = ws.n_resp
    betas = np.empty((nr, n_R, nH))
    if ident == "observed":
        stages = [_Stage1Batch(ws, cand_idx, resp=r) for r in range(nr)]
        bics = np.stack([s.bics for s in stages])
        stage1 = stages[0]
    else:
        stage1 = _Stage1Batch(ws, cand_idx)
        bics = np.tile(stage1.bics, (nr, 1))
    payloads = (
        [
            {
                "rows": [],
                "resid": [],
                "influence": [],
                "eta": [],
                "influence_s1": [],
                "dof": [],
                "betas": None,
            }
            for _ in range(nr)
        ]
        if want_inference
        else None
    )

    fixed2 = ws.stage2_fixed
    f2 = len(fixed2)
    cand2 = ws.g2_off + cand_idx
    p2 = f2 + k + 1  # + impulse slot
    imp_pos = 1  # coefficient order: intercept, impulse, essentials, candidates
    nonimp = np.array([0] + list(range(2, p2)), dtype=np.intp)

    for hp in range(nH):
        rows = ws.rows_stage2(hp, 0)
        U2 = ws.U[rows]
        Y2 = ws.y[:, hp, rows].T  # (T_h, n_resp)
        gram = U2.T @ U2
        uy = U2.T @ Y2  # (n_U, n_resp)

        ctrl_A = _gather_gram(gram, fixed2, cand2)  # (n_R, f2+k, f2+k)
        ctrl_b = _gather_vec(uy, fixed2, cand2)  # (n_R, f2+k, n_resp)

        if ident == "observed":
            imp_U = _gather_vec(gram[ws.x_col], fixed2, cand2)
            imp_sq = np.full(n_R, gram[ws.x_col, ws.x_col])
            imp_y = np.tile(uy[ws.x_col], (n_R, 1))  # (n_R, n_resp)
        else:
            s1f = np.asarray(stage1.fixed, dtype=np.intp)
            f1 = s1f.size
            c_fix = stage1.coef[:, :f1]
            c_cand = stage1.coef[:, f1:]
            s1cand = stage1.cand
            fixed2_arr = np.asarray(fixed2, dtype=np.intp)
            imp_fix = c_fix @ gram[np.ix_(s1f, fixed2_arr)]  # (n_R, f2)
            F11 = gram[np.ix_(s1f, s1f)]
            imp_sq = np.einsum("nf,fg,ng->n", c_fix, F11, c_fix)
            imp_y = c_fix @ uy[s1f]  # (n_R, n_resp)
            if k:
                g_s1f_c2 = gram[s1f[:, None, None], cand2[None, :, :]]  # (f1, n_R, k)
                imp_own = np.einsum("nf,fnk->nk", c_fix, g_s1f_c2)
                g_c1_f2 = gram[s1cand[:, :, None], fixed2_arr[None, None, :]]
                imp_fix = imp_fix + np.einsum("nk,nkf->nf", c_cand, g_c1_f2)
                if ws.stage1_cand_off == ws.g2_off:
                    # both stages select the same candidate columns: reuse
                    # the control-block gathers instead of re-gathering
                    g_c1_c2 = ctrl_A[:, f2:, f2:]
                    g_s1f_c1 = g_s1f_c2
                    d_c1 = g_c1_c2
                    uy_c1 = ctrl_b[:, f2:]
                else:
                    g_c1_c2 = gram[s1cand[:, :, None], cand2[:, None, :]]
                    g_s1f_c1 = gram[s1f[:, None, None], s1cand[None, :, :]]
                    d_c1 = gram[s1cand[:, :, None], s1cand[:, None, :]]
                    uy_c1 = uy[s1cand]  # (n_R, k, n_resp)
                imp_own = imp_own + np.einsum("nk,nkm->nm", c_cand, g_c1_c2)
                imp_U = np.concatenate([imp_fix, imp_own], axis=1)
                imp_sq = (
                    imp_sq
                    + 2.0 * np.einsum("nf,fnk,nk->n", c_fix, g_s1f_c1, c_cand)
                    + np.einsum("nk,nkm,nm->n", c_cand, d_c1, c_cand)
                )
                imp_y = imp_y + np.einsum("nk,nkr->nr", c_cand, uy_c1)
            else:
                imp_U = imp_fix

        A = np.empty((n_R, p2, p2))
        A[:, nonimp[:, None], nonimp[None, :]] = ctrl_A
        A[:, imp_pos, nonimp] = imp_U
        A[:, nonimp, imp_pos] = imp_U
        A[:, imp_pos, imp_pos] = imp_sq
        n_rhs = nr + (1 if want_inference else 0)
        B = np.zeros((n_R, p2, n_rhs))
        B[:, nonimp, :nr] = ctrl_b
        B[:, imp_pos, :nr] = imp_y
        if want_inference:
            B[:, imp_pos, nr] = 1.0
        sol = _solve_batch(A, B)
        coef = sol[:, :, :nr]  # (n_R, p2, n_resp)
        betas[:, :, hp] = coef[:, imp_pos, :].T

        if want_inference:
            a_inf = sol[:, :, nr]
            resid = np.empty((nr, n_R, rows.size))
            infl = np.empty((n_R, rows.size))
            two_stage = ident != "observed"
            if two_stage:
                # a1 solves the stage-1 normal equations against X1'w, so
                # g1 = X1 a1 is the stage-1 projection of the influence
                # vector: the linearized effect of first-stage noise on beta
                s1f = np.asarray(stage1.fixed, dtype=np.intp)
                f1 = s1f.size
                s1cand = stage1.cand
                A1h = _gather_gram(gram, stage1.fixed, s1cand)
                p1 = f1 + k
                X1X2 = np.empty((n_R, p1, p2))
                ctrl_cross = np.empty((n_R, p1, f2 + k))
                fixed2_arr = np.asarray(fixed2, dtype=np.intp)
                ctrl_cross[:, :f1, :f2] = gram[np.ix_(s1f, fixed2_arr)]
                if k:
                    ctrl_cross[:, f1:, :f2] = gram[
                        s1cand[:, :, None], fixed2_arr[None, None, :]
                    ]
                    g_s1f_c2_i = gram[s1f[:, None, None], cand2[None, :, :]]
                    ctrl_cross[:, :f1, f2:] = np.moveaxis(g_s1f_c2_i, 1, 0)
                    ctrl_cross[:, f1:, f2:] = gram[s1cand[:, :, None], cand2[:, None, :]]
                X1X2[:, :, nonimp] = ctrl_cross
                X1X2[:, :, imp_pos] = np.einsum("npq,nq->np", A1h, stage1.coef)
                x1w = np.einsum("npq,nq->np", X1X2, a_inf)
                a1 = _solve_batch(A1h, x1w)
                eta = np.empty((n_R, rows.size))
                infl_s1 = np.empty((n_R, rows.size))
            chunk = max(1, int(2_000_000 // max(rows.size, 1)))
            for j0 in range(0, n_R, chunk):
                j1 = min(j0 + chunk, n_R)
                X = np.empty((j1 - j0, rows.size, p2))
                X[:, :, 0] = 1.0
                X[:, :, 2 : 2 + len(ws.v2_idx)] = U2[:, ws.v2_idx]
                if k:
                    X[:, :, f2 + 1 :] = U2[:, cand2[j0:j1]].transpose(1, 0, 2)
                if ident == "observed":
                    X[:, :, imp_pos] = U2[:, ws.x_col]
                else:
                    f1 = len(stage1.fixed)
                    X1c = np.empty((j1 - j0, rows.size, f1 + k))
                    X1c[:, :, :f1] = U2[:, stage1.fixed]
                    if k:
                        X1c[:, :, f1:] = U2[:, stage1.cand[j0:j1]].transpose(1, 0, 2)
                    xhat = np.einsum("ntq,nq->nt", X1c, stage1.coef[j0:j1])
                    X[:, :, imp_pos] = xhat
                    eta[j0:j1] = U2[:, ws.x_col][None, :] - xhat
                    infl_s1[j0:j1] = np.einsum("ntq,nq->nt", X1c, a1[j0:j1])
                fitted = np.einsum("ntp,npr->rnt", X, coef[j0:j1])
                resid[:, j0:j1] = Y2.T[:, None, :] - fitted
                infl[j0:j1] = np.einsum("ntp,np->nt", X, a_inf[j0:j1])
            for r in range(nr):
                payloads[r]["rows"].append(rows)
                payloads[r]["resid"].append(resid[r])
                payloads[r]["influence"].append(infl)
                payloads[r]["eta"].append(eta if two_stage else None)
                payloads[r]["influence_s1"].append(infl_s1 if two_stage else None)
                payloads[r]["dof"].append(
                    (rows.size, p2, stage1.n_obs, len(stage1.fixed) + k)
                )
    if want_inference:
        for r in range(nr):
            payloads[r]["betas"] = betas[r]
    return betas, bics, payloads


# ---------------------------------------------------------------------------
# per-draw reference path
# ---------------------------------------------------------------------------


def _single_draw_fits(ws: _Workspace, draw: SelectionDraw, resp: int = 0):
    """One draw via linreg: (betas, first-stage fit, list of second-stage fits)."""
    spec = ws.spec
    ident = spec.identification
    base_mask = ws.draw_mask(draw)
    sel2 = (ws.g2_off + draw.indices).astype(np.intp)
    v2 = np.asarray(ws.v2_idx, dtype=np.intp)

    first_fit = None
    xhat_full = None
    if ident != "observed":
        rows1 = np.flatnonzero(base_mask)
        if ident == "iv":
            d1_cols = np.concatenate([v2, [ws.z_idx], sel2]).astype(np.intp)
        else:
            d1_cols = np.concatenate(
                [ws.v1_idx, ws.g1_off + draw.indices]
            ).astype(np.intp)
        first_fit = linreg.ols(ws.U[np.ix_(rows1, d1_cols)], ws.U[rows1, ws.x_col])
        xhat_full = np.full(ws.T, np.nan)
        xhat_full[rows1] = first_fit.fitted

    betas = np.empty(ws.horizons.size)
    fits = []
    for hp in range(ws.horizons.size):
        rows = np.flatnonzero(base_mask & ws.y_masks[resp, hp])
        imp = ws.U[rows, ws.x_col] if ident == "observed" else xhat_full[rows]
        design = np.column_stack(
            [imp, ws.U[np.ix_(rows, v2)], ws.U[np.ix_(rows, sel2)]]
        )
        fit = linreg.ols(design, ws.y[resp, hp][rows])
        fits.append(fit)
        betas[hp] = fit.coefficients[1]
    return betas, first_fit, fits


def _ensemble_slow(ws: _Workspace, draws: list, want_inference: bool = False):
    nH = ws.horizons.size
    n_R = len(draws)
    nr = ws.n_resp
    betas = np.empty((nr, n_R, nH))
    bics = np.empty((nr, n_R))
    payloads = [] if want_inference else None
    for r in range(nr):
        all_fits: list[list] = []
        all_firsts: list = []
        for j, draw in enumerate(draws):
            b, first, fits = _single_draw_fits(ws, draw, resp=r)
            betas[r, j] = b
            target_fit = fits[0] if ws.spec.identification == "observed" else first
            bics[r, j] = _bic_value(target_fit.ssr, target_fit.n_obs, draw.k, ws.bic_p_v)
            if want_inference:
                all_fits.append(fits)
                all_firsts.append(first)
        if want_inference:
            two_stage = ws.spec.identification != "observed"
            payload = {
                "rows": [],
                "resid": [],
                "influence": [],
                "eta": [],
                "influence_s1": [],
                "dof": [],
                "betas": betas[r],
            }
            for hp in range(nH):
                lengths = {all_fits[j][hp].n_obs for j in range(n_R)}
                if len(lengths) != 1:
                    raise InsufficientSample(
                        "draws have unequal samples at a horizon; shared-block "
                        "bootstrap requires a balanced candidate panel"
                    )
                T_h = lengths.pop()
                resid = np.empty((n_R, T_h))
                infl = np.empty((n_R, T_h))
                eta = np.empty((n_R, T_h)) if two_stage else None
                infl_s1 = np.empty((n_R, T_h)) if two_stage else None
                p1 = 0
                n1 = T_h
                for j in range(n_R):
                    fit = all_fits[j][hp]
                    X = fit.design
                    a = np.linalg.lstsq(X.T @ X, np.eye(X.shape[1])[:, 1], rcond=None)[0]
                    resid[j] = fit.residuals
                    infl[j] = X @ a
                    if two_stage:
                        draw = draws[j]
                        base_mask = ws.draw_mask(draw)
                        rows1 = np.flatnonzero(base_mask)
                        rows_h = np.flatnonzero(base_mask & ws.y_masks[r, hp])
                        pos = np.searchsorted(rows1, rows_h)
                        first = all_firsts[j]
                        eta[j] = first.residuals[pos]
                        X1 = first.design[pos]
                        a1 = np.linalg.lstsq(X1.T @ X1, X1.T @ infl[j], rcond=None)[0]
                        infl_s1[j] = X1 @ a1
                        p1 = first.n_params
                        n1 = first.n_obs
                rows = np.flatnonzero(ws.draw_mask(draws[0]) & ws.y_masks[r, hp])
                payload["rows"].append(rows)
                payload["resid"].append(resid)
                payload["influence"].append(infl)
                payload["eta"].append(eta)
                payload["influence_s1"].append(infl_s1)
                payload["dof"].append(
                    (T_h, all_fits[0][hp].n_params, n1, p1)
                )
            payloads.append(payload)
    return betas, bics, payloads


def _ensemble_betas(ws: _Workspace, draws: list, want_inference: bool = False):
    ks = {d.k for d in draws}
    if ws.uniform_candidates and ws.uniform_responses and len(ks) == 1:
        cand_idx = (
            np.stack([d.indices for d in draws])
            if ks != {0}
            else np.empty((len(draws), 0), dtype=np.intp)
        )
        return _ensemble_fast(ws, cand_idx, want_inference)
    return _ensemble_slow(ws, draws, want_inference)


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------


def first_stage_bic(fit: linreg.RegressionFit, k: int, p_V: int) -> float:
    """BIC of a first-stage fit: T ln(ssr/T) + ln(T) (2 + p_V + k).

    ``p_V`` counts the always-included controls of that stage. A perfect
    fit (ssr = 0) has no finite BIC and returns -inf with a warning; such a
    draw dominates the softmax weights, matching the formula's limit.
    """
    if fit.n_obs <= 0:
        raise InvalidDimension("fit has no observations")
    return _bic_value(fit.ssr, fit.n_obs, int(k), int(p_V))


def bic_softmax_weights(bics) -> np.ndarray:
    """w_j = exp(-(BIC_j - min BIC)) / sum_l exp(-(BIC_l - min BIC)).

    The min-shift guards against overflow. -inf sentinels (perfect fits)
    receive all the weight, split equally if there are several.
    """
    b = np.asarray(bics, dtype=float)
    if b.size == 0 or not np.any(b < np.inf):
        raise InvalidDimension("need at least one finite BIC")
    neg_inf = np.isneginf(b)
    if neg_inf.any():
        w = np.zeros(b.size)
        w[neg_inf] = 1.0 / neg_inf.sum()
        return w
    shifted = b - b.min()
    w = np.exp(-shifted)
    return w / w.sum()


def _resolve_draws(
    spec: LPSpec,
    k: int,
    n_R: int,
    seed,
    category_layout: CategoryLayout | None,
) -> list[SelectionDraw]:
    p_G = spec.n_candidates
    rng = np.random.default_rng(seed)
    if category_layout is not None:
        if category_layout.p_total != p_G:
            raise InvalidDimension(
                f"category layout covers {category_layout.p_total} predictors, "
                f"spec has {p_G} candidates"
            )
        return [draw_by_category(category_layout, rng) for _ in range(n_R)]
    if k > p_G:
        warnings.warn(
            f"subspace dimension {k} exceeds {p_G} candidates; clamping to {p_G}",
            UserWarning,
            stacklevel=3,
        )
        k = p_G
    if p_G == 0 or k == 0:
        empty = np.empty(0, dtype=np.intp)
        return [SelectionDraw(indices=empty, p_total=p_G) for _ in range(n_R)]
    return [draw_uniform(p_G, k, rng) for _ in range(n_R)]


def estimate_rslp_joint(
    panel: TimeSeriesPanel,
    specs: Sequence[LPSpec],
    k: int = 50,
    n_R: int = 1000,
    seed=0,
    weighting: str = "equal",
    category_layout: CategoryLayout | None = None,
    draws: list | None = None,
    min_sample_slack: int = 10,
) -> list[tuple[IRFEstimate, SubspaceEnsemble]]:
    """Subspace-averaged LPs for several responses sharing one design.

    The draws, the first stage, and every Gram matrix are computed once and
    reused across responses; results are identical to estimating each
    response separately with the same seed.
    """
    if weighting not in ("equal", "bic"):
        raise InvalidDimension("weighting must be 'equal' or 'bic'")
    if n_R < 1:
        raise InvalidDimension("n_R must be positive")
    spec = specs[0]
    if draws is None:
        draws = _resolve_draws(spec, k, n_R, seed, category_layout)
    ws = _Workspace(panel, specs)
    ws.check_sample(max(d.k for d in draws), min_sample_slack)
    betas, bics, _ = _ensemble_betas(ws, draws)
    out = []
    for r, s in enumerate(specs):
        if weighting == "bic":
            weights = bic_softmax_weights(bics[r])
        else:
            weights = np.full(len(draws), 1.0 / len(draws))
        beta = weights @ betas[r]
        meta = {
            "estimator": "rslp",
            "response": s.response,
            "k": int(min(k, spec.n_candidates))
            if category_layout is None
            else category_layout.k,
            "n_R": len(draws),
            "seed": seed,
            "weighting": weighting,
            "identification": spec.identification,
        }
        est = IRFEstimate(horizons=ws.horizons, beta=beta, meta=meta)
        ensemble = SubspaceEnsemble(
            betas=betas[r],
            first_stage_bics=bics[r],
            draws=list(draws),
            weights=weights,
            horizons=ws.horizons,
            meta=dict(meta),
        )
        out.append((est, ensemble))
    return out


def estimate_rslp(
    panel: TimeSeriesPanel,
    spec: LPSpec,
    k: int = 50,
    n_R: int = 1000,
    seed=0,
    weighting: str = "equal",
    category_layout: CategoryLayout | None = None,
    draws: list | None = None,
    min_sample_slack: int = 10,
) -> tuple[IRFEstimate, SubspaceEnsemble]:
    """Random-subspace LP: average the per-draw impulse coefficients.

    ``n_R`` draws are generated up front from ``seed`` (or supplied
    explicitly via ``draws``), each LP is estimated with the essential
    controls plus the selected candidates, and the estimate is the equal-
    or BIC-softmax-weighted mean across draws.
    """
    return estimate_rslp_joint(
        panel,
        [spec],
        k=k,
        n_R=n_R,
        seed=seed,
        weighting=weighting,
        category_layout=category_layout,
        draws=draws,
        min_sample_slack=min_sample_slack,
    )[0]


def estimate_base_lp(
    panel: TimeSeriesPanel, spec: LPSpec, min_sample_slack: int = 10
) -> IRFEstimate:
    """LP with the essential controls only; candidate controls are excluded."""
    ws = _Workspace(panel, [spec])
    ws.check_sample(0, min_sample_slack)
    empty = [SelectionDraw(indices=np.empty(0, dtype=np.intp), p_total=spec.n_candidates)]
    betas, _, _ = _ensemble_betas(ws, empty)
    meta = {"estimator": "base", "identification": spec.identification}
    return IRFEstimate(horizons=ws.horizons, beta=betas[0, 0], meta=meta)


def estimate_lp_iv(panel: TimeSeriesPanel, spec: LPSpec, draw: SelectionDraw):
    """Two-stage LP for one draw: impulse instrumented by spec.instrument.

    The first stage regresses the impulse on (intercept, instrument,
    essential controls, selected candidates); it is horizon-invariant and
    computed once. Returns (per-horizon coefficients, first-stage fit).
    """
    if spec.identification != "iv":
        raise InvalidDimension("spec identification must be 'iv'")
    ws = _Workspace(panel, [spec])
    betas, first, _ = _single_draw_fits(ws, draw)
    return betas, first


def estimate_lp_svar(panel: TimeSeriesPanel, spec: LPSpec, draw: SelectionDraw):
    """Cumulative-identification LP for one draw.

    The first stage projects the accumulated future movement of the impulse
    variable on contemporaneous controls; its fitted values proxy the
    structural shock and enter every horizon regression.
    """
    if spec.identification != "svar":
        raise InvalidDimension("spec identification must be 'svar'")
    ws = _Workspace(panel, [spec])
    betas, first, _ = _single_draw_fits(ws, draw)
    return betas, first


def select_k_by_bic(
    panel: TimeSeriesPanel,
    spec: LPSpec,
    grid: Sequence[int] = (0, 10, 20, 30, 40, 50, 60),
    n_R: int = 1000,
    seed=0,
) -> int:
    """Pick the subspace dimension from a grid by first-stage ensemble BIC.

    For each k the BIC uses the ensemble-average fitted value with penalty
    ln(T) (2 + p_V + k); the smallest-BIC k wins, ties to the smaller k.
    Grid values above the number of candidates are dropped with a warning.
    """
    p_G = spec.n_candidates
    usable = sorted({int(g) for g in grid if 0 <= int(g) <= p_G})
    dropped = sorted({int(g) for g in grid} - set(usable))
    if dropped:
        warnings.warn(f"grid values above p_G dropped: {dropped}", UserWarning, stacklevel=2)
    if not usable:
        raise EmptyGrid("no usable grid values")
    ws = _Workspace(panel, [spec])
    if not ws.uniform_candidates:
        raise InsufficientSample("k selection requires a balanced candidate panel")
    streams = np.random.SeedSequence(seed).spawn(len(usable))
    best_k, best_bic = None, np.inf
    for pos, kk in enumerate(usable):
        rng = np.random.default_rng(streams[pos])
        if kk == 0 or p_G == 0:
            cand_idx = np.empty((1, 0), dtype=np.intp)
        else:
            cand_idx = np.stack(
                [draw_uniform(p_G, kk, rng).indices for _ in range(n_R)]
            )
        stage1 = _Stage1Batch(ws, cand_idx)
        if ws.spec.identification == "observed":
            target = ws.y[0, 0][stage1.rows]
        else:
            target = ws.U[stage1.rows, ws.x_col]
        err = target - stage1.mean_fitted()
        msr = float(err @ err) / stage1.n_obs
        bic = (
            -np.inf
            if msr <= 0
            else stage1.n_obs * math.log(msr)
            + math.log(stage1.n_obs) * (2 + ws.bic_p_v + kk)
        )
        if bic < best_bic:
            best_k, best_bic = kk, bic
    return int(best_k)


def falp_problem(
    panel: TimeSeriesPanel, spec: LPSpec, n_factors: int = 2
) -> tuple[TimeSeriesPanel, LPSpec]:
    """Rewrite an LP problem with principal components in place of the
    candidate set: the top-``n_factors`` correlation PCs of the candidate
    variables join the panel and the essential controls at the lags the
    candidate set used; the candidate set itself is dropped.
    """
    from .data import pca

    cand = list(spec.candidate_controls)
    if not cand:
        raise InvalidDimension("FALP requires a nonempty candidate set")
    var_names = list(dict.fromkeys(v for v, _ in cand))
    X = np.column_stack([panel.column(v) for v in var_names])
    ok = np.all(np.isfinite(X), axis=1)
    if n_factors > min(int(ok.sum()), len(var_names)):
        raise InvalidDimension("n_factors exceeds min(T, p_G)")
    res = pca(X[ok], n_factors)
    fac = np.full((panel.n_obs, n_factors), np.nan)
    fac[ok] = res.factors
    pc_names = [f"__pc{i + 1}" for i in range(n_factors)]
    aug = panel.with_columns(pc_names, fac)
    lags = sorted({L for _, L in cand})
    extra = tuple((nm, L) for L in lags for nm in pc_names)
    fs_ess = spec.svar_first_stage_essentials
    if spec.identification == "svar":
        L1 = spec.svar_first_stage_candidate_lag
        fs_ess = tuple(fs_ess) + tuple((nm, L1) for nm in pc_names)
    factor_spec = LPSpec(
        response=spec.response,
        impulse=spec.impulse,
        horizons=spec.horizons,
        instrument=spec.instrument,
        essential_controls=tuple(spec.essential_controls) + extra,
        candidate_controls=(),
        identification=spec.identification,
        response_transform=spec.response_transform,
        svar_lead=spec.svar_lead,
        svar_first_stage_essentials=fs_ess,
        svar_first_stage_candidate_lag=spec.svar_first_stage_candidate_lag,
    )
    return aug, factor_spec


def estimate_falp(
    panel: TimeSeriesPanel,
    spec: LPSpec,
    n_factors: int = 2,
    min_sample_slack: int = 10,
) -> IRFEstimate:
    """Factor-augmented LP benchmark; see :func:`falp_problem`."""
    aug, factor_spec = falp_problem(panel, spec, n_factors)
    est = estimate_base_lp(aug, factor_spec, min_sample_slack=min_sample_slack)
    est.meta.update({"estimator": "falp", "n_factors": n_factors})
    return est


def normalize_unit_response(
    irfs: dict[str, IRFEstimate], reference: str, horizon: int
) -> dict[str, IRFEstimate]:
    """Rescale a set of IRFs so the reference variable's response at
    ``horizon`` equals one. Off by default everywhere; exposed for figures
    that normalize the shock to a unit impact on the reference variable.
    """
    ref = irfs[reference]
    pos = int(np.flatnonzero(ref.horizons == horizon)[0])
    scale = ref.beta[pos]
    if scale == 0:
        raise InvalidDimension("reference response is zero at the chosen horizon")
    out = {}
    for name, est in irfs.items():
        out[name] = IRFEstimate(
            horizons=est.horizons,
            beta=est.beta / scale,
            lower=None if est.lower is None else est.lower / scale,
            upper=None if est.upper is None else est.upper / scale,
            meta={**est.meta, "normalized_to": (reference, horizon)},
        )
    return out


def inference_arrays(panel: TimeSeriesPanel, spec: LPSpec, draws: list):
    """Per-horizon residual and influence arrays for band construction.

    For each draw j and horizon h the influence vector w satisfies
    beta_hat = w'y, so a design-fixed refit on a resampled response y* is
    exactly beta_hat + w'(y* - fitted). Requires every draw to share the
    same sample at each horizon.
    """
    ws = _Workspace(panel, [spec])
    _, _, payloads = _ensemble_betas(ws, draws, want_inference=True)
    return payloads[0]
