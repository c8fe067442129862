"""Core regression engine: OLS, two-stage least squares, Newey-West variances.

Every estimator in the package reduces to these three operations. All
functions are pure and safe to call from concurrent workers.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateDesign,
    DimensionMismatch,
    InsufficientSample,
    WeakFirstStage,
)


@dataclass
class RegressionFit:
    """One least-squares fit.

    ``coefficients`` are ordered (intercept, impulse / fitted impulse,
    essential controls, subspace controls) by the callers that assemble
    designs in that order. ``design`` retains the full regressor matrix,
    including the intercept column, so robust variances can be formed
    without re-assembly.
    """

    coefficients: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    ssr: float
    n_obs: int
    n_params: int
    rank: int = 0
    design: np.ndarray | None = None
    first_stage: "RegressionFit | None" = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.n_params > self.n_obs:
            raise InsufficientSample(
                f"{self.n_params} parameters exceed {self.n_obs} observations"
            )


def _as_design(design, n_obs: int | None = None) -> np.ndarray:
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"design must be 2-D, got shape {X.shape}")
    if n_obs is not None and X.shape[0] != n_obs:
        raise DimensionMismatch(
            f"design has {X.shape[0]} rows, response has {n_obs}"
        )
    return X


def ols(design, response, add_intercept: bool = True) -> RegressionFit:
    """Least squares of ``response`` on ``design`` columns.

    Solves via QR with column pivoting (LAPACK gelsy), which falls back to
    the minimum-norm solution through a complete orthogonal decomposition
    when the design is rank deficient. Random subspace draws can contain
    collinear series, so estimation must never abort mid-ensemble.
    """
    y = np.asarray(response, dtype=float).ravel()
    X = _as_design(design, y.size)
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise DimensionMismatch("design/response contain non-finite values")
    if add_intercept:
        X = np.column_stack([np.ones(y.size), X])
    p = X.shape[1]
    if p == 0:
        raise DegenerateDesign("no regressors and no intercept")
    if y.size <= p:
        raise InsufficientSample(f"{y.size} observations for {p} parameters")
    rank_tol = np.finfo(float).eps * max(X.shape)
    coef, _, rank, _ = scipy.linalg.lstsq(X, y, lapack_driver="gelsy", cond=rank_tol)
    if rank == 0:
        raise DegenerateDesign("design has effective rank zero")
    fitted = X @ coef
    resid = y - fitted
    return RegressionFit(
        coefficients=coef,
        residuals=resid,
        fitted=fitted,
        ssr=float(resid @ resid),
        n_obs=y.size,
        n_params=p,
        rank=int(rank),
        design=X,
    )


def newey_west_variance(
    fit: RegressionFit, design=None, lag_truncation: int = 0
) -> np.ndarray:
    """Per-coefficient HAC variances with a Bartlett kernel.

    ``design`` must be the full regressor matrix used in the fit (intercept
    column included); when omitted the matrix stored on the fit is used.
    ``lag_truncation`` is the kernel bandwidth L, with weights
    w_l = 1 - l/(L+1); L = 0 reduces to the White sandwich estimator.
    No degrees-of-freedom correction is applied (plain Newey-West scaling).
    """
    X = fit.design if design is None else _as_design(design, fit.n_obs)
    if X is None:
        raise DimensionMismatch("no design matrix supplied or stored on fit")
    L = int(lag_truncation)
    if L < 0 or L >= fit.n_obs:
        raise DimensionMismatch(
            f"lag truncation {L} outside [0, {fit.n_obs - 1}]"
        )
    scores = fit.residuals[:, None] * X
    omega = scores.T @ scores
    for lag in range(1, L + 1):
        w = 1.0 - lag / (L + 1.0)
        cross = scores[lag:].T @ scores[:-lag]
        omega += w * (cross + cross.T)
    xtx = X.T @ X
    try:
        bread = np.linalg.pinv(xtx)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - pinv rarely fails
        raise DegenerateDesign("X'X singular beyond pseudo-inverse fallback") from exc
    cov = bread @ omega @ bread
    return np.maximum(np.diag(cov), 0.0)


def tsls(
    response,
    endogenous,
    instrument,
    controls=None,
    weak_t_floor: float = 0.0,
) -> RegressionFit:
    """Two-stage least squares of ``response`` on one endogenous regressor.

    First stage regresses the endogenous variable on (intercept, instrument,
    controls); the second stage swaps the fitted values in. The returned fit
    is the second stage, ordered (intercept, fitted endogenous, controls),
    with the first stage attached. A weak first stage (|t| on the instrument
    below ``weak_t_floor``) only warns: ensemble members must always return.
    """
    y = np.asarray(response, dtype=float).ravel()
    x = np.asarray(endogenous, dtype=float).ravel()
    z = np.asarray(instrument, dtype=float).ravel()
    if not (y.size == x.size == z.size):
        raise DimensionMismatch("response/endogenous/instrument lengths differ")
    if controls is None:
        W = np.empty((y.size, 0))
    else:
        W = _as_design(controls, y.size)
    first = ols(np.column_stack([z, W]), x, add_intercept=True)
    if weak_t_floor > 0.0:
        var_z = newey_west_variance(first, lag_truncation=0)[1]
        t_z = abs(first.coefficients[1]) / np.sqrt(var_z) if var_z > 0 else np.inf
        if t_z < weak_t_floor:
            warnings.warn(
                f"first-stage |t|={t_z:.3f} below floor {weak_t_floor}",
                WeakFirstStage,
                stacklevel=2,
            )
    second = ols(np.column_stack([first.fitted, W]), y, add_intercept=True)
    second.first_stage = first
    return second
