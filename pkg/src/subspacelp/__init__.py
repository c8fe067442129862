"""Impulse responses by random-subspace local projections.

Estimate the dynamic response of a variable to an identified shock by
averaging local projections over many random subsets of a large candidate
control set, with IV and cumulative (SVAR-style) identification, bootstrap
or model-averaging error bands, and simulators with analytically known
responses for validation.
"""

__version__ = "0.1.0"

from .data import (
    PCAResult,
    TimeSeriesPanel,
    apply_tcodes,
    build_design,
    factor_structure_report,
    load_csv,
    pca,
)
from .dgp import (
    DFMParams,
    DGPOutput,
    FiscalParams,
    gen_dfm_instrument,
    gen_informational,
    gen_instrument,
    make_default_dfm_params,
    simulate_dfm,
    simulate_fiscal,
    true_dfm_irf,
    true_fiscal_irf,
)
from .inference import (
    BootstrapConfig,
    block_bootstrap_bands,
    buckland_bands,
    buckland_sd,
    rslp_newey_west_variances,
)
from .linreg import RegressionFit, newey_west_variance, ols, tsls
from .lp import (
    IRFEstimate,
    LPSpec,
    SubspaceEnsemble,
    bic_softmax_weights,
    estimate_base_lp,
    estimate_falp,
    estimate_lp_iv,
    estimate_lp_svar,
    estimate_rslp,
    first_stage_bic,
    make_cumulative_target,
    normalize_unit_response,
    select_k_by_bic,
)
from .mc import (
    EstimatorSettings,
    ExperimentConfig,
    ScoreTable,
    SweepResult,
    run_experiment,
    sweep_subspace_dimension,
)
from .subspace import (
    CategoryLayout,
    SelectionDraw,
    allocate_category_dims,
    draw_by_category,
    draw_uniform,
)

__all__ = [name for name in dir() if not name.startswith("_")]
