"""Adaptive Bayesian identification of an unknown coherent state.

A particle filter tracks the posterior over the state's complex amplitude
while an adaptive controller picks displacement pulses for a simulated
binary vacuum detector.  The bench module compares controller variants
over paired ensembles; the CLI exposes runs, ensembles, outlier tables,
policy grid searches and a filter-versus-grid oracle check.
"""

from .bench import (
    EnsembleConfig,
    ErrorCurve,
    GridSearchResult,
    OutlierTable,
    crossing_check,
    grid_search,
    median,
    outlier_table,
    run_ensemble,
)
from .experiment import (
    OutlierConfig,
    RunAborted,
    RunConfig,
    RunResult,
    ShotRecord,
    derive_rng,
    normalized_sq_error,
    run_single,
    run_with_outlier_correction,
    sample_true_state,
)
from .gridbayes import GridPosterior
from .model import (
    NoiseModel,
    Outcome,
    PhasePoint,
    likelihood_photon,
    likelihood_vacuum,
    likelihood_with_noise,
    q_function,
    simulate_shot,
)
from .policy import (
    FocusRegion,
    InvalidState,
    Phase,
    PolicyParams,
    PolicyState,
    choose_beta_focused,
    choose_beta_searching,
    focus_region,
    policy_step,
    power_law_radius,
    r_alpha,
)
from .smc import (
    DegenerateWeights,
    ParticleCloud,
    PosteriorMoments,
    ResampleConfig,
    bayes_update,
    effective_sample_size,
    init_uniform_disk_prior,
    liu_west_resample,
    maybe_resample,
    moments,
)

__version__ = "0.1.0"
