"""Desk-scale rectified-flow sampling lab.

Euler flow sampling with velocity-level guidance (classifier-free,
autoguidance, and momentum extrapolation against the trajectory's own
velocity history), validated against closed-form Gaussian-mixture fields
and a Monte-Carlo oracle, with a metrics and sweep harness on top.
"""

from .errors import (
    ConfigError,
    FlowLabError,
    InsufficientOverlapError,
    InvalidStateError,
    NumericError,
    TrainingDivergedError,
)
from .flow import (
    CountingField,
    TimeGrid,
    TrajectoryRecord,
    VelocityField,
    data_estimate,
    euler_step,
    integrate,
    make_shifted_grid,
    make_uniform_grid,
)
from .guidance import (
    AutoguidedField,
    EffectiveVelocity,
    GuidanceConfig,
    MomentumState,
    auto_velocity,
    cfg_velocity,
    mg_step,
    momentum_read,
    sample_mg,
)
from .metrics import (
    MetricReport,
    SampleSet,
    evaluate_samples,
    gaussian_frechet,
    knn_precision_recall,
    mmd2_rbf,
    sqrtm_psd_2x2,
)
from .mixture import (
    AnalyticField,
    GaussianMixture,
    MarginalMixture,
    load_mixture,
    log_density_and_score,
    marginal_at,
    mc_velocity,
    optimal_velocity,
    responsibilities,
    score_velocity_identity_check,
    smoothed_velocity,
    tree_mixture_path,
    unconditional_velocity,
)
from .mlp import (
    MlpField,
    MlpParams,
    TrainConfig,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
