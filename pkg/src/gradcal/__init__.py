"""gradcal: variance-reduced gradient calibration for continual learning.

A numpy library for training on non-i.i.d. task streams under a memory
budget. It provides a small differentiable model zoo with exact gradients,
synthetic class-incremental / task-free stream generators, a reservoir
replay buffer, five gradient-estimation methods (plain replay, three
snapshot-calibrated variants, and a dynamically calibrated estimator that
tracks the full-history gradient in constant extra memory), the standard
continual-learning metrics, and a seeded experiment CLI.
"""

from .buffer import ReservoirBuffer
from .calib import (
    METHODS,
    CalibratorState,
    GradientEstimate,
    RunResult,
    TrainConfig,
    dgc_combined_estimate,
    dgc_estimate,
    dgc_gamma,
    dgc_stage_end,
    dgc_task_transition,
    er_estimate,
    estimator_variance,
    initial_state,
    run_cil,
    run_tfcl,
    ssvrg_estimate,
    svrg_estimate,
    svrg_prepare,
    task_weights,
)
from .errors import ConfigError, ParseError, StateError
from .metrics import (
    AccuracyMatrix,
    FootprintReport,
    LossTrajectory,
    SmoothnessStats,
    aa,
    equal_footprint_capacity,
    faa,
    faia,
    ff,
    footprint,
    sample_nbytes,
    smoothness_stats,
)
from .model import (
    MODEL_KINDS,
    ConvexityParams,
    LabeledBatch,
    ModelSpec,
    Sample,
    as_batch,
    concat_batches,
    convexity_params,
    finite_diff_gradient,
    full_gradient,
    gradient,
    init_params,
    loss,
    predict_accuracy,
    ridge_minimizer,
    scores,
)
from .stream import (
    CsvSchema,
    StreamConfig,
    Task,
    TaskStream,
    default_stream_config,
    generate_gaussian_cil,
    load_stream_csv,
    save_stream_csv,
    to_tfcl,
)

__version__ = "0.1.0"
