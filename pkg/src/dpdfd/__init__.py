"""Differentially private data-free distillation for small dense networks.

A pretrained "sensitive" classifier (the teacher) is converted into a
private student by sanitizing the gradients of the student's outputs --
per-example normalization to a bound C plus Gaussian noise -- and
training both the student and a synthetic-data generator against the
resulting private targets. A Renyi-DP accountant tracks the (epsilon,
delta) cost of every teacher query.
"""

__version__ = "0.1.0"

from .accountant import (
    AccountingParams,
    EpsilonReport,
    PrivacyLedger,
    calibrate_sigma,
    compose,
    default_lambda_grid,
    max_iterations,
    optimal_epsilon,
    rdp_per_query,
    rdp_to_dp,
    sensitivity,
)
from .backend import active_backend
from .datasets import LabeledDataset, load_grid_csv, make_blobs, pretrain_teacher, save_grid_csv
from .distill import (
    ConvergenceSummary,
    DpConfig,
    EnsembleSpec,
    TrainReport,
    convergence_monitor,
    direct_dp_train,
    distillation_loss,
    dp_target,
    dpdfd_train,
    generator_loss,
    multi_model_train,
    student_loss,
)
from .dpmech import (
    MechanismConfig,
    NoiseSource,
    clip_example,
    normalize_example,
    sanitize_batch,
)
from .errors import (
    DegenerateInputError,
    DimensionError,
    DpdfdError,
    InfeasibleBudgetError,
    NumericalError,
    ValidationError,
)
from .nnkit import (
    ForwardTrace,
    Layer,
    MlpModel,
    accuracy,
    backward,
    forward,
    init_mlp,
    load_model,
    save_model,
    sgd_step,
    softmax_cross_entropy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
