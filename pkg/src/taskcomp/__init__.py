"""Task-aware bottleneck compression toolkit.

Learns minimal compressed representations of sensory inputs co-designed
against a frozen, pre-trained task model: exact closed-form solutions in
the linear case, gradient training for small MLPs, and a framed wire
protocol for the robot-to-server split.
"""

from .config import SCHEMES, TrainConfig
from .datagen import (
    LabeledDataset,
    TimeseriesWindowSpec,
    gen_cluster_classification,
    gen_gaussian_regression,
    gen_linear_task,
    gen_timeseries_windows,
)
from .linalg import SvdResult, numerical_rank, svd_compact
from .linear import (
    LinearCodesign,
    LossReport,
    descend_linear,
    eval_linear_loss,
    linear_gradients,
    solve_theorem1,
)
from .nn import (
    DenseLayer,
    GradTape,
    Mlp,
    apply_grads,
    backward,
    backward_from,
    forward,
    freeze,
    init_mlp,
    load_mlp,
    save_mlp,
    split_at,
)
from .training import (
    CodesignModel,
    MetricsRow,
    eval_uncompressed,
    pretrain_task,
    summarize_dominance,
    sweep_bottleneck,
    train_codesign,
    train_split_codesign,
    train_task_agnostic,
)

__version__ = "0.1.0"
