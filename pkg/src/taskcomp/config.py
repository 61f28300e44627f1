"""Training configuration shared by the linear descent and the MLP trainers."""

from dataclasses import dataclass, replace

from .errors import ConfigError

SCHEMES = ("tasknet", "fully_task_aware", "task_agnostic", "end_to_end")


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run.

    ``lam`` weights the reconstruction term against the task term;
    ``scheme`` selects which parameters train and which loss drives them.
    ``hidden == 0`` requests single-layer linear encoder/decoder (used to
    cross-check the trainer against the closed-form linear solution).
    ``clip_norm <= 0`` disables clipping.  ``resample`` controls whether the
    linear descent draws a fresh Gaussian batch per step or reuses one fixed
    batch (fixed batches make the loss trace exactly monotone).
    """

    steps: int = 2000
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    lam: float = 0.0
    z_dim: int = 4
    scheme: str = "tasknet"
    hidden: int = 64
    eval_every: int = 100
    clip_norm: float = 10.0
    vae: bool = False
    use_dataset_labels: bool = False
    log_task_loss: bool = True
    resample: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.z_dim < 1:
            raise ConfigError("z_dim must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda weight must be nonnegative")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "fully_task_aware" and self.lam != 0.0:
            raise ConfigError("fully_task_aware requires lambda = 0")


def with_overrides(cfg: TrainConfig, **kwargs) -> TrainConfig:
    return replace(cfg, **kwargs)
