"""Training hyperparameters and the linear learning-rate schedule."""

from pydantic import BaseModel, ConfigDict, Field, model_validator

from camadapt.types import NormKind


class TrainConfig(BaseModel):
    """Hyperparameters of a training run.

    The same model configures classifier training and adaptation; the defaults
    are those of adaptation.

    Attributes:
        epochs (int): Number of passes over the training images.
        lr_start (float): Learning rate at epoch 0.
        lr_end (float): Learning rate after the last epoch.
        lambda1 (float): Identity loss weight.
        lambda2 (float): Cycle loss weight.
        batch_size (int): Images per batch and domain.
        seed (int): Seed of weight initialization and batch order.
        image_size (int): Side length of training images.
        monitor_set_size (int): Fixed target images shown in monitor grids.
        checkpoint_every (int): Steps between loss rows, grids and checkpoints.
        beta1 (float): Adam first-moment decay.
        beta2 (float): Adam second-moment decay.
        norm (NormKind): Norm of the cycle and identity losses.
        non_saturating (bool): Use the non-saturating generator objective.
    """

    epochs: int = Field(default=200, ge=1)
    lr_start: float = Field(default=1e-4, gt=0)
    lr_end: float = Field(default=1e-5, gt=0)
    lambda1: float = Field(default=0.2, ge=0)
    lambda2: float = Field(default=5.0, ge=0)
    batch_size: int = Field(default=16, ge=1)
    seed: int = 0
    image_size: int = Field(default=64, ge=16)
    monitor_set_size: int = Field(default=8, ge=0)
    checkpoint_every: int = Field(default=100, ge=1)
    beta1: float = Field(default=0.5, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    norm: NormKind = "l2"
    non_saturating: bool = False

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_schedule(self) -> "TrainConfig":
        if self.lr_start < self.lr_end:
            msg = f"lr_start {self.lr_start} must be >= lr_end {self.lr_end}"
            raise ValueError(msg)
        return self


def lr_at(config: TrainConfig, epoch: float) -> float:
    """Learning rate at a fractional epoch, decaying linearly.

    Args:
        config: The training config.
        epoch: Elapsed epochs in ``[0, config.epochs]``.

    Returns:
        float: ``lr_start`` at 0 and exactly ``lr_end`` at ``config.epochs``.

    Raises:
        ValueError: If the epoch is out of range.
    """
    if not 0 <= epoch <= config.epochs:
        msg = f"Epoch {epoch} outside [0, {config.epochs}]"
        raise ValueError(msg)
    t = epoch / config.epochs
    return (1.0 - t) * config.lr_start + t * config.lr_end


def classifier_train_config(**overrides: object) -> TrainConfig:
    """Defaults for classifier training on the desk-scale benchmark."""
    defaults: dict[str, object] = {
        "epochs": 30,
        "lr_start": 1e-3,
        "lr_end": 1e-4,
        "batch_size": 32,
        "beta1": 0.9,
    }
    return TrainConfig.model_validate(defaults | overrides)
