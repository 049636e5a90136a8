"""Training hyperparameters shared by the distillation and reader trainers."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidInputError


@dataclass
class TrainConfig:
    """Hyperparameters for contrastive pretraining, KD finetuning, and reader training.

    ``learning_rate`` defaults to 1e-3, which suits the small hand-rolled
    encoders here; rates tuned for large pretrained encoders (around 1e-5)
    leave these models inside warmup for the whole run.
    """

    temperature: float = 3.0
    kd_weight: float = 1.0
    contrastive_weight: float = 0.0
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    epochs: int = 16
    batch_size: int = 10
    passages_per_question: int = 16
    validation_fraction: float = 1.0
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    refresh_candidates: bool = False
    checkpoint_k: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidInputError("temperature must be > 0")
        if self.kd_weight < 0 or self.contrastive_weight < 0:
            raise InvalidInputError("loss weights must be >= 0")
        if self.kd_weight == 0 and self.contrastive_weight == 0:
            raise InvalidInputError("at least one loss weight must be positive")
        if self.validation_fraction <= 0 or self.validation_fraction > 1:
            raise InvalidInputError("validation_fraction must be in (0, 1]")
        if self.batch_size < 1 or self.passages_per_question < 2:
            raise InvalidInputError("batch_size >= 1 and passages_per_question >= 2 required")
