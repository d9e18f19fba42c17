"""
Модели конфигурации запуска
"""
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .base import BufferMode, GeneratorSignal, TrainingMode
from .constants import (CLASSIFIER_DEFAULTS, EVALUATION_DEFAULTS, NETWORK_DEFAULTS,
                        REWARD_DEFAULTS, TRAIN_DEFAULTS)


class CalibrationMode(Enum):
    """Как классификатор получает вероятности"""
    SOFTMAX = "softmax"
    PLATT = "platt"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid')


class RewardConfig(StrictModel):
    """Гиперпараметры вознаграждения (ε, α, C, λ)"""
    epsilon: float = Field(REWARD_DEFAULTS['epsilon'], ge=0.0, le=1.0)
    alpha: float = Field(REWARD_DEFAULTS['alpha'], ge=0.0, le=1.0)
    truncation_constant: float = Field(REWARD_DEFAULTS['truncation_constant'], ge=0.0)
    lam: float = Field(REWARD_DEFAULTS['lam'], ge=0.0)


class ClassifierParams(StrictModel):
    """Гиперпараметры одного обучения классификатора"""
    regularization: float = Field(CLASSIFIER_DEFAULTS['regularization_grid'][1], ge=0.0)
    learning_rate: float = Field(CLASSIFIER_DEFAULTS['learning_rate_grid'][0], gt=0.0)
    epochs: int = Field(CLASSIFIER_DEFAULTS['epochs'], ge=1)
    mode: CalibrationMode = CalibrationMode.SOFTMAX
    full_batch_limit: int = Field(CLASSIFIER_DEFAULTS['full_batch_limit'], ge=1)
    minibatch_size: int = Field(CLASSIFIER_DEFAULTS['minibatch_size'], ge=1)


class GridSearchSpec(StrictModel):
    """Сетка поиска гиперпараметров классификатора"""
    regularization_grid: List[float] = Field(default_factory=lambda: list(CLASSIFIER_DEFAULTS['regularization_grid']),
                                             min_length=1)
    learning_rate_grid: List[float] = Field(default_factory=lambda: list(CLASSIFIER_DEFAULTS['learning_rate_grid']),
                                            min_length=1)
    folds: int = Field(CLASSIFIER_DEFAULTS['folds'], ge=2)
    epochs: int = Field(CLASSIFIER_DEFAULTS['epochs'], ge=1)
    mode: CalibrationMode = CalibrationMode.SOFTMAX

    @field_validator('regularization_grid')
    @classmethod
    def _non_negative(cls, values: List[float]) -> List[float]:
        if any(v < 0 for v in values):
            raise ValueError("regularization candidates must be >= 0")
        return values

    @field_validator('learning_rate_grid')
    @classmethod
    def _positive(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values):
            raise ValueError("learning rate candidates must be > 0")
        return values

    def candidates(self) -> List[ClassifierParams]:
        """Кандидаты в порядке разрешения ничьих: меньшая регуляризация, затем меньший шаг"""
        return [ClassifierParams(regularization=reg, learning_rate=lr, epochs=self.epochs, mode=self.mode)
                for reg in sorted(self.regularization_grid)
                for lr in sorted(self.learning_rate_grid)]


class TrainConfig(StrictModel):
    """Параметры цикла обучения ActiveGAN"""
    iterations: int = Field(TRAIN_DEFAULTS['iterations'], ge=1)
    batch_size: int = Field(TRAIN_DEFAULTS['batch_size'], ge=1)
    warmup_iterations: int = Field(TRAIN_DEFAULTS['warmup_iterations'], ge=0)
    buffer_size: int = Field(TRAIN_DEFAULTS['buffer_size'], ge=1)
    d_update_every: int = Field(TRAIN_DEFAULTS['d_update_every'], ge=1)
    lr_generator: float = Field(TRAIN_DEFAULTS['learning_rate'], gt=0.0)
    lr_discriminator: float = Field(TRAIN_DEFAULTS['learning_rate'], gt=0.0)
    lr_policy: float = Field(TRAIN_DEFAULTS['learning_rate'], gt=0.0)
    latent_dim: int = Field(TRAIN_DEFAULTS['latent_dim'], ge=1)
    hidden_width: int = Field(NETWORK_DEFAULTS['hidden_width'], ge=1)
    hidden_layers: int = Field(NETWORK_DEFAULTS['hidden_layers'], ge=1)
    mode: TrainingMode = TrainingMode.ACTIVEGAN
    buffer_mode: BufferMode = BufferMode.MIXED
    generator_signal: GeneratorSignal = GeneratorSignal.EXPLORATION
    exploration_scale: float = Field(TRAIN_DEFAULTS['exploration_scale'], gt=0.0, le=1.0)
    checkpoint_every: int = Field(TRAIN_DEFAULTS['checkpoint_every'], ge=1)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    classifier: GridSearchSpec = Field(default_factory=GridSearchSpec)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode='after')
    def _check_schedule(self) -> 'TrainConfig':
        if self.warmup_iterations >= self.iterations:
            raise ValueError(f"warmup_iterations ({self.warmup_iterations}) must be < iterations ({self.iterations})")
        if self.buffer_size < self.batch_size:
            raise ValueError(f"buffer_size ({self.buffer_size}) must be >= batch_size ({self.batch_size})")
        return self

    @property
    def hidden(self) -> List[int]:
        return [self.hidden_width] * self.hidden_layers


class SyntheticSpec(StrictModel):
    """Синтетический двумерный набор"""
    family: Literal['gaussian-mixture', 'moons', 'rings'] = 'gaussian-mixture'
    num_classes: int = Field(3, ge=2)
    per_class: int = Field(100, ge=1)
    noise: float = Field(0.5, ge=0.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)


class IdxSpec(StrictModel):
    """Пара файлов IDX (изображения и метки)"""
    images: Path
    labels: Path

    @field_validator('images', 'labels')
    @classmethod
    def _exists(cls, path: Path) -> Path:
        if not path.is_file():
            raise ValueError(f"file does not exist: {path}")
        return path


class DatasetConfig(StrictModel):
    """Источник данных и доли разбиения"""
    synthetic: Optional[SyntheticSpec] = None
    idx: Optional[IdxSpec] = None
    split: Tuple[float, float, float] = (0.6, 0.2, 0.2)

    @field_validator('split')
    @classmethod
    def _fractions(cls, split: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if any(f < 0 for f in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {split}")
        if split[0] <= 0:
            raise ValueError("train fraction must be positive")
        return split

    @model_validator(mode='after')
    def _one_source(self) -> 'DatasetConfig':
        if (self.synthetic is None) == (self.idx is None):
            raise ValueError("exactly one of 'synthetic' or 'idx' must be set")
        return self


SweepAxis = Literal['epsilon', 'alpha', 'lam', 'filter_margin', 'labeled_size']


class EvaluationConfig(StrictModel):
    """Параметры протокола оценки"""
    comparison: Literal['baseline', 'activegan', 'four-way'] = 'four-way'
    generated_count: int = Field(EVALUATION_DEFAULTS['generated_count'], ge=0)
    filter_margin: float = Field(EVALUATION_DEFAULTS['filter_margin'], ge=0.0, le=1.0)
    labeled_size: Optional[int] = Field(None, ge=2)
    classifier: ClassifierParams = Field(default_factory=ClassifierParams)
    sweep_axis: SweepAxis = 'epsilon'
    sweep_values: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0])
    scatter: bool = True
    html: bool = False


class RunConfig(StrictModel):
    """Полная конфигурация запуска"""
    dataset: DatasetConfig
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    output_dir: Path = Path('runs/default')
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode='after')
    def _propagate_seed(self) -> 'RunConfig':
        if 'seed' in self.train.model_fields_set and self.train.seed != self.seed:
            raise ValueError(f"train.seed ({self.train.seed}) conflicts with seed ({self.seed})")
        self.train.seed = self.seed
        return self
