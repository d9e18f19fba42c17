"""
Валидаторы входных данных ActiveGAN
"""
from typing import Any, Dict, List

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from .base import ConfigurationError, ContractError, NumericError, ShapeError
from .constants import NUMERICS


class DataValidator:
    """Проверки массивов и распределений"""

    @staticmethod
    def validate_distribution(probs: Any, field_name: str = "probs", min_classes: int = 1) -> np.ndarray:
        """Проверяет, что строки являются распределениями вероятностей"""
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim not in (1, 2):
            raise ContractError(f"{field_name} must be a vector or a matrix, got shape {probs.shape}")
        if probs.shape[-1] < min_classes:
            raise ContractError(f"{field_name} needs at least {min_classes} classes, got {probs.shape[-1]}")
        if not np.all(np.isfinite(probs)):
            raise ContractError(f"{field_name} contains non-finite values")
        if np.any(probs < 0.0):
            raise ContractError(f"{field_name} contains negative probabilities")
        totals = probs.sum(axis=-1)
        if np.any(np.abs(totals - 1.0) > NUMERICS['distribution_atol']):
            raise ContractError(f"{field_name} rows must sum to 1")
        return probs

    @staticmethod
    def validate_features(features: Any, field_name: str = "features") -> np.ndarray:
        """Матрица признаков N×d без нечисловых значений"""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ShapeError(f"{field_name} must be a matrix, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise NumericError(f"{field_name} contains non-finite values")
        return features

    @staticmethod
    def validate_labels(labels: Any, num_classes: int, field_name: str = "labels") -> np.ndarray:
        """Метки классов в диапазоне [0, K)"""
        labels = np.asarray(labels)
        if labels.ndim != 1:
            raise ShapeError(f"{field_name} must be a vector, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ContractError(f"{field_name} must be integers")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ContractError(f"{field_name} must lie in [0, {num_classes})")
        return labels

    @staticmethod
    def validate_unit_interval(value: float, field_name: str) -> float:
        if not 0.0 <= value <= 1.0:
            raise ContractError(f"{field_name} must lie in [0, 1], got {value}")
        return float(value)


class ConfigValidator:
    """Приведение ошибок pydantic к ConfigurationError"""

    @staticmethod
    def field_errors(error: PydanticValidationError) -> List[str]:
        """Список всех нарушенных полей в виде 'путь: сообщение'"""
        messages = []
        for item in error.errors():
            path = '.'.join(str(part) for part in item['loc']) or '<root>'
            messages.append(f"{path}: {item['msg']}")
        return messages

    @staticmethod
    def to_configuration_error(error: PydanticValidationError, source: str) -> ConfigurationError:
        fields = ConfigValidator.field_errors(error)
        return ConfigurationError(f"Invalid configuration in {source}: " + '; '.join(fields), fields=fields)

    @staticmethod
    def validate_override(overrides: Dict[str, Any]) -> None:
        if 'seed' in overrides and overrides['seed'] is not None and overrides['seed'] < 0:
            raise ConfigurationError("Seed override must be non-negative", fields=['seed'])
