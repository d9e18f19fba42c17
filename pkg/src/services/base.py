"""
Базовые классы, исключения и общие структуры данных ActiveGAN
"""
from abc import ABC, abstractmethod
from typing import List, Optional
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .logger_config import get_logger


class TrainingMode(Enum):
    """Режимы обучения генератора"""
    ACTIVEGAN = "activegan"
    ACGAN = "acgan"


class BufferMode(Enum):
    """Как буфер участвует в функции неопределенности"""
    MIXED = "mixed"
    FRESH = "fresh"


class GeneratorSignal(Enum):
    """Откуда генератор получает сигнал неопределенности"""
    EXPLORATION = "exploration"
    POLICY = "policy"


class ReportType(Enum):
    """Форматы отчета об оценке"""
    JSON = "json"
    HTML = "html"


@dataclass
class GeneratedSample:
    """Сгенерированный образец с метриками неопределенности"""
    z: np.ndarray
    y: int
    x_hat: np.ndarray
    u_m: float
    u_le: float
    reward: float
    log_lik: float = 0.0


@dataclass
class TraceRow:
    """Строка трассы обучения"""
    iteration: int
    loss_d: float
    loss_g_acgan: float
    loss_unc: float
    mean_reward: float
    mean_u_m: float
    mean_u_le: float
    buffer_len: int

    def as_tuple(self) -> tuple:
        return (self.iteration, self.loss_d, self.loss_g_acgan, self.loss_unc,
                self.mean_reward, self.mean_u_m, self.mean_u_le, self.buffer_len)


@dataclass
class RunManifest:
    """Список всех файлов, записанных командой"""
    command: str
    files: List[str] = field(default_factory=list)
    status: str = "success"
    error: Optional[str] = None

    def declare(self, path) -> str:
        path = str(path)
        if path not in self.files:
            self.files.append(path)
        return path


class BaseService(ABC):
    """Базовый класс для всех сервисов"""

    def __init__(self, config_manager=None):
        self.config_manager = config_manager
        self.logger = get_logger(self.__class__.__name__)

    def _handle_error(self, error: Exception, context: str = "") -> None:
        """Обработка ошибок с логированием"""
        error_msg = f"Error in {self.__class__.__name__}"
        if context:
            error_msg += f" ({context})"
        error_msg += f": {str(error)}"
        self.logger.error(error_msg)
        raise error


class ReportGenerator(ABC):
    """Абстрактный класс для генераторов отчетов"""

    @abstractmethod
    def generate(self, report, title: Optional[str] = None) -> str:
        """Генерирует отчет"""
        pass


class ActiveGANError(Exception):
    """Корневая ошибка библиотеки"""
    pass


class ValidationError(ActiveGANError):
    """Нарушение контракта или предусловия"""
    pass


ContractError = ValidationError


class ShapeError(ValidationError):
    """Несовпадение размерностей"""
    pass


class NumericError(ActiveGANError):
    """Нечисловые значения или выход из области определения"""
    pass


class DomainError(NumericError):
    """Аргумент вне области определения (например, log от неположительного)"""
    pass


class ConfigurationError(ActiveGANError):
    """Ошибка конфигурации"""

    def __init__(self, message: str, fields: Optional[List[str]] = None):
        super().__init__(message)
        self.fields = fields or []


class FormatError(ActiveGANError):
    """Ошибка бинарного формата"""

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class LengthError(FormatError):
    """Файл обрезан"""
    pass


class ConsistencyError(FormatError):
    """Количества записей не согласованы"""
    pass


class DivergenceError(ActiveGANError):
    """Обучение разошлось"""

    def __init__(self, message: str, iteration: int, checkpoint: Optional[str] = None,
                 traces: Optional[list] = None):
        super().__init__(f"{message} at iteration {iteration}; last good checkpoint: {checkpoint}")
        self.iteration = iteration
        self.checkpoint = checkpoint
        # строки трассы до расхождения
        self.traces = traces or []
