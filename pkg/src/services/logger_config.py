"""
Конфигурация логирования для ActiveGAN
"""
import logging
import os
import sys
from typing import Optional

from dotenv import load_dotenv

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


class ActiveGANLogger:
    """Реестр настроенных логгеров"""

    _loggers = {}
    _file_handler = None

    @classmethod
    def get_logger(cls, name: str, level: int = logging.INFO) -> logging.Logger:
        """Получает настроенный логгер"""
        if name not in cls._loggers:
            logger = logging.getLogger(f"activegan.{name}")
            logger.setLevel(level)

            for handler in logger.handlers[:]:
                logger.removeHandler(handler)

            formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)

            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setLevel(level)
            console_handler.setFormatter(formatter)
            logger.addHandler(console_handler)

            # Файловый обработчик подключается через attach_file_handler
            logger.propagate = False

            cls._loggers[name] = logger

        return cls._loggers[name]

    @classmethod
    def set_level(cls, level: int) -> None:
        """Меняет уровень у всех выданных логгеров"""
        for logger in cls._loggers.values():
            logger.setLevel(level)
            for handler in logger.handlers:
                if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
                    handler.setLevel(level)

    @classmethod
    def attach_file_handler(cls, log_file: str) -> logging.Handler:
        """Пишет все логгеры дополнительно в файл запуска"""
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        for logger in cls._loggers.values():
            logger.addHandler(file_handler)
        cls._file_handler = file_handler
        return file_handler

    @classmethod
    def detach_file_handler(cls, handler: logging.Handler) -> None:
        for logger in cls._loggers.values():
            if handler in logger.handlers:
                logger.removeHandler(handler)
        handler.close()
        cls._file_handler = None


def resolve_log_level(default: int = logging.INFO) -> int:
    """Уровень логирования из окружения (.env поддерживается)"""
    load_dotenv()
    name = os.getenv('ACTIVEGAN_LOG_LEVEL')
    if not name:
        return default
    level = logging.getLevelName(name.upper())
    return level if isinstance(level, int) else default


def get_logger(name: str, level: Optional[int] = None) -> logging.Logger:
    """Получает логгер для указанного имени"""
    logger = ActiveGANLogger.get_logger(name, level if level is not None else logging.INFO)
    if ActiveGANLogger._file_handler is not None and ActiveGANLogger._file_handler not in logger.handlers:
        logger.addHandler(ActiveGANLogger._file_handler)
    return logger


def setup_logging(level: Optional[int] = None) -> int:
    """Настраивает систему логирования"""
    if level is None:
        level = resolve_log_level()
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt=LOG_DATEFMT,
                        handlers=[logging.StreamHandler(sys.stdout)])
    ActiveGANLogger.set_level(level)
    return level
