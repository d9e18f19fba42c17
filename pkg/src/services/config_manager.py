"""
Менеджер конфигурации запуска: чтение JSON, переопределения из CLI,
валидация и эхо разрешенной конфигурации
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError as PydanticValidationError

from .base import BaseService, ConfigurationError
from .config_models import RunConfig
from .validators import ConfigValidator


class ConfigManager(BaseService):
    """Менеджер конфигурации одного запуска"""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        super().__init__(None)
        self.config_path = Path(config_path) if config_path else None
        self.overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        self._raw: Dict[str, Any] = {}
        self._config: Optional[RunConfig] = None

    def _load_config_file(self) -> Dict[str, Any]:
        """Загружает JSON-файл конфигурации"""
        if self.config_path is None:
            raise ConfigurationError("No configuration file given", fields=['--config'])
        if not self.config_path.is_file():
            raise ConfigurationError(f"Config file {self.config_path} not found", fields=['--config'])
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {self.config_path} is not valid JSON: {e}", fields=['<root>'])
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config file {self.config_path} must hold a JSON object", fields=['<root>'])
        self.logger.debug(f"Loaded config sections {sorted(data)} from {self.config_path}")
        return data

    def _apply_overrides(self, data: Dict[str, Any]) -> Dict[str, Any]:
        ConfigValidator.validate_override(self.overrides)
        data = dict(data)
        if 'seed' in self.overrides:
            data['seed'] = self.overrides['seed']
            if isinstance(data.get('train'), dict) and 'seed' in data['train']:
                data['train'] = {**data['train'], 'seed': self.overrides['seed']}
        if 'output_dir' in self.overrides:
            data['output_dir'] = str(self.overrides['output_dir'])
        return data

    def load(self) -> RunConfig:
        """Читает, дополняет и валидирует конфигурацию; ошибки перечисляют все поля"""
        if self._config is not None:
            return self._config
        self._raw = self._apply_overrides(self._load_config_file())
        try:
            self._config = RunConfig.model_validate(self._raw)
        except PydanticValidationError as e:
            error = ConfigValidator.to_configuration_error(e, str(self.config_path))
            self.logger.error(str(error))
            raise error
        self.logger.info(f"Configuration validated: seed={self._config.seed}, output={self._config.output_dir}")
        return self._config

    @classmethod
    def from_dict(cls, data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """Валидация конфигурации, заданной словарем"""
        manager = cls(None, overrides)
        try:
            return RunConfig.model_validate(manager._apply_overrides(data))
        except PydanticValidationError as e:
            raise ConfigValidator.to_configuration_error(e, '<dict>')

    @staticmethod
    def resolved(config: RunConfig) -> Dict[str, Any]:
        """Конфигурация со всеми значениями по умолчанию"""
        return config.model_dump(mode='json')

    def write_resolved(self, path) -> Path:
        """Записывает эхо разрешенной конфигурации"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.resolved(self.load()), f, indent=2, ensure_ascii=False)
        return path
