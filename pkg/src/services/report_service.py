"""
Сервис запусков: команды train, generate, evaluate и sweep с манифестом
записанных файлов
"""
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional

from .base import BaseService, ContractError, DivergenceError, ReportType, RunManifest
from .config_manager import ConfigManager
from .config_models import RunConfig
from .constants import FILE_PATHS
from .data_manager import DataManager, LabeledDataset
from .evaluation import EvaluationService, scatter_export, select_hard_samples, sweep, write_sweep_csv
from .logger_config import ActiveGANLogger
from .numerics import SeededRng
from .report_generator_factory import ReportGeneratorFactory
from .training import (ActiveGANTrainer, RunArtifacts, load_checkpoint, sample_generator, save_checkpoint,
                       write_samples_csv, write_trace_csv)


class RunOutput:
    """Каталог запуска: лог-файл и манифест"""

    def __init__(self, out_dir, command: str):
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(command=command)
        self._handler = None

    def __enter__(self) -> 'RunOutput':
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._handler = ActiveGANLogger.attach_file_handler(str(self.path(FILE_PATHS['log'])))
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is not None:
            self.manifest.status = 'diverged' if isinstance(exc, DivergenceError) else 'error'
            self.manifest.error = str(exc)
        with open(self.path(FILE_PATHS['manifest']), 'w', encoding='utf-8') as f:
            json.dump(asdict(self.manifest), f, indent=2, ensure_ascii=False)
        if self._handler is not None:
            ActiveGANLogger.detach_file_handler(self._handler)
        return False

    def path(self, name: str) -> Path:
        """Путь внутри каталога запуска; файл вносится в манифест"""
        self.manifest.declare(name)
        return self.out_dir / name


class ReportService(BaseService):
    """Оркестрация команд CLI"""

    def __init__(self, config_manager: Optional[ConfigManager] = None, jobs: int = 1):
        super().__init__(config_manager)
        self.config_manager = config_manager
        self.jobs = jobs

    def _config(self) -> RunConfig:
        if self.config_manager is None:
            raise ContractError("This command needs a configuration file")
        return self.config_manager.load()

    def _write_config_echo(self, run: RunOutput) -> None:
        self.config_manager.write_resolved(run.path(FILE_PATHS['resolved_config']))

    def _write_artifacts(self, run: RunOutput, artifacts: RunArtifacts) -> None:
        write_trace_csv(artifacts.traces, run.path(FILE_PATHS['trace']))
        write_samples_csv(artifacts.samples, run.path(FILE_PATHS['samples']), artifacts.standardizer,
                          dim=artifacts.generator.sample_dim)
        save_checkpoint(run.path(FILE_PATHS['final_checkpoint']), artifacts)
        for checkpoint in artifacts.checkpoints:
            run.manifest.declare(str(Path(checkpoint).relative_to(run.out_dir)))

    def cmd_train(self) -> Dict[str, Any]:
        """Обучение ActiveGAN: контрольные точки, трасса, образцы и эхо конфигурации"""
        cfg = self._config()
        train, _, _ = DataManager(cfg.dataset).prepare_splits(cfg.seed)
        with RunOutput(cfg.output_dir, 'train') as run:
            self._write_config_echo(run)
            trainer = ActiveGANTrainer(cfg.train, run.out_dir / FILE_PATHS['checkpoint_dir'])
            try:
                artifacts = trainer.train(train)
            except DivergenceError as e:
                write_trace_csv(e.traces, run.path(FILE_PATHS['trace']))
                for checkpoint in sorted((run.out_dir / FILE_PATHS['checkpoint_dir']).glob('*.agan')):
                    run.manifest.declare(str(checkpoint.relative_to(run.out_dir)))
                raise
            self._write_artifacts(run, artifacts)
            self.logger.info(f"Training run written to {run.out_dir}")
            return {'message': 'Training finished', 'iterations': len(artifacts.traces),
                    'samples': len(artifacts.samples), 'files': list(run.manifest.files)}

    def cmd_generate(self, checkpoint, count: int, out_dir, seed: int = 0,
                     label: Optional[int] = None) -> Dict[str, Any]:
        """count образцов из сохраненного генератора с колонками label, u_m, u_le, r"""
        bundle = load_checkpoint(checkpoint)
        if count < 0:
            raise ContractError(f"Sample count must be non-negative, got {count}")
        if label is not None and not 0 <= label < bundle.generator.num_classes:
            raise ContractError(f"Class {label} outside [0, {bundle.generator.num_classes})")
        samples = sample_generator(bundle.generator, bundle.classifier, bundle.reward, count,
                                   SeededRng(seed, 'generate'), label, bundle.policy)
        with RunOutput(out_dir, 'generate') as run:
            path = write_samples_csv(samples, run.path(FILE_PATHS['samples']), bundle.standardizer,
                                     dim=bundle.generator.sample_dim)
            self.logger.info(f"Wrote {len(samples)} samples to {path}")
            return {'message': 'Samples generated', 'count': len(samples), 'files': list(run.manifest.files)}

    def cmd_evaluate(self, html: bool = False) -> Dict[str, Any]:
        """Отчет об оценке (JSON, по запросу HTML) и CSV для диаграммы рассеяния"""
        cfg = self._config()
        train, _, test = DataManager(cfg.dataset).prepare_splits(cfg.seed)
        with RunOutput(cfg.output_dir, 'evaluate') as run:
            self._write_config_echo(run)
            service = EvaluationService(cfg)
            report = service.compare(train, test)
            json_report = ReportGeneratorFactory.create_generator(ReportType.JSON).generate(report)
            run.path(FILE_PATHS['report_json']).write_text(json_report, encoding='utf-8')
            if html or cfg.evaluation.html:
                page = ReportGeneratorFactory.create_generator(ReportType.HTML).generate(report)
                run.path(FILE_PATHS['report_html']).write_text(page, encoding='utf-8')
            if cfg.evaluation.scatter and 'activegan' in service.last_artifacts:
                artifacts = service.last_artifacts['activegan']
                hard = select_hard_samples(test.normalized(artifacts.standardizer), artifacts.classifier,
                                           cfg.evaluation.filter_margin)
                hard_raw = LabeledDataset(hard.denormalized_features(), hard.labels, test.num_classes)
                scatter_export(train, service.last_generated['activegan'], hard_raw,
                               run.path(FILE_PATHS['scatter']))
            return {'message': 'Evaluation finished', 'report': report.model_dump(exclude_none=True),
                    'files': list(run.manifest.files)}

    def cmd_sweep(self) -> Dict[str, Any]:
        """Прогон по сетке значений одного гиперпараметра"""
        cfg = self._config()
        train, _, test = DataManager(cfg.dataset).prepare_splits(cfg.seed)
        axis, values = cfg.evaluation.sweep_axis, cfg.evaluation.sweep_values
        with RunOutput(cfg.output_dir, 'sweep') as run:
            self._write_config_echo(run)
            self.logger.info(f"Sweeping {axis} over {values} with {self.jobs} jobs")
            rows = sweep(axis, values, cfg, train, test, self.jobs)
            write_sweep_csv(rows, run.path(FILE_PATHS['sweep']))
            failed = [row for row in rows if row.error]
            if failed:
                self.logger.warning(f"{len(failed)} of {len(rows)} sweep rows failed")
            return {'message': 'Sweep finished', 'rows': len(rows), 'failed': len(failed),
                    'files': list(run.manifest.files)}
