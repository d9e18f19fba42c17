"""
Протокол оценки: F-мера, переобучение классификатора на реальных и
сгенерированных данных, статистика отступов, сравнение методов и прогоны
по сетке гиперпараметров
"""
import csv
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError as PydanticValidationError
from sklearn.decomposition import PCA

from .base import BaseService, ContractError, GeneratedSample, ShapeError, TrainingMode
from .classifier import ProbClassifier
from .classifier import train as train_classifier
from .config_models import ClassifierParams, RunConfig, SyntheticSpec, TrainConfig
from .constants import CSV_HEADERS, EVALUATION_DEFAULTS, MESSAGES, TRIAL_DEFAULTS
from .data_manager import LabeledDataset, Standardizer, make_synthetic, stratified_subsample
from .logger_config import get_logger
from .numerics import SeededRng
from .training import RunArtifacts, filtered_acgan_samples, sample_generator, train_activegan
from .uncertainty import smallest_margin
from .validators import ConfigValidator, DataValidator

logger = get_logger('Evaluation')

SWEEP_COLUMNS = ['axis', 'value', 'baseline_f', 'augmented_f', 'acgan_f', 'acgan_filtered_f',
                 'mean_margin', 'frac_below_eps', 'error']


class EvalReport(BaseModel):
    """Отчет об оценке; отсутствующие столбцы не сериализуются"""
    baseline_f: float
    augmented_f: Optional[float] = None
    acgan_f: Optional[float] = None
    acgan_filtered_f: Optional[float] = None
    baseline_per_class: Optional[List[float]] = None
    per_class_delta: Optional[List[float]] = None
    mean_margin: Optional[float] = None
    median_margin: Optional[float] = None
    frac_below_eps: Optional[float] = None
    counts: Optional[Dict[str, int]] = None
    seed: int = 0
    config: Optional[Dict[str, Any]] = None

    def to_json(self) -> str:
        return self.model_dump_json(exclude_none=True, indent=2)

    @property
    def f_columns(self) -> Dict[str, float]:
        """Все посчитанные F-меры по методам"""
        columns = {'baseline': self.baseline_f, 'activegan': self.augmented_f,
                   'acgan': self.acgan_f, 'acgan_filtered': self.acgan_filtered_f}
        return {name: value for name, value in columns.items() if value is not None}


@dataclass
class MarginSummary:
    """Сводка распределения наименьшего отступа"""
    mean: float
    median: float
    frac_below: float
    epsilon: float
    histogram: np.ndarray
    bin_edges: np.ndarray


@dataclass
class SweepRow:
    axis: str
    value: float
    report: Optional[EvalReport] = None
    error: Optional[str] = None

    def as_csv_row(self) -> List[str]:
        r = self.report
        cells = [r.baseline_f, r.augmented_f, r.acgan_f, r.acgan_filtered_f, r.mean_margin,
                 r.frac_below_eps] if r is not None else [None] * 6
        return [self.axis, repr(float(self.value))] + ['' if c is None else repr(float(c)) for c in cells] \
            + [self.error or '']


@dataclass
class TrialTally:
    """Итог серии парных запусков по сидам"""
    name: str
    seeds: List[int] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    passed: List[bool] = field(default_factory=list)

    @property
    def successes(self) -> int:
        return int(sum(self.passed))

    @property
    def total(self) -> int:
        return len(self.passed)


# ---------------------------------------------------------------- метрики

def f_score(predictions, truth, num_classes: int) -> Tuple[float, np.ndarray]:
    """(macro F, F по классам) по схеме one-vs-rest"""
    truth = DataValidator.validate_labels(truth, num_classes, "truth")
    predictions = DataValidator.validate_labels(predictions, num_classes, "predictions")
    if truth.size == 0:
        raise ContractError("F-score needs at least one prediction")
    if predictions.shape != truth.shape:
        raise ContractError(f"{predictions.shape[0]} predictions vs {truth.shape[0]} truth labels")

    tp = np.bincount(truth[predictions == truth], minlength=num_classes).astype(np.float64)
    predicted = np.bincount(predictions, minlength=num_classes).astype(np.float64)
    actual = np.bincount(truth, minlength=num_classes).astype(np.float64)

    per_class = np.zeros(num_classes)
    for c in range(num_classes):
        if predicted[c] == 0:
            # класс не предсказан: F=1, если его нет и в разметке
            per_class[c] = 1.0 if actual[c] == 0 else 0.0
            continue
        if actual[c] == 0 or tp[c] == 0:
            continue
        precision = tp[c] / predicted[c]
        recall = tp[c] / actual[c]
        per_class[c] = 2.0 * precision * recall / (precision + recall)
    return float(np.mean(per_class)), per_class


def margin_summary(posteriors, epsilon: float = 0.2,
                   bins: int = EVALUATION_DEFAULTS['histogram_bins']) -> MarginSummary:
    """Статистика u_m по матрице апостериорных распределений"""
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    if posteriors.shape[0] == 0:
        raise ContractError("Margin statistics need at least one sample")
    margins = np.atleast_1d(smallest_margin(posteriors))
    histogram, edges = np.histogram(margins, bins=bins, range=(0.0, 1.0))
    return MarginSummary(mean=float(np.mean(margins)), median=float(np.median(margins)),
                         frac_below=float(np.mean(margins <= epsilon)), epsilon=epsilon,
                         histogram=histogram, bin_edges=edges)


def _features_of(samples: Union[LabeledDataset, Sequence[GeneratedSample], np.ndarray]) -> np.ndarray:
    if isinstance(samples, LabeledDataset):
        return samples.features
    if isinstance(samples, np.ndarray):
        return np.atleast_2d(samples)
    if len(samples) == 0:
        return np.zeros((0, 0))
    return np.stack([s.x_hat for s in samples])


def margin_stats(samples, classifier: ProbClassifier, epsilon: float = 0.2) -> MarginSummary:
    """u_m каждого образца под классификатором и сводка по ним"""
    features = _features_of(samples)
    if features.shape[0] == 0:
        raise ContractError("Margin statistics need at least one sample")
    return margin_summary(classifier.predict_proba(features), epsilon)


def select_hard_samples(data: LabeledDataset, classifier: ProbClassifier, margin: float) -> LabeledDataset:
    """Точки, на которых классификатор наименее уверен (u_m ≤ margin)"""
    DataValidator.validate_unit_interval(margin, "margin")
    if data.size == 0:
        return data
    margins = np.atleast_1d(smallest_margin(classifier.predict_proba(data.features)))
    return data.subset(np.flatnonzero(margins <= margin))


def samples_to_dataset(samples: Sequence[GeneratedSample], dim: int, num_classes: int,
                       standardizer: Optional[Standardizer] = None) -> LabeledDataset:
    """Сгенерированные образцы как размеченный набор в исходном масштабе"""
    if not samples:
        return LabeledDataset.empty(dim, num_classes)
    features = np.stack([s.x_hat for s in samples])
    if standardizer is not None:
        features = standardizer.inverse_transform(features)
    return LabeledDataset(features, np.asarray([s.y for s in samples], dtype=np.int64), num_classes)


# ---------------------------------------------------------------- оценка

def evaluate_augmentation(train: LabeledDataset, generated: LabeledDataset, test: LabeledDataset,
                          hp: ClassifierParams, seed: int = 0, epsilon: float = 0.2,
                          config: Optional[Dict[str, Any]] = None) -> EvalReport:
    """Классификатор на S_l и на S_l ∪ S_g с одинаковыми hp и сидом; F на тесте"""
    if test.dim != train.dim:
        raise ShapeError(f"Test dimension {test.dim} differs from train dimension {train.dim}")
    if generated.size and generated.dim != train.dim:
        raise ShapeError(f"Generated dimension {generated.dim} differs from train dimension {train.dim}")
    num_classes = max(train.num_classes, generated.num_classes, test.num_classes)
    DataValidator.validate_labels(generated.labels, num_classes, "generated labels")

    standardizer = Standardizer.fit(train.features)
    train_n = train.normalized(standardizer)
    test_n = test.normalized(standardizer)
    baseline = train_classifier(train_n, hp, SeededRng(seed, 'evaluate'))
    base_f, base_pc = f_score(baseline.predict(test_n.features), test_n.labels, num_classes)

    report = EvalReport(baseline_f=base_f, baseline_per_class=base_pc.tolist(), seed=seed, config=config,
                        counts={'train': train.size, 'generated': generated.size, 'test': test.size})
    if generated.size == 0:
        report.augmented_f = base_f
        report.per_class_delta = [0.0] * num_classes
        return report

    generated_n = generated.normalized(standardizer)
    augmented = train_classifier(train_n.concat(generated_n), hp, SeededRng(seed, 'evaluate'))
    aug_f, aug_pc = f_score(augmented.predict(test_n.features), test_n.labels, num_classes)
    summary = margin_stats(generated_n, baseline, epsilon)
    report.augmented_f = aug_f
    report.per_class_delta = (aug_pc - base_pc).tolist()
    report.mean_margin = summary.mean
    report.median_margin = summary.median
    report.frac_below_eps = summary.frac_below
    return report


def _augmented_f(train: LabeledDataset, generated: LabeledDataset, test: LabeledDataset,
                 hp: ClassifierParams, seed: int) -> float:
    return evaluate_augmentation(train, generated, test, hp, seed).augmented_f


class EvaluationService(BaseService):
    """Сравнение базового классификатора, ActiveGAN, AC-GAN и AC-GAN+F"""

    def __init__(self, run_config: RunConfig, config_manager=None):
        super().__init__(config_manager)
        self.run_config = run_config
        self.last_artifacts: Dict[str, RunArtifacts] = {}
        self.last_generated: Dict[str, LabeledDataset] = {}

    def _generate(self, artifacts: RunArtifacts, count: int, stream: str) -> List[GeneratedSample]:
        rng = SeededRng(self.run_config.seed, stream)
        return sample_generator(artifacts.generator, artifacts.classifier, artifacts.config.reward, count, rng,
                                policy=artifacts.policy)

    def compare(self, train: LabeledDataset, test: LabeledDataset) -> EvalReport:
        """Отчет по режиму evaluation.comparison"""
        cfg = self.run_config
        ev = cfg.evaluation
        seed = cfg.seed
        try:
            if ev.labeled_size is not None:
                train = stratified_subsample(train, ev.labeled_size, seed)
            echo = cfg.model_dump(mode='json')

            if ev.comparison == 'baseline':
                self.logger.info(MESSAGES['baseline_only'])
                report = evaluate_augmentation(train, LabeledDataset.empty(train.dim, train.num_classes), test,
                                               ev.classifier, seed, cfg.train.reward.epsilon, echo)
                return EvalReport(baseline_f=report.baseline_f, seed=seed, config=echo,
                                  counts={'train': train.size, 'test': test.size})

            active = train_activegan(train, cfg.train.model_copy(update={'mode': TrainingMode.ACTIVEGAN}))
            self.last_artifacts['activegan'] = active
            generated = samples_to_dataset(self._generate(active, ev.generated_count, 'evaluate/activegan'),
                                           train.dim, train.num_classes, active.standardizer)
            self.last_generated['activegan'] = generated
            report = evaluate_augmentation(train, generated, test, ev.classifier, seed,
                                           cfg.train.reward.epsilon, echo)
            self.logger.info(f"Baseline F={report.baseline_f:.4f}, ActiveGAN F={report.augmented_f:.4f}")
            if ev.comparison == 'activegan':
                return report

            acgan_cfg: TrainConfig = cfg.train.model_copy(update={'mode': TrainingMode.ACGAN})
            acgan = train_activegan(train, acgan_cfg, classifier=active.classifier)
            self.last_artifacts['acgan'] = acgan
            plain = samples_to_dataset(self._generate(acgan, ev.generated_count, 'evaluate/acgan'),
                                       train.dim, train.num_classes, acgan.standardizer)
            filtered_samples = filtered_acgan_samples(acgan.generator, acgan.classifier, acgan.config.reward,
                                                      ev.generated_count, ev.filter_margin,
                                                      SeededRng(seed, 'evaluate/acgan-filtered'))
            filtered = samples_to_dataset(filtered_samples, train.dim, train.num_classes, acgan.standardizer)
            self.last_generated['acgan'] = plain
            self.last_generated['acgan_filtered'] = filtered
            report.acgan_f = _augmented_f(train, plain, test, ev.classifier, seed)
            report.acgan_filtered_f = _augmented_f(train, filtered, test, ev.classifier, seed)
            self.logger.info(f"AC-GAN F={report.acgan_f:.4f}, AC-GAN+F F={report.acgan_filtered_f:.4f}")
            return report
        except Exception as e:
            self._handle_error(e, "comparing methods")


# ---------------------------------------------------------------- сетка

def apply_axis(base: RunConfig, axis: str, value: float) -> RunConfig:
    """Копия конфигурации с одним измененным гиперпараметром (с валидацией)"""
    data = base.model_dump()
    if axis in ('epsilon', 'alpha', 'lam'):
        data['train']['reward'][axis] = value
    elif axis == 'filter_margin':
        data['evaluation']['filter_margin'] = value
    elif axis == 'labeled_size':
        if float(value) != int(value):
            raise ContractError(f"labeled_size must be an integer, got {value}")
        data['evaluation']['labeled_size'] = int(value)
    else:
        raise ContractError(f"Unknown sweep axis '{axis}'")
    try:
        return RunConfig.model_validate(data)
    except PydanticValidationError as e:
        raise ConfigValidator.to_configuration_error(e, f"sweep {axis}={value}")


def _sweep_row(base: RunConfig, axis: str, value: float, train: LabeledDataset, test: LabeledDataset) -> SweepRow:
    try:
        cfg = apply_axis(base, axis, value)
        report = EvaluationService(cfg).compare(train, test)
        return SweepRow(axis, value, report)
    except Exception as e:
        logger.error(f"Sweep row {axis}={value} failed: {e}")
        return SweepRow(axis, value, error=str(e))


def sweep(axis: str, values: Sequence[float], base: RunConfig, train: LabeledDataset, test: LabeledDataset,
          jobs: int = 1) -> List[SweepRow]:
    """Один полный запуск на значение; общие разбиения и сиды; ошибки строк не прерывают сетку"""
    if jobs < 1:
        raise ContractError(f"jobs must be positive, got {jobs}")
    rows: List[Optional[SweepRow]] = [None] * len(values)
    if jobs == 1:
        for i, value in enumerate(values):
            rows[i] = _sweep_row(base, axis, value, train, test)
        return rows

    with ThreadPoolExecutor(max_workers=jobs) as executor:
        future_to_index = {executor.submit(_sweep_row, base, axis, value, train, test): i
                           for i, value in enumerate(values)}
        for future in as_completed(future_to_index):
            rows[future_to_index[future]] = future.result()
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv_row())
    return path


# ---------------------------------------------------------------- рассеяние

def project_2d(reference: np.ndarray, *sets: np.ndarray) -> List[np.ndarray]:
    """Координаты для диаграммы: как есть при d ≤ 2, иначе две главные компоненты reference"""
    dim = reference.shape[1]
    if dim == 2:
        return [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in sets]
    if dim == 1:
        return [np.hstack([np.asarray(s).reshape(-1, 1), np.zeros((len(s), 1))]) for s in sets]
    pca = PCA(n_components=2).fit(reference)
    projected = []
    for s in sets:
        rows = np.asarray(s, dtype=np.float64).reshape(-1, dim)
        projected.append(pca.transform(rows) if rows.shape[0] else np.zeros((0, 2)))
    return projected


def scatter_export(train: LabeledDataset, generated: LabeledDataset, hard: LabeledDataset, path) -> Path:
    """CSV x,y,label,source с источниками train | generated | hard-test"""
    sources = [('train', train), ('generated', generated), ('hard-test', hard)]
    coords = project_2d(train.features, *[d.features.reshape(-1, train.dim) for _, d in sources])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADERS['scatter'])
        for (source, data), xy in zip(sources, coords):
            for (x, y), label in zip(xy, data.labels):
                writer.writerow([repr(float(x)), repr(float(y)), int(label), source])
    return path


# ---------------------------------------------------------------- парные опыты

def _toy_setup(seed: int, labeled: int, noise: float = TRIAL_DEFAULTS['noise'],
               test_per_class: int = TRIAL_DEFAULTS['test_per_class']) -> Tuple[LabeledDataset, LabeledDataset]:
    """Трехклассовая смесь гауссиан с перекрытием: размеченная выборка и отдельный тест"""
    pool = make_synthetic(SyntheticSpec(num_classes=3, per_class=(labeled + 2) // 3 + 1, noise=noise, seed=seed))
    train = stratified_subsample(pool, labeled, seed)
    test = make_synthetic(SyntheticSpec(num_classes=3, per_class=test_per_class, noise=noise, seed=seed + 10_000))
    return train, test


def mechanism_trial(seeds: Sequence[int], iterations: int = TRIAL_DEFAULTS['iterations'],
                    count: int = TRIAL_DEFAULTS['mechanism_count'], ratio: float = 0.8,
                    labeled: int = TRIAL_DEFAULTS['mechanism_labeled']) -> TrialTally:
    """Средний u_m образцов ActiveGAN ≤ ratio · средний u_m образцов AC-GAN при одинаковых сидах"""
    tally = TrialTally('mechanism')
    for seed in seeds:
        train, _ = _toy_setup(seed, labeled)
        cfg = TrainConfig(iterations=iterations, seed=seed)
        active = train_activegan(train, cfg)
        acgan = train_activegan(train, cfg.model_copy(update={'mode': TrainingMode.ACGAN}),
                                classifier=active.classifier)
        margins = []
        for artifacts in (active, acgan):
            samples = sample_generator(artifacts.generator, active.classifier, cfg.reward, count,
                                       SeededRng(seed, 'trial'))
            margins.append(float(np.mean([s.u_m for s in samples])))
        value = margins[0] / margins[1] if margins[1] > 0 else float('inf')
        tally.seeds.append(seed)
        tally.values.append(value)
        tally.passed.append(margins[0] <= ratio * margins[1])
        logger.info(f"Mechanism trial seed={seed}: mean u_m {margins[0]:.4f} vs {margins[1]:.4f}")
    return tally


def augmentation_trial(seeds: Sequence[int], iterations: int = TRIAL_DEFAULTS['iterations'],
                       count: int = TRIAL_DEFAULTS['augmentation_count'], hp: Optional[ClassifierParams] = None,
                       labeled: int = TRIAL_DEFAULTS['augmentation_labeled']) -> TrialTally:
    """Прирост macro F от образцов ActiveGAN по сидам при малой разметке (значения в пунктах F)"""
    hp = hp or ClassifierParams()
    tally = TrialTally('augmentation')
    for seed in seeds:
        train, test = _toy_setup(seed, labeled)
        artifacts = train_activegan(train, TrainConfig(iterations=iterations, seed=seed))
        samples = sample_generator(artifacts.generator, artifacts.classifier, artifacts.config.reward, count,
                                   SeededRng(seed, 'trial'))
        generated = samples_to_dataset(samples, train.dim, train.num_classes, artifacts.standardizer)
        report = evaluate_augmentation(train, generated, test, hp, seed)
        delta = 100.0 * (report.augmented_f - report.baseline_f)
        tally.seeds.append(seed)
        tally.values.append(delta)
        tally.passed.append(delta > 0.0)
        logger.info(f"Augmentation trial seed={seed}: delta {delta:+.2f} F points")
    return tally
