"""
Менеджер данных: синтетические наборы, загрузчик IDX, разбиения и нормализация
"""
import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from .base import BaseService, ConsistencyError, ContractError, FormatError, LengthError, ShapeError
from .config_models import DatasetConfig, SyntheticSpec
from .constants import IDX_MAGIC, MESSAGES
from .logger_config import get_logger
from .numerics import SeededRng
from .validators import DataValidator

logger = get_logger('DataManager')


class Standardizer:
    """Покомпонентная стандартизация (нулевое среднее, единичная дисперсия) поверх StandardScaler"""

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        mean = np.asarray(mean, dtype=np.float64).ravel()
        scale = np.asarray(scale, dtype=np.float64).ravel()
        if mean.shape != scale.shape:
            raise ShapeError(f"Standardizer mean has {mean.size} components, scale has {scale.size}")
        self.scaler = StandardScaler()
        self.scaler.mean_ = mean
        self.scaler.scale_ = scale
        self.scaler.var_ = scale ** 2
        self.scaler.n_features_in_ = mean.size
        self.scaler.n_samples_seen_ = 0

    @classmethod
    def fit(cls, features: np.ndarray) -> 'Standardizer':
        # нулевая дисперсия дает scale_ = 1
        scaler = StandardScaler().fit(np.asarray(features, dtype=np.float64))
        return cls(scaler.mean_, scaler.scale_)

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean_

    @property
    def scale(self) -> np.ndarray:
        return self.scaler.scale_

    def _apply(self, method, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        rows = features.reshape(1, -1) if features.ndim == 1 else features
        if rows.shape[0] == 0:
            return rows.copy()
        out = method(rows)
        return out[0] if features.ndim == 1 else out

    def transform(self, features: np.ndarray) -> np.ndarray:
        return self._apply(self.scaler.transform, features)

    def inverse_transform(self, features: np.ndarray) -> np.ndarray:
        return self._apply(self.scaler.inverse_transform, features)


@dataclass
class LabeledDataset:
    """Признаки N×d, метки из [0, K) и, при наличии, параметры нормализации"""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    standardizer: Optional[Standardizer] = field(default=None, compare=False)

    def __post_init__(self):
        self.features = DataValidator.validate_features(self.features)
        self.labels = DataValidator.validate_labels(self.labels, self.num_classes)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels")

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: Sequence[int]) -> 'LabeledDataset':
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.num_classes, self.standardizer)

    def concat(self, other: 'LabeledDataset') -> 'LabeledDataset':
        if other.size == 0:
            return LabeledDataset(self.features.copy(), self.labels.copy(), self.num_classes, self.standardizer)
        if other.dim != self.dim:
            raise ShapeError(f"Cannot concatenate datasets of dimension {self.dim} and {other.dim}")
        return LabeledDataset(np.vstack([self.features, other.features]),
                              np.concatenate([self.labels, other.labels]),
                              max(self.num_classes, other.num_classes), self.standardizer)

    def normalized(self, standardizer: Optional[Standardizer] = None) -> 'LabeledDataset':
        """Стандартизованная копия; параметры сохраняются для обратного преобразования"""
        standardizer = standardizer or Standardizer.fit(self.features)
        return LabeledDataset(standardizer.transform(self.features), self.labels.copy(), self.num_classes, standardizer)

    def denormalized_features(self) -> np.ndarray:
        if self.standardizer is None:
            return self.features.copy()
        return self.standardizer.inverse_transform(self.features)

    @classmethod
    def empty(cls, dim: int, num_classes: int) -> 'LabeledDataset':
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), num_classes)


def make_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Детерминированный двумерный набор по описанию"""
    rng = SeededRng(spec.seed, 'synthetic')
    k, n = spec.num_classes, spec.per_class
    features, labels = [], []
    for c in range(k):
        angle = 2.0 * math.pi * c / k
        if spec.family == 'gaussian-mixture':
            # центры классов: вершины правильного K-угольника радиуса 2
            points = np.tile([2.0 * math.cos(angle), 2.0 * math.sin(angle)], (n, 1))
        elif spec.family == 'moons':
            t = rng.uniform(0.0, math.pi, n)
            center = 0.5 * np.array([math.cos(angle), math.sin(angle)])
            points = center + np.stack([np.cos(angle + t), np.sin(angle + t)], axis=1)
        else:
            t = rng.uniform(0.0, 2.0 * math.pi, n)
            points = (c + 1.0) * np.stack([np.cos(t), np.sin(t)], axis=1)
        if spec.noise > 0.0:
            points = points + rng.normal((n, 2), scale=spec.noise)
        features.append(points)
        labels.append(np.full(n, c, dtype=np.int64))
    return LabeledDataset(np.vstack(features), np.concatenate(labels), k)


def _read_idx_header(blob: bytes, expected_magic: int, dims: int, what: str) -> Tuple[int, ...]:
    header_len = 4 * (1 + dims)
    if len(blob) < 4:
        raise LengthError(f"{what} file is too short for a magic number", offset=len(blob))
    (magic,) = struct.unpack_from('>I', blob, 0)
    if magic != expected_magic:
        raise FormatError(f"Bad magic 0x{magic:08x} in {what} file, expected 0x{expected_magic:08x}", offset=0)
    if len(blob) < header_len:
        raise LengthError(f"{what} header is truncated", offset=len(blob))
    return struct.unpack_from(f'>{dims}I', blob, 4)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Загружает пару файлов IDX; пиксели масштабируются в [0, 1]"""
    images_blob = Path(images_path).read_bytes()
    labels_blob = Path(labels_path).read_bytes()

    count, rows, cols = _read_idx_header(images_blob, IDX_MAGIC['images'], 3, 'images')
    pixels = count * rows * cols
    if len(images_blob) < 16 + pixels:
        raise LengthError(f"Images payload is truncated: expected {pixels} bytes", offset=len(images_blob))

    (label_count,) = _read_idx_header(labels_blob, IDX_MAGIC['labels'], 1, 'labels')
    if len(labels_blob) < 8 + label_count:
        raise LengthError(f"Labels payload is truncated: expected {label_count} bytes", offset=len(labels_blob))
    if label_count != count:
        raise ConsistencyError(f"{count} images but {label_count} labels")
    if count == 0:
        raise ContractError("IDX files contain no samples")

    images = np.frombuffer(images_blob, dtype=np.uint8, count=pixels, offset=16)
    labels = np.frombuffer(labels_blob, dtype=np.uint8, count=label_count, offset=8).astype(np.int64)
    features = images.reshape(count, rows * cols).astype(np.float64) / 255.0
    num_classes = max(int(labels.max()) + 1, 2)
    logger.info(f"Loaded {count} IDX samples of size {rows}x{cols} with {num_classes} classes")
    return LabeledDataset(features, labels, num_classes)


def _allocate(count: int, fractions: Sequence[float]) -> List[int]:
    """Делит count по долям методом наибольших остатков"""
    raw = [count * f for f in fractions]
    sizes = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(fractions)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:count - sum(sizes)]:
        if fractions[i] > 0:
            sizes[i] += 1
    sizes[0] += count - sum(sizes)
    return sizes


def _draw(indices: np.ndarray, size: int, labels: Optional[np.ndarray], state: int) -> Tuple[np.ndarray, np.ndarray]:
    """Отделяет size индексов; возвращает (остаток, отделенные)"""
    if size == 0:
        return indices, np.zeros(0, dtype=np.int64)
    if size == indices.size:
        return np.zeros(0, dtype=np.int64), indices
    stratify = None if labels is None else labels[indices]
    rest, taken = train_test_split(indices, test_size=size, stratify=stratify, random_state=state)
    return rest, taken


def split(data: LabeledDataset, fractions: Sequence[float], seed: int) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Непересекающееся стратифицированное разбиение на train/validation/test"""
    fractions = [float(f) for f in fractions]
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"Split fractions must be three non-negative numbers summing to 1, got {fractions}")
    state = int(SeededRng(seed, 'split').integers(0, 2 ** 31 - 1, None))
    sizes = _allocate(data.size, fractions)
    parts_used = sum(1 for f in fractions if f > 0)
    counts = data.class_counts()
    present = counts[counts > 0]
    stratify = bool(present.size) and int(present.min()) >= parts_used

    def carve(labels):
        rest, test = _draw(np.arange(data.size), sizes[2], labels, state)
        train, validation = _draw(rest, sizes[1], labels, state)
        return train, validation, test

    indices = None
    if stratify:
        try:
            indices = carve(data.labels)
        except ValueError:
            indices = None
    if indices is None:
        logger.warning(MESSAGES['stratify_fallback'])
        indices = carve(None)

    train, validation, test = (data.subset(np.sort(part)) for part in indices)
    return train, validation, test


def stratified_subsample(data: LabeledDataset, size: int, seed: int) -> LabeledDataset:
    """Стратифицированная подвыборка заданного размера"""
    if size >= data.size:
        return data
    kept, _, _ = split(data, (size / data.size, 1.0 - size / data.size, 0.0), seed)
    return kept


def export_csv(data: LabeledDataset, path, denormalize: bool = True) -> Path:
    """CSV с заголовком f0..f{d-1},label"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = data.denormalized_features() if denormalize else data.features
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow([f"f{i}" for i in range(data.dim)] + ['label'])
        for row, label in zip(features, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return path


class DataManager(BaseService):
    """Загрузка и подготовка данных запуска"""

    def __init__(self, dataset_config: DatasetConfig, config_manager=None):
        super().__init__(config_manager)
        self.dataset_config = dataset_config

    def load(self) -> LabeledDataset:
        """Загружает набор из описания конфигурации"""
        try:
            if self.dataset_config.synthetic is not None:
                spec = self.dataset_config.synthetic
                data = make_synthetic(spec)
                self.logger.info(f"Built synthetic '{spec.family}' dataset: N={data.size}, K={data.num_classes}")
                return data
            idx = self.dataset_config.idx
            return load_idx(idx.images, idx.labels)
        except Exception as e:
            self._handle_error(e, "loading dataset")

    def prepare_splits(self, seed: int) -> Tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
        """Разбиение train/validation/test по долям конфигурации"""
        data = self.load()
        train, validation, test = split(data, self.dataset_config.split, seed)
        self.logger.info(f"Split sizes: train={train.size}, validation={validation.size}, test={test.size}")
        return train, validation, test
