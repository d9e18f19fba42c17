"""
Вероятностный линейный классификатор C: мультиномиальная логистическая
регрессия по умолчанию, либо one-vs-rest hinge с калибровкой Платта
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from sklearn.model_selection import StratifiedKFold

from . import numerics as nx
from .base import ContractError, ShapeError
from .config_models import CalibrationMode, ClassifierParams, GridSearchSpec
from .data_manager import LabeledDataset
from .logger_config import get_logger
from .numerics import SeededRng, Tensor

logger = get_logger('Classifier')

MAX_HALVINGS = 40
INCREASE_TOLERANCE = 1e-12


@dataclass
class ProbClassifier:
    """Линейная модель с вероятностным выходом"""
    weights: np.ndarray
    bias: np.ndarray
    params: ClassifierParams
    platt: Optional[np.ndarray] = None
    objective_trace: List[float] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return int(self.bias.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"Classifier expects dimension {self.dim}, got {x.shape[-1]}")
        return x @ self.weights + self.bias

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        s = self.scores(batch)
        if self.platt is None:
            probs = nx.softmax(s).values
        else:
            raw = nx.sigmoid(s * self.platt[:, 0] + self.platt[:, 1]).values
            probs = raw / raw.sum(axis=1, keepdims=True)
        return probs[0] if single else probs

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=-1)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {'W': self.weights.copy(), 'b': self.bias.copy()}
        if self.platt is not None:
            state['platt'] = self.platt.copy()
        return state

    @classmethod
    def from_state(cls, state: Dict[str, np.ndarray], params: Optional[ClassifierParams] = None) -> 'ProbClassifier':
        platt = state.get('platt')
        mode = CalibrationMode.PLATT if platt is not None else CalibrationMode.SOFTMAX
        params = params or ClassifierParams(mode=mode)
        return cls(np.asarray(state['W'], dtype=np.float64), np.asarray(state['b'], dtype=np.float64), params,
                   None if platt is None else np.asarray(platt, dtype=np.float64))


def predict_proba(c: ProbClassifier, x) -> np.ndarray:
    """Распределение по K классам для вектора или матрицы признаков"""
    return c.predict_proba(x)


def _descend(objective: Callable[[], Tensor], params: Dict[str, Tensor], learning_rate: float,
             epochs: int) -> List[float]:
    """Полный градиентный спуск с делением шага пополам при росте цели"""
    trace = []
    lr = learning_rate
    current = objective()
    trace.append(current.item())
    for _ in range(epochs):
        grads = nx.grads_for(params, nx.backward(current))
        saved = {name: p.values.copy() for name, p in params.items()}
        accepted = False
        for _ in range(MAX_HALVINGS):
            for name, p in params.items():
                p.values[...] = saved[name] - lr * grads[name]
            candidate = objective()
            if candidate.item() <= trace[-1] + INCREASE_TOLERANCE:
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            for name, p in params.items():
                p.values[...] = saved[name]
            break
        current = candidate
        trace.append(current.item())
    return trace


def _softmax_objective(params: Dict[str, Tensor], x: np.ndarray, y: np.ndarray, reg: float) -> Tensor:
    logits = nx.matmul(x, params['W']) + params['b']
    nll = nx.neg(nx.mean(nx.take_class(nx.log_softmax(logits), y)))
    return nll + nx.sum(nx.square(params['W'])) * (0.5 * reg)


def _hinge_objective(params: Dict[str, Tensor], x: np.ndarray, targets: np.ndarray, reg: float) -> Tensor:
    margins = nx.relu(1.0 - nx.mul(nx.matmul(x, params['W']) + params['b'], targets))
    data_term = nx.mean(nx.sum(nx.square(margins), axis=1))
    return data_term + nx.sum(nx.square(params['W'])) * (0.5 * reg)


def _fit_platt(scores: np.ndarray, y: np.ndarray, num_classes: int, epochs: int) -> np.ndarray:
    """Сигмоидная калибровка Платта для каждого класса"""
    positives = np.eye(num_classes)[y]
    n_pos = positives.sum(axis=0)
    n_neg = positives.shape[0] - n_pos
    targets = np.where(positives > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    params = {'a': Tensor(np.ones(num_classes), requires_grad=True),
              'c': Tensor(np.zeros(num_classes), requires_grad=True)}

    def objective():
        p = nx.sigmoid(nx.mul(scores, params['a']) + params['c'])
        ll = nx.mul(nx.log_clamped(p), targets) + nx.mul(nx.log_clamped(1.0 - p), 1.0 - targets)
        return nx.neg(nx.mean(nx.sum(ll, axis=1)))

    _descend(objective, params, 1.0, epochs)
    return np.stack([params['a'].values, params['c'].values], axis=1)


def train(data: LabeledDataset, hp: ClassifierParams, rng: SeededRng) -> ProbClassifier:
    """Обучает классификатор; в полнопакетном режиме цель монотонно убывает"""
    if np.unique(data.labels).size < 2:
        raise ContractError("Classifier training needs at least two classes present")
    x, y, k = data.features, data.labels, data.num_classes
    params = {'W': Tensor(np.zeros((data.dim, k)), requires_grad=True, name='W'),
              'b': Tensor(np.zeros(k), requires_grad=True, name='b')}

    if hp.mode == CalibrationMode.SOFTMAX:
        def objective_on(xb, yb):
            return _softmax_objective(params, xb, yb, hp.regularization)
    else:
        def objective_on(xb, yb):
            targets = np.where(np.eye(k)[yb] > 0, 1.0, -1.0)
            return _hinge_objective(params, xb, targets, hp.regularization)

    if data.size <= hp.full_batch_limit:
        trace = _descend(lambda: objective_on(x, y), params, hp.learning_rate, hp.epochs)
    else:
        trace = []
        for _ in range(hp.epochs):
            order = rng.permutation(data.size)
            for start in range(0, data.size, hp.minibatch_size):
                batch = order[start:start + hp.minibatch_size]
                loss = objective_on(x[batch], y[batch])
                nx_grads = nx.grads_for(params, nx.backward(loss))
                for name, p in params.items():
                    p.values -= hp.learning_rate * nx_grads[name]
            trace.append(objective_on(x, y).item())

    platt = None
    if hp.mode == CalibrationMode.PLATT:
        platt = _fit_platt(x @ params['W'].values + params['b'].values, y, k, hp.epochs)

    logger.debug(f"Classifier trained: reg={hp.regularization}, lr={hp.learning_rate}, "
                 f"objective {trace[0]:.6f} -> {trace[-1]:.6f}")
    return ProbClassifier(params["W"].values.copy(), params["b"].values.copy(), hp, platt, trace)


def _stratified_folds(data: LabeledDataset, folds: int, rng: SeededRng) -> np.ndarray:
    """Номер валидационного фолда для каждого примера"""
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=int(rng.integers(0, 2 ** 31 - 1, None)))
    assignment = np.zeros(data.size, dtype=np.int64)
    try:
        for fold, (_, valid) in enumerate(splitter.split(data.features, data.labels)):
            assignment[valid] = fold
    except ValueError as e:
        raise ContractError(f"Cannot build {folds} stratified folds: {e}") from e
    return assignment


def grid_search(data: LabeledDataset, spec: GridSearchSpec, rng: SeededRng) -> ClassifierParams:
    """Кандидат с наибольшим средним macro-F на валидационных фолдах"""
    from .evaluation import f_score

    candidates = spec.candidates()
    if not candidates:
        raise ContractError("Grid search needs at least one candidate")
    if data.size < spec.folds:
        raise ContractError(f"Dataset of {data.size} samples cannot be split into {spec.folds} folds")
    if len(candidates) == 1:
        return candidates[0]

    assignment = _stratified_folds(data, spec.folds, rng)
    best, best_score = None, -np.inf
    for hp in candidates:
        scores = []
        for fold in range(spec.folds):
            train_part = data.subset(np.flatnonzero(assignment != fold))
            valid_part = data.subset(np.flatnonzero(assignment == fold))
            if valid_part.size == 0 or np.unique(train_part.labels).size < 2:
                continue
            model = train(train_part, hp, rng.spawn(f"fold{fold}"))
            macro, _ = f_score(model.predict(valid_part.features), valid_part.labels, data.num_classes)
            scores.append(macro)
        if not scores:
            raise ContractError("Dataset is too small to fold for grid search")
        mean_score = float(np.mean(scores))
        logger.debug(f"Grid point reg={hp.regularization}, lr={hp.learning_rate}: macro F {mean_score:.4f}")
        if mean_score > best_score:
            best, best_score = hp, mean_score
    logger.info(f"Grid search selected reg={best.regularization}, lr={best.learning_rate} (macro F {best_score:.4f})")
    return best
