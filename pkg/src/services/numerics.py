"""
Численное ядро: тензоры, обратное распространение градиента, Adam и
детерминированный генератор случайных чисел
"""
import zlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .base import ContractError, DomainError, NumericError, ShapeError
from .constants import NUMERICS

ArrayLike = Union[np.ndarray, Sequence, float, int]


class Tensor:
    """Плотный массив float64, участвующий в графе градиентов"""

    _counter = 0

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple['Tensor', ...] = (), _op: str = 'leaf',
                 _backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._op = _op
        self._backward = _backward
        Tensor._counter += 1
        self._node_id = Tensor._counter

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def describe(self) -> str:
        label = self.name or self._op
        return f"{label}#{self._node_id}{list(self.shape)}"

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Оборачивает константу в тензор без отслеживания"""
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"Non-finite value produced by '{op}'")


def _make(values: np.ndarray, parents: Tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Создает узел графа; связи сохраняются только при отслеживании"""
    _check_finite(values, op)
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(values, _op=op)
    return Tensor(values, requires_grad=True, _parents=parents, _op=op, _backward=backward)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"Cannot broadcast shapes {a.shape} and {b.shape} in '{op}'")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Сворачивает градиент обратно к форме операнда (выравнивание по хвосту)"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- бинарные

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'add')
    return _make(a.values + b.values, (a, b), 'add',
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'sub')
    return _make(a.values - b.values, (a, b), 'sub',
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'mul')
    return _make(a.values * b.values, (a, b), 'mul',
                 lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, 'div')
    if np.any(b.values == 0.0):
        raise DomainError("Division by zero in 'div'")
    out = a.values / b.values
    return _make(out, (a, b), 'div',
                 lambda g: (_unbroadcast(g / b.values, a.shape),
                            _unbroadcast(-g * out / b.values, b.shape)))


def matmul(a, b) -> Tensor:
    """Матричное произведение m×k на k×n"""
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _make(a.values @ b.values, (a, b), 'matmul',
                 lambda g: (g @ b.values.T, a.values.T @ g))


# ---------------------------------------------------------------- унарные

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.values, (a,), 'neg', lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over='ignore'):
        out = np.exp(a.values)
    return _make(out, (a,), 'exp', lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0.0):
        raise DomainError(f"log of non-positive value in {a.describe()}")
    return _make(np.log(a.values), (a,), 'log', lambda g: (g / a.values,))


def log_clamped(a, floor: float = NUMERICS['log_clamp']) -> Tensor:
    """log(max(a, floor)); градиент обнуляется там, где сработал зажим"""
    a = as_tensor(a)
    clamped = np.maximum(a.values, floor)
    active = a.values > floor
    return _make(np.log(clamped), (a,), 'log_clamped', lambda g: (np.where(active, g / clamped, 0.0),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.values * a.values, (a,), 'square', lambda g: (2.0 * g * a.values,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _make(out, (a,), 'tanh', lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0.0
    return _make(np.where(mask, a.values, 0.0), (a,), 'relu', lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.values > 0.0, 1.0, slope)
    return _make(a.values * scale, (a,), 'leaky_relu', lambda g: (g * scale,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), 'sigmoid', lambda g: (g * out * (1.0 - out),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)
    return _make(out, (a,), 'softmax', backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _make(out, (a,), 'log_softmax',
                 lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def clip(a, low: float, high: float) -> Tensor:
    """Зажим значений; градиент проходит только внутри интервала"""
    a = as_tensor(a)
    inside = (a.values >= low) & (a.values <= high)
    return _make(np.clip(a.values, low, high), (a,), 'clip', lambda g: (g * inside,))


_UNARY = {
    'neg': neg,
    'exp': exp,
    'log': log,
    'log_clamped': log_clamped,
    'square': square,
    'tanh': tanh,
    'relu': relu,
    'leaky_relu': leaky_relu,
    'sigmoid': sigmoid,
    'softmax': softmax,
    'log_softmax': log_softmax,
}

_BINARY = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'div': div,
}


def elementwise(op: str, a, b=None) -> Tensor:
    """Поэлементная операция по тегу"""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"Operation '{op}' needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"Operation '{op}' takes a single operand")
        return _UNARY[op](a)
    raise ContractError(f"Unknown elementwise operation '{op}'")


# ---------------------------------------------------------------- свертки

def sum(a, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)
    return _make(np.asarray(a.values.sum(axis=axis)), (a,), 'sum', backward)


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ContractError("mean of an empty tensor")
    return mul(sum(a, axis=axis), 1.0 / count)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"Cannot concatenate shapes {[t.shape for t in tensors]}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), 'concat', lambda g: tuple(np.split(g, splits, axis=axis)))


def take_class(a, labels: Sequence[int]) -> Tensor:
    """Выбирает a[i, labels[i]] для каждой строки"""
    a = as_tensor(a)
    labels = np.asarray(labels, dtype=np.int64)
    if a.values.ndim != 2 or labels.shape != (a.shape[0],):
        raise ShapeError(f"take_class shape mismatch: {a.shape} with labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= a.shape[1]):
        raise ContractError(f"Class index out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])

    def backward(g):
        full = np.zeros(a.shape)
        full[rows, labels] = g
        return (full,)
    return _make(a.values[rows, labels], (a,), 'take_class', backward)


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"Cannot reshape {original} to {shape}")
    return _make(out, (a,), 'reshape', lambda g: (g.reshape(original),))


# ---------------------------------------------------------------- обратный проход

class GradientTape:
    """Упорядоченная запись узлов графа, достижимых из функции потерь"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, loss: Tensor) -> 'GradientTape':
        """Топологический порядок без рекурсии"""
        order: List[Tensor] = []
        visited = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> Dict[Tensor, np.ndarray]:
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        leaves: Dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"Non-finite gradient at node {node.describe()}")
            if node.is_leaf:
                node.grad = g
                leaves[node] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        return leaves


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """Градиенты скалярной функции потерь по всем отслеживаемым листьям"""
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.values)):
        raise NumericError(f"Non-finite loss at node {loss.describe()}")
    if not loss.requires_grad:
        return {}
    return GradientTape.record(loss).backward(loss)


def grads_for(params: Mapping[str, Tensor], gradient_map: Mapping[Tensor, np.ndarray]) -> Dict[str, np.ndarray]:
    """Градиенты по именам; неиспользованные параметры получают нули"""
    return {name: gradient_map.get(p, np.zeros_like(p.values)) for name, p in params.items()}


def gradient_check(fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                   h: float = NUMERICS['fd_step'], floor: float = 1e-2) -> float:
    """Максимальная относительная ошибка backward() против центральных разностей"""
    analytic = grads_for(params, backward(fn()))
    worst = 0.0
    for name, p in params.items():
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            plus = fn().item()
            flat[i] = original - h
            minus = fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            exact = analytic[name].reshape(-1)[i]
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    """Состояние оптимизатора Adam"""
    learning_rate: float
    beta1: float = NUMERICS['adam_beta1']
    beta2: float = NUMERICS['adam_beta2']
    eps: float = NUMERICS['adam_eps']
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def snapshot(self) -> 'AdamState':
        return AdamState(self.learning_rate, self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(state: AdamState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> Mapping[str, Tensor]:
    """Один шаг Adam с поправкой смещения (минимизация)"""
    if state.learning_rate <= 0:
        raise ContractError(f"Learning rate must be positive, got {state.learning_rate}")
    for name, p in params.items():
        if name not in grads:
            raise ContractError(f"Missing gradient for parameter '{name}'")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"Gradient shape {g.shape} does not match parameter '{name}' shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for parameter '{name}'")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# ---------------------------------------------------------------- ГСЧ

class SeededRng:
    """Детерминированный источник случайности на PCG64 с именованными потоками"""

    def __init__(self, seed: int, stream: Optional[str] = None):
        if seed < 0 or seed >= 2 ** 64:
            raise ContractError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = stream
        if stream is None:
            sequence = np.random.SeedSequence(self.seed)
        else:
            sequence = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(stream.encode('utf-8')),))
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def spawn(self, name: str) -> 'SeededRng':
        """Независимый поток; не расходует состояние родителя"""
        stream = f"{self.stream}/{name}" if self.stream else name
        return SeededRng(self.seed, stream)

    def normal(self, size, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(loc, scale, size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size) -> np.ndarray:
        return self.generator.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

