"""
Сети ActiveGAN: условный генератор, дискриминатор с двумя головами и
гауссовская политика над латентным пространством
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import numerics as nx
from .base import ContractError, NumericError, ShapeError, ValidationError
from .constants import NETWORK_DEFAULTS
from .numerics import SeededRng, Tensor

LOG_2PI = math.log(2.0 * math.pi)

ACTIVATIONS = ('tanh', 'relu', 'leaky_relu')


@dataclass
class NetworkSpec:
    """Описание полносвязной сети"""
    input_dim: int
    hidden: List[int]
    activation: str
    heads: Dict[str, int]
    leaky_slope: float = NETWORK_DEFAULTS['leaky_slope']

    def __post_init__(self):
        if self.input_dim <= 0:
            raise ValidationError(f"input_dim must be positive, got {self.input_dim}")
        if not self.hidden:
            raise ValidationError("NetworkSpec needs at least one hidden layer")
        if any(w <= 0 for w in self.hidden):
            raise ValidationError(f"Hidden widths must be positive, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"Unknown activation '{self.activation}'")
        if not self.heads or any(w <= 0 for w in self.heads.values()):
            raise ValidationError(f"Output heads must have positive widths, got {self.heads}")

    @property
    def output_dim(self) -> int:
        return int(sum(self.heads.values()))


class FeedForwardNetwork:
    """Полносвязная сеть: общий ствол и линейные головы"""

    def __init__(self, spec: NetworkSpec, rng: SeededRng, zero_heads: bool = False):
        self.spec = spec
        self.params: Dict[str, Tensor] = {}
        fan_in = spec.input_dim
        for i, width in enumerate(spec.hidden):
            self._add_layer(f"hidden{i}", fan_in, width, rng, zero=False)
            fan_in = width
        for head, width in spec.heads.items():
            self._add_layer(f"head.{head}", fan_in, width, rng, zero=zero_heads)

    def _add_layer(self, prefix: str, fan_in: int, fan_out: int, rng: SeededRng, zero: bool) -> None:
        bound = 1.0 / math.sqrt(fan_in)
        weights = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-bound, bound, (fan_in, fan_out))
        self.params[f"{prefix}.W"] = Tensor(weights, requires_grad=True, name=f"{prefix}.W")
        self.params[f"{prefix}.b"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{prefix}.b")

    def _activate(self, h: Tensor) -> Tensor:
        if self.spec.activation == 'tanh':
            return nx.tanh(h)
        if self.spec.activation == 'relu':
            return nx.relu(h)
        return nx.leaky_relu(h, self.spec.leaky_slope)

    def forward(self, x) -> Dict[str, Tensor]:
        h = nx.as_tensor(x)
        if h.values.ndim != 2 or h.shape[1] != self.spec.input_dim:
            raise ShapeError(f"Expected input of shape (B, {self.spec.input_dim}), got {h.shape}")
        for i in range(len(self.spec.hidden)):
            h = self._activate(h @ self.params[f"hidden{i}.W"] + self.params[f"hidden{i}.b"])
        return {head: h @ self.params[f"head.{head}.W"] + self.params[f"head.{head}.b"]
                for head in self.spec.heads}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ValidationError(f"State is missing parameters: {sorted(missing)}")
        for name, p in self.params.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != p.shape:
                raise ShapeError(f"Parameter '{name}' has shape {p.shape}, state has {values.shape}")
            p.values[...] = values


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError(f"Class index out of range [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


class Generator(FeedForwardNetwork):
    """Условный генератор x̂ = G(z, y)"""

    def __init__(self, latent_dim: int, num_classes: int, sample_dim: int, rng: SeededRng,
                 hidden: Optional[List[int]] = None, zero_output: bool = False):
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        self.sample_dim = sample_dim
        hidden = hidden or [NETWORK_DEFAULTS['hidden_width']] * NETWORK_DEFAULTS['hidden_layers']
        spec = NetworkSpec(latent_dim + num_classes, list(hidden), 'tanh', {'sample': sample_dim})
        super().__init__(spec, rng, zero_heads=zero_output)

    def __call__(self, z, labels) -> Tensor:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"Latent batch must have shape (B, {self.latent_dim}), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise NumericError("Latent vector contains non-finite values")
        inputs = np.concatenate([z, one_hot(labels, self.num_classes)], axis=1)
        return self.forward(inputs)['sample']


class Discriminator(FeedForwardNetwork):
    """Дискриминатор: голова источника (1 логит) и голова класса (K логитов)"""

    def __init__(self, sample_dim: int, num_classes: int, rng: SeededRng,
                 hidden: Optional[List[int]] = None, zero_heads: bool = False):
        self.sample_dim = sample_dim
        self.num_classes = num_classes
        hidden = hidden or [NETWORK_DEFAULTS['hidden_width']] * NETWORK_DEFAULTS['hidden_layers']
        spec = NetworkSpec(sample_dim, list(hidden), 'leaky_relu', {'source': 1, 'class': num_classes})
        super().__init__(spec, rng, zero_heads=zero_heads)

    def probabilities(self, x) -> Tuple[Tensor, Tensor]:
        """P(real|x) формы (B,) и P(y|x) формы (B, K)"""
        heads = self.forward(x)
        p_real = nx.reshape(nx.sigmoid(heads['source']), (-1,))
        return p_real, nx.softmax(heads['class'])


class GaussianPolicy(FeedForwardNetwork):
    """Политика: x̂ -> (μ, σ) диагонального гауссиана над z; e^σ задает стандартное отклонение"""

    def __init__(self, sample_dim: int, latent_dim: int, rng: SeededRng,
                 hidden: Optional[List[int]] = None, zero_heads: bool = False):
        self.sample_dim = sample_dim
        self.latent_dim = latent_dim
        hidden = hidden or [NETWORK_DEFAULTS['hidden_width']] * NETWORK_DEFAULTS['hidden_layers']
        spec = NetworkSpec(sample_dim, list(hidden), 'tanh', {'mu': latent_dim, 'log_sigma': latent_dim})
        super().__init__(spec, rng, zero_heads=zero_heads)

    def distribution(self, x_hat) -> Tuple[Tensor, Tensor]:
        heads = self.forward(x_hat)
        log_sigma = nx.clip(heads['log_sigma'], NETWORK_DEFAULTS['log_sigma_min'], NETWORK_DEFAULTS['log_sigma_max'])
        return heads['mu'], log_sigma


def generate(gen: Generator, z, y) -> Tensor:
    """x̂ = G(z, y) для одного латента (d_z,) или пакета (B, d_z)"""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        labels = np.asarray([y], dtype=np.int64)
        return nx.reshape(gen(z[None, :], labels), (gen.sample_dim,))
    labels = np.broadcast_to(np.asarray(y, dtype=np.int64), (z.shape[0],))
    return gen(z, labels)


def discriminate(disc: Discriminator, x) -> Tuple[np.ndarray, np.ndarray]:
    """Вероятность реальности и распределение по классам (без графа)"""
    x = np.asarray(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise NumericError("Discriminator input contains non-finite values")
    p_real, class_probs = disc.probabilities(Tensor(x))
    if single:
        return p_real.values[0], class_probs.values[0]
    return p_real.values, class_probs.values


def gaussian_log_likelihood(policy: GaussianPolicy, x_hat, z) -> Tensor:
    """log N(z | μ(x̂), diag(e^{σ(x̂)})²); форма (B,) для пакета или скаляр"""
    x_hat = nx.as_tensor(x_hat)
    z = np.asarray(z, dtype=np.float64)
    single = x_hat.values.ndim == 1
    if single:
        x_hat = nx.reshape(x_hat, (1, -1))
        z = z.reshape(1, -1)
    if z.ndim != 2 or z.shape != (x_hat.shape[0], policy.latent_dim):
        raise ShapeError(f"Latent shape {z.shape} does not match samples {x_hat.shape} "
                         f"with latent_dim {policy.latent_dim}")
    mu, log_sigma = policy.distribution(x_hat)
    diff = nx.sub(z, mu)
    inv_var = nx.exp(nx.mul(log_sigma, -2.0))
    per_dim = nx.neg(log_sigma) - 0.5 * LOG_2PI - nx.mul(nx.square(diff), inv_var) * 0.5
    log_lik = nx.sum(per_dim, axis=1)
    return nx.reshape(log_lik, ()) if single else log_lik


@dataclass
class NetworkDims:
    """Размерности, достаточные для восстановления сетей из контейнера"""
    latent_dim: int
    num_classes: int
    sample_dim: int
    hidden: List[int] = field(default_factory=lambda: [NETWORK_DEFAULTS['hidden_width']] * NETWORK_DEFAULTS['hidden_layers'])

    def to_array(self) -> np.ndarray:
        return np.asarray([self.latent_dim, self.num_classes, self.sample_dim, *self.hidden], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> 'NetworkDims':
        ints = [int(v) for v in np.asarray(values).reshape(-1)]
        if len(ints) < 4:
            raise ValidationError(f"Network dims record too short: {ints}")
        return cls(ints[0], ints[1], ints[2], ints[3:])
