"""
Метрики неопределенности, вознаграждения и функция потерь политики
"""
import math
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from . import numerics as nx
from .base import ContractError, GeneratedSample, ShapeError
from .config_models import RewardConfig
from .models import LOG_2PI, GaussianPolicy, gaussian_log_likelihood
from .numerics import SeededRng, Tensor
from .validators import DataValidator

Scalar = Union[float, np.ndarray]


def _unwrap(values: np.ndarray, single: bool) -> Scalar:
    return float(values[0]) if single else values


def smallest_margin(probs) -> Scalar:
    """u_m = P(y'_1|x̂) − P(y'_2|x̂) по двум наиболее вероятным классам"""
    probs = DataValidator.validate_distribution(probs, min_classes=2)
    single = probs.ndim == 1
    rows = probs[None, :] if single else probs
    top2 = np.sort(rows, axis=1)[:, -2:]
    margins = np.clip(top2[:, 1] - top2[:, 0], 0.0, 1.0)
    return _unwrap(margins, single)


def label_entropy(probs) -> Scalar:
    """u_le = −Σ p ln p, 0·ln 0 = 0"""
    probs = DataValidator.validate_distribution(probs)
    single = probs.ndim == 1
    rows = probs[None, :] if single else probs
    safe = np.where(rows > 0.0, rows, 1.0)
    entropy = -np.sum(np.where(rows > 0.0, rows * np.log(safe), 0.0), axis=1)
    entropy = np.clip(entropy, 0.0, math.log(rows.shape[1]))
    return _unwrap(entropy, single)


def margin_reward(u_m, cfg: RewardConfig) -> Scalar:
    """r_m = e^{−u_m} при u_m ≤ ε, иначе C"""
    values = np.asarray(u_m, dtype=np.float64)
    if np.any(~np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise ContractError(f"Smallest margin must lie in [0, 1], got {u_m}")
    rewards = np.where(values <= cfg.epsilon, np.exp(-values), cfg.truncation_constant)
    return float(rewards) if rewards.ndim == 0 else rewards


def entropy_reward(u_le) -> Scalar:
    """r_le = e^{u_le}"""
    values = np.asarray(u_le, dtype=np.float64)
    if np.any(~np.isfinite(values)) or np.any(values < 0.0):
        raise ContractError(f"Label entropy must be non-negative, got {u_le}")
    rewards = np.exp(values)
    return float(rewards) if rewards.ndim == 0 else rewards


def combined_reward(r_m, r_le, cfg: RewardConfig) -> Scalar:
    """r = α·r_m + (1−α)·r_le"""
    r_m_arr = np.asarray(r_m, dtype=np.float64)
    r_le_arr = np.asarray(r_le, dtype=np.float64)
    if np.any(r_m_arr < 0.0) or np.any(r_le_arr < 0.0):
        raise ContractError("Rewards must be non-negative")
    rewards = cfg.alpha * r_m_arr + (1.0 - cfg.alpha) * r_le_arr
    return float(rewards) if rewards.ndim == 0 else rewards


def score_posteriors(probs: np.ndarray, cfg: RewardConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(u_m, u_le, r) для пакета апостериорных распределений"""
    probs = np.atleast_2d(probs)
    u_m = np.atleast_1d(smallest_margin(probs))
    u_le = np.atleast_1d(label_entropy(probs))
    rewards = np.atleast_1d(combined_reward(margin_reward(u_m, cfg), entropy_reward(u_le), cfg))
    return u_m, u_le, rewards


@dataclass
class GeneratedBatch:
    """Пакет сгенерированных образцов; x̂ может быть связан с графом генератора"""
    z: np.ndarray
    labels: np.ndarray
    x_hat: Tensor
    u_m: np.ndarray
    u_le: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @classmethod
    def from_samples(cls, samples: Sequence[GeneratedSample]) -> 'GeneratedBatch':
        if not samples:
            raise ContractError("Cannot build a batch from no samples")
        return cls(z=np.stack([s.z for s in samples]),
                   labels=np.asarray([s.y for s in samples], dtype=np.int64),
                   x_hat=Tensor(np.stack([s.x_hat for s in samples])),
                   u_m=np.asarray([s.u_m for s in samples]),
                   u_le=np.asarray([s.u_le for s in samples]),
                   rewards=np.asarray([s.reward for s in samples]))

    def concat(self, other: 'GeneratedBatch') -> 'GeneratedBatch':
        return GeneratedBatch(z=np.vstack([self.z, other.z]),
                              labels=np.concatenate([self.labels, other.labels]),
                              x_hat=nx.concat([self.x_hat, other.x_hat], axis=0),
                              u_m=np.concatenate([self.u_m, other.u_m]),
                              u_le=np.concatenate([self.u_le, other.u_le]),
                              rewards=np.concatenate([self.rewards, other.rewards]))

    def to_samples(self, log_lik: np.ndarray = None) -> List[GeneratedSample]:
        log_lik = np.zeros(len(self)) if log_lik is None else np.asarray(log_lik)
        values = self.x_hat.values
        return [GeneratedSample(z=self.z[i].copy(), y=int(self.labels[i]), x_hat=values[i].copy(),
                                u_m=float(self.u_m[i]), u_le=float(self.u_le[i]),
                                reward=float(self.rewards[i]), log_lik=float(log_lik[i]))
                for i in range(len(self))]


def uncertainty_loss(batch: GeneratedBatch, policy: GaussianPolicy, cfg: RewardConfig) -> Tensor:
    """(1/B)·Σ r(x̂_i)·log P(x̂_i|θ); награды являются константами графа"""
    if len(batch) == 0:
        raise ContractError("Uncertainty loss needs a non-empty batch")
    log_lik = gaussian_log_likelihood(policy, batch.x_hat, batch.z)
    rewards = np.asarray(batch.rewards, dtype=np.float64)
    return nx.mean(nx.mul(log_lik, rewards))


def exploration_advantages(x_hat, posterior_fn: Callable[[np.ndarray], np.ndarray], cfg: RewardConfig,
                           scale: float, rng: SeededRng) -> Tuple[np.ndarray, np.ndarray]:
    """Пробные действия a = x̂ + s·ξ и знаки разностей наград r(x̂ + s·ξ) − r(x̂ − s·ξ)"""
    if scale <= 0.0:
        raise ContractError(f"Exploration scale must be positive, got {scale}")
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    if x_hat.shape[0] == 0:
        raise ContractError("Exploration needs a non-empty batch")
    step = scale * rng.normal(x_hat.shape)
    _, _, ahead = score_posteriors(posterior_fn(x_hat + step), cfg)
    _, _, behind = score_posteriors(posterior_fn(x_hat - step), cfg)
    return x_hat + step, np.sign(ahead - behind)


def exploration_loss(x_hat, actions, advantages, scale: float) -> Tensor:
    """(1/B)·Σ A_i·log N(a_i | x̂_i, s²I); градиент по x̂_i равен A_i·(a_i − x̂_i)/(B·s²)"""
    x_hat = nx.as_tensor(x_hat)
    actions = np.asarray(actions, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    if x_hat.values.ndim != 2 or actions.shape != x_hat.shape:
        raise ShapeError(f"Actions {actions.shape} do not match samples {x_hat.shape}")
    if x_hat.shape[0] == 0 or advantages.shape != (x_hat.shape[0],):
        raise ContractError(f"Need one advantage per sample, got {advantages.shape} for {x_hat.shape[0]} samples")
    dim = x_hat.shape[1]
    log_density = (nx.sum(nx.square(nx.sub(actions, x_hat)), axis=1) * (-0.5 / scale ** 2)
                   - dim * (math.log(scale) + 0.5 * LOG_2PI))
    return nx.mean(nx.mul(log_density, advantages))
