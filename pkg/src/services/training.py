"""
Функции потерь AC-GAN, целевая функция генератора ActiveGAN, цикл
обучения с буфером образцов и фильтр по отступу (AC-GAN+F)
"""
import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import numerics as nx
from . import param_store
from .base import (BaseService, BufferMode, ContractError, DivergenceError, FormatError, GeneratedSample,
                   GeneratorSignal, NumericError, TraceRow, TrainingMode, ValidationError)
from .classifier import ProbClassifier, grid_search
from .classifier import train as train_classifier
from .config_models import ClassifierParams, RewardConfig, TrainConfig
from .constants import CSV_HEADERS, EVALUATION_DEFAULTS, MESSAGES
from .data_manager import LabeledDataset, Standardizer
from .logger_config import get_logger
from .models import Discriminator, GaussianPolicy, Generator, NetworkDims, gaussian_log_likelihood
from .numerics import AdamState, SeededRng, Tensor
from .uncertainty import (GeneratedBatch, exploration_advantages, exploration_loss, score_posteriors,
                          smallest_margin, uncertainty_loss)
from .validators import DataValidator

logger = get_logger('Training')


# ---------------------------------------------------------------- потери

def acgan_discriminator_objective(p_real_on_real, p_real_on_fake, class_prob_real, class_prob_fake) -> Tensor:
    """E[log P(real|x)] + E[log P(fake|x̂)] + E[log P(y|x)] + E[log P(y|x̂)] с зажимом логарифма"""
    p_real_on_real = nx.as_tensor(p_real_on_real)
    p_real_on_fake = nx.as_tensor(p_real_on_fake)
    return (nx.mean(nx.log_clamped(p_real_on_real))
            + nx.mean(nx.log_clamped(1.0 - p_real_on_fake))
            + nx.mean(nx.log_clamped(class_prob_real))
            + nx.mean(nx.log_clamped(class_prob_fake)))


def acgan_generator_objective(p_real_on_fake, class_prob_fake) -> Tensor:
    """E[log P(real|x̂)] + E[log P(y|x̂)]"""
    return nx.mean(nx.log_clamped(p_real_on_fake)) + nx.mean(nx.log_clamped(class_prob_fake))


def _check_batch(x, labels, what: str) -> None:
    if nx.as_tensor(x).shape[0] == 0 or len(labels) == 0:
        raise ContractError(f"{what} batch must not be empty")
    if nx.as_tensor(x).shape[0] != len(labels):
        raise ContractError(f"{what} batch has {nx.as_tensor(x).shape[0]} samples but {len(labels)} labels")


def discriminator_loss(disc: Discriminator, x_real, y_real, x_fake, y_fake) -> Tensor:
    """Целевая функция дискриминатора (максимизируется)"""
    _check_batch(x_real, y_real, "Real")
    _check_batch(x_fake, y_fake, "Fake")
    y_real = DataValidator.validate_labels(y_real, disc.num_classes, "y_real")
    y_fake = DataValidator.validate_labels(y_fake, disc.num_classes, "y_fake")
    p_real, classes_real = disc.probabilities(x_real)
    p_fake, classes_fake = disc.probabilities(x_fake)
    return acgan_discriminator_objective(p_real, p_fake,
                                         nx.take_class(classes_real, y_real),
                                         nx.take_class(classes_fake, y_fake))


def generator_acgan_loss(disc: Discriminator, x_fake, y_fake) -> Tensor:
    """Целевая функция генератора AC-GAN (максимизируется)"""
    _check_batch(x_fake, y_fake, "Fake")
    y_fake = DataValidator.validate_labels(y_fake, disc.num_classes, "y_fake")
    p_fake, classes_fake = disc.probabilities(x_fake)
    return acgan_generator_objective(p_fake, nx.take_class(classes_fake, y_fake))


def generator_objective_parts(disc: Discriminator, policy: GaussianPolicy, batch: GeneratedBatch,
                              cfg: RewardConfig, uncertainty_batch: Optional[GeneratedBatch] = None,
                              exploration: Optional[Tensor] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """(итог, L_AC-GAN, L_uncertainty); при λ = 0 итог совпадает с L_AC-GAN

    exploration, если задан, входит в итог с тем же весом λ
    """
    acgan = generator_acgan_loss(disc, batch.x_hat, batch.labels)
    unc = uncertainty_loss(uncertainty_batch if uncertainty_batch is not None else batch, policy, cfg)
    if cfg.lam == 0.0:
        return acgan, acgan, unc
    guided = unc if exploration is None else unc + exploration
    return acgan + guided * cfg.lam, acgan, unc


def activegan_generator_loss(disc: Discriminator, policy: GaussianPolicy, batch: GeneratedBatch,
                             cfg: RewardConfig, uncertainty_batch: Optional[GeneratedBatch] = None) -> Tensor:
    """L_AC-GAN + λ·L_uncertainty (максимизируется)"""
    total, _, _ = generator_objective_parts(disc, policy, batch, cfg, uncertainty_batch)
    return total


# ---------------------------------------------------------------- буфер

class SampleBuffer:
    """FIFO-буфер сгенерированных образцов емкостью M"""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValidationError(f"Buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: Deque[GeneratedSample] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, samples: Sequence[GeneratedSample]) -> None:
        self._items.extend(samples)

    def snapshot(self) -> List[GeneratedSample]:
        return list(self._items)

    def sample(self, count: int, rng: SeededRng) -> List[GeneratedSample]:
        """Равномерная выборка без возвращения"""
        count = min(count, len(self._items))
        if count == 0:
            return []
        items = self.snapshot()
        return [items[i] for i in rng.choice(len(items), count, replace=False)]


# ---------------------------------------------------------------- артефакты

@dataclass
class RunArtifacts:
    """Результаты одного запуска обучения"""
    generator: Generator
    discriminator: Discriminator
    policy: GaussianPolicy
    classifier: ProbClassifier
    standardizer: Standardizer
    config: TrainConfig
    traces: List[TraceRow] = field(default_factory=list)
    samples: List[GeneratedSample] = field(default_factory=list)
    generator_updates: int = 0
    discriminator_updates: int = 0
    checkpoints: List[str] = field(default_factory=list)


@dataclass
class CheckpointBundle:
    """Сети и метаданные, восстановленные из контейнера"""
    generator: Generator
    discriminator: Discriminator
    policy: GaussianPolicy
    classifier: ProbClassifier
    standardizer: Standardizer
    reward: RewardConfig


def checkpoint_tensors(generator: Generator, discriminator: Discriminator, policy: GaussianPolicy,
                       classifier: ProbClassifier, standardizer: Standardizer, reward: RewardConfig) -> Dict[str, np.ndarray]:
    dims = NetworkDims(generator.latent_dim, generator.num_classes, generator.sample_dim, list(generator.spec.hidden))
    tensors = {'meta/dims': dims.to_array(),
               'meta/reward': np.asarray([reward.epsilon, reward.alpha, reward.truncation_constant, reward.lam])}
    tensors.update(param_store.with_prefix('generator', generator.state_dict()))
    tensors.update(param_store.with_prefix('discriminator', discriminator.state_dict()))
    tensors.update(param_store.with_prefix('policy', policy.state_dict()))
    tensors.update(param_store.with_prefix('classifier', classifier.state_dict()))
    tensors.update({'data/mean': standardizer.mean, 'data/scale': standardizer.scale})
    return tensors


def save_checkpoint(path, artifacts: RunArtifacts) -> Path:
    return param_store.save(path, checkpoint_tensors(artifacts.generator, artifacts.discriminator, artifacts.policy,
                                                     artifacts.classifier, artifacts.standardizer,
                                                     artifacts.config.reward))


def load_checkpoint(path) -> CheckpointBundle:
    """Восстанавливает сети из контейнера параметров"""
    tensors = param_store.load(path)
    for key in ('meta/dims', 'meta/reward', 'data/mean', 'data/scale'):
        if key not in tensors:
            raise FormatError(f"Checkpoint {path} has no '{key}' record")
    dims = NetworkDims.from_array(tensors['meta/dims'])
    scratch = SeededRng(0, 'restore')
    gen = Generator(dims.latent_dim, dims.num_classes, dims.sample_dim, scratch, dims.hidden)
    disc = Discriminator(dims.sample_dim, dims.num_classes, scratch, dims.hidden)
    policy = GaussianPolicy(dims.sample_dim, dims.latent_dim, scratch, dims.hidden)
    try:
        gen.load_state_dict(param_store.strip_prefix('generator', tensors))
        disc.load_state_dict(param_store.strip_prefix('discriminator', tensors))
        policy.load_state_dict(param_store.strip_prefix('policy', tensors))
    except ValidationError as e:
        raise FormatError(f"Checkpoint {path} does not match its network dims: {e}")
    clf_state = param_store.strip_prefix('classifier', tensors)
    if 'W' not in clf_state or 'b' not in clf_state:
        raise FormatError(f"Checkpoint {path} has no classifier parameters")
    eps, alpha, c, lam = (float(v) for v in tensors['meta/reward'])
    reward = RewardConfig(epsilon=eps, alpha=alpha, truncation_constant=c, lam=lam)
    return CheckpointBundle(gen, disc, policy, ProbClassifier.from_state(clf_state),
                            Standardizer(tensors['data/mean'], tensors['data/scale']), reward)


# ---------------------------------------------------------------- генерация

def sample_generator(generator: Generator, classifier: ProbClassifier, reward: RewardConfig, count: int,
                     rng: SeededRng, label: Optional[int] = None,
                     policy: Optional[GaussianPolicy] = None, chunk: int = 1024) -> List[GeneratedSample]:
    """Генерирует count образцов и оценивает их неопределенность классификатором"""
    if count < 0:
        raise ContractError(f"Sample count must be non-negative, got {count}")
    if label is not None and not 0 <= label < generator.num_classes:
        raise ContractError(f"Class {label} outside [0, {generator.num_classes})")
    samples: List[GeneratedSample] = []
    while len(samples) < count:
        n = min(chunk, count - len(samples))
        z = rng.normal((n, generator.latent_dim))
        labels = np.full(n, label, dtype=np.int64) if label is not None else rng.integers(0, generator.num_classes, n)
        x_hat = generator(z, labels)
        u_m, u_le, rewards = score_posteriors(classifier.predict_proba(x_hat.values), reward)
        log_lik = (gaussian_log_likelihood(policy, Tensor(x_hat.values), z).values
                   if policy is not None else None)
        samples.extend(GeneratedBatch(z, labels, Tensor(x_hat.values), u_m, u_le, rewards).to_samples(log_lik))
    return samples


def margin_filter(items: Sequence, posteriors, threshold: float) -> List:
    """Оставляет элементы с u_m ≤ threshold в исходном порядке"""
    DataValidator.validate_unit_interval(threshold, "threshold")
    if len(items) == 0:
        return []
    margins = np.atleast_1d(smallest_margin(np.atleast_2d(posteriors)))
    if margins.shape[0] != len(items):
        raise ContractError(f"{len(items)} items but {margins.shape[0]} posterior rows")
    return [item for item, u_m in zip(items, margins) if u_m <= threshold]


def filtered_acgan_samples(generator: Generator, classifier: ProbClassifier, reward: RewardConfig, count: int,
                           threshold: float, rng: SeededRng,
                           max_rounds: int = EVALUATION_DEFAULTS['filter_max_rounds']) -> List[GeneratedSample]:
    """AC-GAN+F: генерирует с запасом и оставляет образцы с малым отступом"""
    kept: List[GeneratedSample] = []
    for _ in range(max_rounds):
        if len(kept) >= count:
            break
        pool = sample_generator(generator, classifier, reward, max(count, 1) * 2, rng)
        posteriors = classifier.predict_proba(np.stack([s.x_hat for s in pool]))
        kept.extend(margin_filter(pool, posteriors, threshold))
    if len(kept) < count:
        logger.warning(f"{MESSAGES['filter_shortfall']}: {len(kept)} of {count}")
    return kept[:count]


# ---------------------------------------------------------------- обучение

class ActiveGANTrainer(BaseService):
    """Цикл обучения: прогрев AC-GAN, затем совместное обучение генератора и политики"""

    def __init__(self, cfg: TrainConfig, checkpoint_dir: Optional[Path] = None,
                 classifier: Optional[ProbClassifier] = None, config_manager=None):
        super().__init__(config_manager)
        self.cfg = cfg
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
        self.classifier = classifier

    def _fit_classifier(self, data: LabeledDataset, rng: SeededRng) -> ProbClassifier:
        if self.classifier is not None:
            return self.classifier
        hp: ClassifierParams = grid_search(data, self.cfg.classifier, rng.spawn('grid'))
        return train_classifier(data, hp, rng.spawn('fit'))

    def train(self, data: LabeledDataset) -> RunArtifacts:
        cfg = self.cfg
        if data.size == 0:
            raise ContractError("Training data must not be empty")
        root = SeededRng(cfg.seed)
        init_rng, gan_rng, buffer_rng = root.spawn('init'), root.spawn('gan'), root.spawn('buffer')
        explore_rng = root.spawn('explore')

        standardizer = data.standardizer or Standardizer.fit(data.features)
        normalized = data if data.standardizer is not None else data.normalized(standardizer)
        classifier = self._fit_classifier(normalized, root.spawn('classifier'))

        k, d = normalized.num_classes, normalized.dim
        gen = Generator(cfg.latent_dim, k, d, init_rng, cfg.hidden)
        disc = Discriminator(d, k, init_rng, cfg.hidden)
        policy = GaussianPolicy(d, cfg.latent_dim, init_rng, cfg.hidden)
        opt_g = AdamState(cfg.lr_generator)
        opt_d = AdamState(cfg.lr_discriminator)
        opt_p = AdamState(cfg.lr_policy)

        artifacts = RunArtifacts(gen, disc, policy, classifier, standardizer, cfg)
        buffer = SampleBuffer(cfg.buffer_size)
        last_good: Optional[str] = None
        self.logger.info(f"Training {cfg.mode.value}: {cfg.iterations} iterations "
                         f"({cfg.warmup_iterations} warmup), lambda={cfg.reward.lam}, "
                         f"signal={cfg.generator_signal.value}, seed={cfg.seed}")

        for it in range(cfg.iterations):
            try:
                row = self._step(it, normalized, artifacts, buffer, opt_g, opt_d, opt_p, gan_rng, buffer_rng,
                                 explore_rng)
            except NumericError as e:
                self.logger.error(f"Training diverged at iteration {it}: {e}")
                raise DivergenceError(f"Training diverged ({e})", it, last_good, list(artifacts.traces)) from e
            artifacts.traces.append(row)
            if (it + 1) % cfg.checkpoint_every != 0:
                continue
            if self.checkpoint_dir is not None:
                path = self.checkpoint_dir / f"iter_{it + 1:06d}.agan"
                save_checkpoint(path, artifacts)
                artifacts.checkpoints.append(str(path))
                last_good = str(path)
            self.logger.info(f"Iteration {it + 1}: L_D={row.loss_d:.4f} L_G={row.loss_g_acgan:.4f} "
                             f"L_unc={row.loss_unc:.4f} mean u_m={row.mean_u_m:.4f}")

        artifacts.samples = buffer.snapshot()
        self.logger.info(f"Finished: {artifacts.generator_updates} generator and "
                         f"{artifacts.discriminator_updates} discriminator updates")
        return artifacts

    def _step(self, it: int, data: LabeledDataset, art: RunArtifacts, buffer: SampleBuffer,
              opt_g: AdamState, opt_d: AdamState, opt_p: AdamState,
              gan_rng: SeededRng, buffer_rng: SeededRng, explore_rng: SeededRng) -> TraceRow:
        cfg = self.cfg
        gen, disc, policy = art.generator, art.discriminator, art.policy
        b, k = cfg.batch_size, data.num_classes
        warmup = it < cfg.warmup_iterations

        idx = gan_rng.choice(data.size, b, replace=data.size < b)
        x_real, y_real = data.features[idx], data.labels[idx]
        z = gan_rng.normal((b, cfg.latent_dim))
        y_fake = gan_rng.integers(0, k, b)

        x_fake = gen(z, y_fake)
        u_m, u_le, rewards = score_posteriors(art.classifier.predict_proba(x_fake.values), cfg.reward)
        fresh = GeneratedBatch(z, y_fake, x_fake, u_m, u_le, rewards)
        through_policy = cfg.generator_signal == GeneratorSignal.POLICY
        # в режиме exploration политика учится на отсоединенных образцах
        unc_batch = fresh if through_policy else GeneratedBatch(z, y_fake, Tensor(x_fake.values), u_m, u_le, rewards)
        if cfg.buffer_mode == BufferMode.MIXED and len(buffer) > 0:
            unc_batch = unc_batch.concat(GeneratedBatch.from_samples(buffer.sample(b, buffer_rng)))

        # шаг генератора (и политики после прогрева)
        active = not warmup and cfg.mode == TrainingMode.ACTIVEGAN
        exploration = None
        if active and not through_policy and cfg.reward.lam > 0.0:
            actions, advantages = exploration_advantages(x_fake.values, art.classifier.predict_proba, cfg.reward,
                                                         cfg.exploration_scale, explore_rng)
            exploration = exploration_loss(x_fake, actions, advantages, cfg.exploration_scale)
        total, acgan, unc = generator_objective_parts(disc, policy, fresh, cfg.reward, unc_batch, exploration)
        objective = total if active else acgan
        gradient_map = nx.backward(nx.neg(objective))
        nx.adam_step(opt_g, gen.params, nx.grads_for(gen.params, gradient_map))
        if active:
            nx.adam_step(opt_p, policy.params, nx.grads_for(policy.params, gradient_map))
        art.generator_updates += 1

        # шаг дискриминатора на отсоединенных образцах
        loss_d = discriminator_loss(disc, x_real, y_real, Tensor(x_fake.values), y_fake)
        if it % cfg.d_update_every == 0:
            d_map = nx.backward(nx.neg(loss_d))
            nx.adam_step(opt_d, disc.params, nx.grads_for(disc.params, d_map))
            art.discriminator_updates += 1

        log_lik = gaussian_log_likelihood(policy, Tensor(x_fake.values), z).values
        buffer.push(GeneratedBatch(z, y_fake, Tensor(x_fake.values), u_m, u_le, rewards).to_samples(log_lik))

        row = TraceRow(iteration=it, loss_d=loss_d.item(), loss_g_acgan=acgan.item(), loss_unc=unc.item(),
                       mean_reward=float(np.mean(rewards)), mean_u_m=float(np.mean(u_m)),
                       mean_u_le=float(np.mean(u_le)), buffer_len=len(buffer))
        if not np.all(np.isfinite(row.as_tuple()[1:7])):
            raise NumericError(f"Non-finite trace values at iteration {it}")
        return row


def train_activegan(data: LabeledDataset, cfg: TrainConfig, checkpoint_dir: Optional[Path] = None,
                    classifier: Optional[ProbClassifier] = None) -> RunArtifacts:
    """Полный запуск ActiveGAN (или AC-GAN при mode=acgan)"""
    return ActiveGANTrainer(cfg, checkpoint_dir, classifier).train(data)


def write_trace_csv(traces: Sequence[TraceRow], path) -> Path:
    """Трасса обучения в CSV; значения записываются без потери точности"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADERS['trace'])
        for row in traces:
            writer.writerow([row.iteration] + [repr(float(v)) for v in row.as_tuple()[1:7]] + [row.buffer_len])
    return path


def write_samples_csv(samples: Sequence[GeneratedSample], path, standardizer: Optional[Standardizer] = None,
                      dim: Optional[int] = None) -> Path:
    """Образцы в CSV: признаки (в исходном масштабе), метка, u_m, u_le, r"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if dim is None:
        dim = samples[0].x_hat.shape[0] if samples else 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow([f"f{i}" for i in range(dim)] + ['label', 'u_m', 'u_le', 'r'])
        for s in samples:
            x = standardizer.inverse_transform(s.x_hat) if standardizer is not None else s.x_hat
            writer.writerow([repr(float(v)) for v in x] + [s.y, repr(s.u_m), repr(s.u_le), repr(s.reward)])
    return path
