import math

import numpy as np
import pytest

from src.services import numerics as nx
from src.services import param_store
from src.services.base import (BufferMode, ContractError, DivergenceError, FormatError, GeneratedSample,
                               GeneratorSignal, NumericError, TrainingMode, ValidationError)
from src.services.classifier import ProbClassifier
from src.services.config_models import RewardConfig
from src.services.constants import CSV_HEADERS
from src.services.models import Discriminator, GaussianPolicy, Generator
from src.services.numerics import SeededRng
from src.services.training import (ActiveGANTrainer, SampleBuffer, acgan_discriminator_objective,
                                   activegan_generator_loss, discriminator_loss, filtered_acgan_samples,
                                   generator_acgan_loss, generator_objective_parts, load_checkpoint,
                                   margin_filter, sample_generator, save_checkpoint, train_activegan,
                                   write_samples_csv, write_trace_csv)
from src.services.uncertainty import (GeneratedBatch, combined_reward, entropy_reward, exploration_loss, margin_reward,
                                      score_posteriors, uncertainty_loss)

from conftest import random_distributions


def uniform_classifier(dim=2, classes=3):
    return ProbClassifier.from_state({'W': np.zeros((dim, classes)), 'b': np.zeros(classes)})


def sample(y=0, value=0.0):
    return GeneratedSample(z=np.zeros(2), y=y, x_hat=np.full(2, value), u_m=0.0, u_le=0.0, reward=1.0)


class TestLosses:
    def test_even_probabilities_give_four_log_halves(self):
        half = np.full(3, 0.5)
        value = acgan_discriminator_objective(half, half, half, half).item()
        assert value == pytest.approx(4 * math.log(0.5), rel=1e-12)

    def test_single_pair_objective_value(self):
        value = acgan_discriminator_objective(*(np.array([p]) for p in (0.9, 0.3, 0.8, 0.6))).item()
        assert value == pytest.approx(math.log(0.9) + math.log(0.7) + math.log(0.8) + math.log(0.6), rel=1e-12)
        assert value == pytest.approx(-1.1957, abs=5e-4)

    def test_discriminator_rejects_empty_batch(self, tiny_nets):
        _, disc, _ = tiny_nets
        with pytest.raises(ContractError):
            discriminator_loss(disc, np.zeros((0, 2)), [], np.zeros((2, 2)), [0, 1])

    def test_generator_rejects_label_count_mismatch(self, tiny_nets):
        _, disc, _ = tiny_nets
        with pytest.raises(ContractError):
            generator_acgan_loss(disc, np.zeros((3, 2)), [0, 1])

    def test_activegan_loss_adds_weighted_uncertainty(self, tiny_nets, rng):
        gen, disc, policy = tiny_nets
        z = rng.normal((4, 2))
        labels = rng.integers(0, 3, 4)
        batch = GeneratedBatch(z, labels, gen(z, labels), np.zeros(4), np.zeros(4), rng.uniform(0.5, 2.0, 4))
        cfg = RewardConfig(lam=0.1)
        expected = (generator_acgan_loss(disc, batch.x_hat, labels).item()
                    + 0.1 * uncertainty_loss(batch, policy, cfg).item())
        assert activegan_generator_loss(disc, policy, batch, cfg).item() == pytest.approx(expected, rel=1e-12)

    def test_zero_lambda_reduces_to_acgan(self, tiny_nets, rng):
        gen, disc, policy = tiny_nets
        z = rng.normal((4, 2))
        labels = rng.integers(0, 3, 4)
        batch = GeneratedBatch(z, labels, gen(z, labels), np.zeros(4), np.zeros(4), np.ones(4))
        total, acgan, _ = generator_objective_parts(disc, policy, batch, RewardConfig(lam=0.0))
        assert total is acgan

    def test_exploration_term_shares_lambda_weight(self, tiny_nets, rng):
        gen, disc, policy = tiny_nets
        z = rng.normal((4, 2))
        labels = rng.integers(0, 3, 4)
        batch = GeneratedBatch(z, labels, gen(z, labels), np.zeros(4), np.zeros(4), rng.uniform(0.5, 2.0, 4))
        cfg = RewardConfig(lam=0.3)
        exploration = exploration_loss(batch.x_hat, batch.x_hat.values + 0.05, np.array([1.0, -1.0, 1.0, 0.0]), 0.05)
        total, acgan, unc = generator_objective_parts(disc, policy, batch, cfg, exploration=exploration)
        expected = acgan.item() + 0.3 * (unc.item() + exploration.item())
        assert total.item() == pytest.approx(expected, rel=1e-12)

    def test_zero_lambda_ignores_exploration(self, tiny_nets, rng):
        gen, disc, policy = tiny_nets
        z = rng.normal((4, 2))
        labels = rng.integers(0, 3, 4)
        batch = GeneratedBatch(z, labels, gen(z, labels), np.zeros(4), np.zeros(4), np.ones(4))
        exploration = exploration_loss(batch.x_hat, batch.x_hat.values + 0.05, np.ones(4), 0.05)
        total, acgan, _ = generator_objective_parts(disc, policy, batch, RewardConfig(lam=0.0), exploration=exploration)
        assert total is acgan

    @pytest.mark.parametrize('seed', range(3))
    def test_generator_objective_gradient(self, seed):
        init = SeededRng(seed, 'objective-grad')
        gen = Generator(2, 3, 2, init, [4])
        disc = Discriminator(2, 3, init, [4])
        policy = GaussianPolicy(2, 2, init, [4])
        z = init.normal((6, 2))
        labels = init.integers(0, 3, 6)
        rewards = init.uniform(0.0, 2.0, 6)
        cfg = RewardConfig(lam=0.5)
        params = {**param_store.with_prefix('generator', gen.params), **param_store.with_prefix('policy', policy.params)}

        def loss():
            batch = GeneratedBatch(z, labels, gen(z, labels), np.zeros(6), np.zeros(6), rewards)
            return activegan_generator_loss(disc, policy, batch, cfg)

        assert nx.gradient_check(loss, params) < 1e-4


class TestSampleBuffer:
    def test_evicts_oldest_first(self):
        buffer = SampleBuffer(3)
        buffer.push([sample(value=float(i)) for i in range(5)])
        assert len(buffer) == 3
        assert [s.x_hat[0] for s in buffer.snapshot()] == [2.0, 3.0, 4.0]

    def test_sample_is_without_replacement(self, rng):
        buffer = SampleBuffer(4)
        buffer.push([sample(value=float(i)) for i in range(4)])
        drawn = buffer.sample(10, rng)
        assert sorted(s.x_hat[0] for s in drawn) == [0.0, 1.0, 2.0, 3.0]
        assert SampleBuffer(2).sample(5, rng) == []

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValidationError):
            SampleBuffer(0)


class TestMarginFilter:
    def test_matches_linear_scan(self):
        probs = random_distributions(np.random.default_rng(8), 10_000, 4)
        items = list(range(10_000))
        expected = []
        for i, row in enumerate(probs):
            ordered = sorted(row)
            if ordered[-1] - ordered[-2] <= 0.2:
                expected.append(i)
        assert margin_filter(items, probs, 0.2) == expected

    def test_threshold_one_keeps_everything(self):
        probs = random_distributions(np.random.default_rng(9), 50, 3)
        assert margin_filter(list(range(50)), probs, 1.0) == list(range(50))

    def test_rejects_threshold_outside_unit_interval(self):
        with pytest.raises(ContractError):
            margin_filter([1], [[0.5, 0.5]], 1.5)

    def test_row_count_must_match(self):
        with pytest.raises(ContractError):
            margin_filter([1, 2], [[0.5, 0.5]], 0.2)


class TestSampling:
    def test_zero_count(self, tiny_nets, reward_cfg, rng):
        gen, _, _ = tiny_nets
        assert sample_generator(gen, uniform_classifier(), reward_cfg, 0, rng) == []

    def test_fixed_label_and_chunking(self, tiny_nets, reward_cfg, rng):
        gen, _, policy = tiny_nets
        samples = sample_generator(gen, uniform_classifier(), reward_cfg, 5, rng, label=1, policy=policy, chunk=2)
        assert len(samples) == 5
        assert {s.y for s in samples} == {1}
        assert all(s.u_m == pytest.approx(0.0, abs=1e-12) for s in samples)
        assert all(np.isfinite(s.log_lik) and s.log_lik != 0.0 for s in samples)

    def test_sample_scores_are_recomputed_from_posteriors(self, tiny_nets, reward_cfg, rng):
        gen, _, _ = tiny_nets
        classifier = ProbClassifier.from_state({'W': np.array([[2.0, -1.0, 0.0], [0.5, 1.0, -1.5]]),
                                                'b': np.array([0.1, 0.0, -0.1])})
        for s in sample_generator(gen, classifier, reward_cfg, 6, rng):
            probs = classifier.predict_proba(s.x_hat)
            ordered = sorted(probs)
            u_m = ordered[-1] - ordered[-2]
            u_le = -sum(p * math.log(p) for p in probs)
            assert s.u_m == pytest.approx(u_m, abs=1e-12)
            assert s.u_le == pytest.approx(u_le, abs=1e-12)
            expected = combined_reward(margin_reward(u_m, reward_cfg), entropy_reward(u_le), reward_cfg)
            assert s.reward == pytest.approx(expected, abs=1e-12)

    def test_rejects_bad_arguments(self, tiny_nets, reward_cfg, rng):
        gen, _, _ = tiny_nets
        with pytest.raises(ContractError):
            sample_generator(gen, uniform_classifier(), reward_cfg, -1, rng)
        with pytest.raises(ContractError):
            sample_generator(gen, uniform_classifier(), reward_cfg, 3, rng, label=3)

    def test_filtered_samples_reach_requested_count(self, tiny_nets, reward_cfg, rng):
        gen, _, _ = tiny_nets
        kept = filtered_acgan_samples(gen, uniform_classifier(), reward_cfg, 7, 0.1, rng)
        assert len(kept) == 7

    def test_filtered_samples_shortfall_returns_what_passed(self, tiny_nets, reward_cfg, rng):
        gen, _, _ = tiny_nets
        confident = ProbClassifier.from_state({'W': np.zeros((2, 3)), 'b': np.array([50.0, 0.0, 0.0])})
        assert filtered_acgan_samples(gen, confident, reward_cfg, 5, 0.2, rng, max_rounds=2) == []


class TestTraining:
    def test_counts_and_buffer(self, toy_data, tiny_train_config):
        cfg = tiny_train_config.model_copy(update={'d_update_every': 3})
        artifacts = train_activegan(toy_data, cfg)
        assert len(artifacts.traces) == 12
        assert artifacts.generator_updates == 12
        assert artifacts.discriminator_updates == 4
        assert len(artifacts.samples) == 16
        assert [row.buffer_len for row in artifacts.traces] == [min(4 * (i + 1), 16) for i in range(12)]
        assert all(np.all(np.isfinite(row.as_tuple())) for row in artifacts.traces)

    def test_same_seed_same_trace(self, toy_data, tiny_train_config):
        first = train_activegan(toy_data, tiny_train_config)
        second = train_activegan(toy_data, tiny_train_config)
        assert [r.as_tuple() for r in first.traces] == [r.as_tuple() for r in second.traces]

    def test_zero_lambda_matches_acgan_mode(self, toy_data, tiny_train_config):
        reward = RewardConfig(lam=0.0)
        active = train_activegan(toy_data, tiny_train_config.model_copy(update={'reward': reward}))
        acgan = train_activegan(toy_data, tiny_train_config.model_copy(
            update={'reward': reward, 'mode': TrainingMode.ACGAN}))
        assert [r.as_tuple() for r in active.traces] == [r.as_tuple() for r in acgan.traces]
        for name, p in active.generator.params.items():
            np.testing.assert_array_equal(p.values, acgan.generator.params[name].values)

    def test_buffered_rewards_match_final_classifier(self, toy_data, tiny_train_config):
        artifacts = train_activegan(toy_data, tiny_train_config)
        x_hat = np.stack([s.x_hat for s in artifacts.samples])
        _, _, rewards = score_posteriors(artifacts.classifier.predict_proba(x_hat), tiny_train_config.reward)
        np.testing.assert_allclose([s.reward for s in artifacts.samples], rewards, rtol=1e-12)

    def test_zero_lambda_matches_acgan_over_long_run(self, toy_data, tiny_train_config):
        cfg = tiny_train_config.model_copy(update={'iterations': 120, 'warmup_iterations': 10,
                                                   'checkpoint_every': 1000, 'reward': RewardConfig(lam=0.0)})
        active = train_activegan(toy_data, cfg)
        acgan = train_activegan(toy_data, cfg.model_copy(update={'mode': TrainingMode.ACGAN}))
        assert len(active.traces) == 120
        assert [r.as_tuple() for r in active.traces] == [r.as_tuple() for r in acgan.traces]

    @pytest.mark.parametrize('signal', list(GeneratorSignal))
    def test_generator_signal_modes(self, toy_data, tiny_train_config, signal):
        artifacts = train_activegan(toy_data, tiny_train_config.model_copy(update={'generator_signal': signal}))
        assert len(artifacts.traces) == 12
        assert all(np.all(np.isfinite(row.as_tuple())) for row in artifacts.traces)

    def test_generator_signal_changes_generator_updates(self, toy_data, tiny_train_config):
        explored = train_activegan(toy_data, tiny_train_config)
        through_policy = train_activegan(toy_data, tiny_train_config.model_copy(
            update={'generator_signal': GeneratorSignal.POLICY}))
        assert any(np.any(p.values != through_policy.generator.params[name].values)
                   for name, p in explored.generator.params.items())

    def test_acgan_mode_never_updates_policy(self, toy_data, tiny_train_config):
        init = SeededRng(tiny_train_config.seed).spawn('init')
        Generator(2, 3, 2, init, tiny_train_config.hidden)
        Discriminator(2, 3, init, tiny_train_config.hidden)
        initial = GaussianPolicy(2, 2, init, tiny_train_config.hidden)
        acgan = train_activegan(toy_data, tiny_train_config.model_copy(update={'mode': TrainingMode.ACGAN}))
        active = train_activegan(toy_data, tiny_train_config)
        for name, p in initial.params.items():
            np.testing.assert_array_equal(acgan.policy.params[name].values, p.values)
        assert any(np.any(p.values != initial.params[n].values) for n, p in active.policy.params.items())

    def test_fresh_buffer_mode(self, toy_data, tiny_train_config):
        cfg = tiny_train_config.model_copy(update={'buffer_mode': BufferMode.FRESH})
        assert len(train_activegan(toy_data, cfg).traces) == 12

    def test_checkpoints_written(self, toy_data, tiny_train_config, tmp_path):
        artifacts = train_activegan(toy_data, tiny_train_config, checkpoint_dir=tmp_path)
        assert [p.rsplit('/', 1)[-1] for p in artifacts.checkpoints] == ['iter_000005.agan', 'iter_000010.agan']
        assert all((tmp_path / name).is_file() for name in ('iter_000005.agan', 'iter_000010.agan'))

    def test_divergence_keeps_last_checkpoint_and_traces(self, toy_data, tiny_train_config, tmp_path, monkeypatch):
        original = ActiveGANTrainer._step

        def failing_step(self, it, *args):
            if it == 7:
                raise NumericError("non-finite value in exp")
            return original(self, it, *args)

        monkeypatch.setattr(ActiveGANTrainer, '_step', failing_step)
        with pytest.raises(DivergenceError) as info:
            train_activegan(toy_data, tiny_train_config, checkpoint_dir=tmp_path)
        assert info.value.iteration == 7
        assert info.value.checkpoint.endswith('iter_000005.agan')
        assert len(info.value.traces) == 7

    def test_empty_data_rejected(self, tiny_train_config):
        from src.services.data_manager import LabeledDataset
        with pytest.raises(ContractError):
            train_activegan(LabeledDataset.empty(2, 3), tiny_train_config)


class TestCheckpoints:
    def test_round_trip(self, toy_data, tiny_train_config, tmp_path):
        artifacts = train_activegan(toy_data, tiny_train_config)
        path = save_checkpoint(tmp_path / 'final.agan', artifacts)
        bundle = load_checkpoint(path)
        z = np.random.default_rng(0).normal(size=(5, 2))
        labels = [0, 1, 2, 0, 1]
        np.testing.assert_array_equal(bundle.generator(z, labels).values, artifacts.generator(z, labels).values)
        x = toy_data.features[:5]
        np.testing.assert_array_equal(bundle.classifier.predict_proba(x), artifacts.classifier.predict_proba(x))
        np.testing.assert_array_equal(bundle.standardizer.mean, artifacts.standardizer.mean)
        assert bundle.reward == tiny_train_config.reward

    def test_corrupt_bytes(self, tmp_path):
        path = tmp_path / 'broken.agan'
        path.write_bytes(b'AGAN\x01\x00\x00\x00\xff')
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_records(self, tmp_path):
        path = param_store.save(tmp_path / 'partial.agan', {'generator/x': np.ones(1)})
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestCsvOutput:
    def test_trace_csv(self, toy_data, tiny_train_config, tmp_path):
        artifacts = train_activegan(toy_data, tiny_train_config)
        path = write_trace_csv(artifacts.traces, tmp_path / 'trace.csv')
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(CSV_HEADERS['trace'])
        assert len(lines) == 13
        assert float(lines[1].split(',')[1]) == artifacts.traces[0].loss_d

    def test_samples_csv_is_denormalized(self, tmp_path):
        from src.services.data_manager import Standardizer
        scaler = Standardizer(np.array([1.0, -1.0]), np.array([2.0, 3.0]))
        path = write_samples_csv([sample(y=2, value=1.0)], tmp_path / 'samples.csv', scaler)
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == 'f0,f1,label,u_m,u_le,r'
        assert lines[1].split(',')[:3] == ['3.0', '2.0', '2']

    def test_empty_samples_csv(self, tmp_path):
        path = write_samples_csv([], tmp_path / 'samples.csv', dim=3)
        assert path.read_text(encoding='utf-8').splitlines() == ['f0,f1,f2,label,u_m,u_le,r']
