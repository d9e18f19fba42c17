import json

import numpy as np
import pytest

from src.services.config_models import GridSearchSpec, RewardConfig, SyntheticSpec, TrainConfig
from src.services.data_manager import make_synthetic
from src.services.models import Discriminator, GaussianPolicy, Generator
from src.services.numerics import SeededRng


@pytest.fixture
def rng():
    return SeededRng(7, 'tests')


@pytest.fixture
def toy_data():
    return make_synthetic(SyntheticSpec(num_classes=3, per_class=20, noise=0.3, seed=1))


@pytest.fixture
def reward_cfg():
    return RewardConfig()


@pytest.fixture
def tiny_train_config():
    return TrainConfig(iterations=12, batch_size=4, warmup_iterations=4, buffer_size=16, latent_dim=2,
                       hidden_width=6, hidden_layers=1, checkpoint_every=5, seed=3,
                       classifier=GridSearchSpec(regularization_grid=[0.001], epochs=30))


@pytest.fixture
def tiny_nets():
    init = SeededRng(11, 'init')
    gen = Generator(2, 3, 2, init, [6])
    disc = Discriminator(2, 3, init, [6])
    policy = GaussianPolicy(2, 2, init, [6])
    return gen, disc, policy


@pytest.fixture
def run_config_file(tmp_path):
    """JSON-конфигурация маленького синтетического запуска"""
    def write(**overrides):
        data = {
            'dataset': {'synthetic': {'family': 'gaussian-mixture', 'num_classes': 3, 'per_class': 20,
                                      'noise': 0.3, 'seed': 1}},
            'train': {'iterations': 12, 'batch_size': 4, 'warmup_iterations': 4, 'buffer_size': 16,
                      'hidden_width': 6, 'hidden_layers': 1, 'checkpoint_every': 5,
                      'classifier': {'regularization_grid': [0.001], 'epochs': 30}},
            'evaluation': {'generated_count': 20, 'comparison': 'four-way',
                           'classifier': {'epochs': 30}},
            'output_dir': str(tmp_path / 'run'),
            'seed': 5,
        }
        for key, value in overrides.items():
            data[key] = value
        path = tmp_path / f"config_{len(list(tmp_path.glob('config_*.json')))}.json"
        path.write_text(json.dumps(data), encoding='utf-8')
        return path
    return write


def random_distributions(rng: np.random.Generator, count: int, classes: int) -> np.ndarray:
    raw = rng.random((count, classes)) ** 3
    return raw / raw.sum(axis=1, keepdims=True)
