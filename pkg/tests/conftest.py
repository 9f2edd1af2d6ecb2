import json

import numpy as np
import pytest

from relattr.data import ToySpec, build_toy_dataset
from relattr.trainer import TrainConfig, train

from . import _toyruns


@pytest.fixture(scope="session")
def toy_small():
    # small in-memory dataset for unit tests; distinct seed from the cached runs
    return build_toy_dataset(ToySpec(n_attributes=4, image_size=64, seed=11), 48, 16)


TINY_TRAIN = TrainConfig(
    learning_rate=1e-4,
    batch_size=2,
    total_iterations=3,
    image_size=64,
    normalization="instance",
    generator_base_channels=8,
    n_residual_blocks=1,
    discriminator_base_channels=8,
    n_trunk_layers=2,
    checkpoint_every=1000,
    log_every=1,
    seed=3,
)


@pytest.fixture(scope="session")
def tiny_dataset():
    return build_toy_dataset(ToySpec(n_attributes=4, image_size=64, seed=7), 12, 6)


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_dataset, tmp_path_factory):
    """A barely-trained checkpoint: real weights, real config, seconds to make."""
    out = tmp_path_factory.mktemp("tiny-run")
    return train(TINY_TRAIN, tiny_dataset, out)


@pytest.fixture(scope="session")
def toy_dataset():
    return _toyruns.ensure_dataset()


@pytest.fixture(scope="session")
def full_checkpoint():
    return _toyruns.ensure_run(_toyruns.full_config())


@pytest.fixture(scope="session")
def ablation_checkpoint():
    return _toyruns.ensure_run(_toyruns.ablation_config())


@pytest.fixture(scope="session")
def short_checkpoint():
    return _toyruns.ensure_run(_toyruns.short_config())


@pytest.fixture(scope="session")
def no_match_checkpoint():
    return _toyruns.ensure_run(_toyruns.no_match_config())


@pytest.fixture(scope="session")
def no_recon_checkpoint():
    return _toyruns.ensure_run(_toyruns.no_recon_config())


@pytest.fixture(scope="session")
def self_only_checkpoint():
    return _toyruns.ensure_run(_toyruns.self_only_config())


@pytest.fixture(scope="session")
def toy_classifier():
    return _toyruns.ensure_classifier()


def cached_json(name, build):
    """Memoize an expensive pure computation as JSON under tests/.cache."""
    path = _toyruns.CACHE / name
    if path.exists():
        return json.loads(path.read_text())
    value = build()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(value))
    return value


@pytest.fixture
def rng():
    return np.random.default_rng(0)
