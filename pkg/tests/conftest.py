"""Shared fixtures: tiny desk configurations that keep the suite fast on CPU."""

import os

import numpy as np
import pytest

from src.config import RunConfig
from src.data import SyntheticDomain, SyntheticSpec, synth_generate

TINY = dict(
    resolution=16,
    channels=[16, 8, 8],
    latent_dim=8,
    style_dim=8,
    mapping_depth=2,
    batch=4,
    total_iters=4,
    eval_every=2,
    snapshot_every=1000,
    fid_samples=8,
    monitor_window=2,
    synth_count=16,
    grid_size=2,
    interp_steps=3,
)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the long desk-scale reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in list(os.environ):
        if key.startswith("GANXFER_"):
            monkeypatch.delenv(key, raising=False)


@pytest.fixture
def make_config():
    def factory(**overrides) -> RunConfig:
        return RunConfig(**{**TINY, **overrides})
    return factory


@pytest.fixture
def tiny_config(make_config) -> RunConfig:
    return make_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def target_corpus():
    return synth_generate(SyntheticSpec(domain=SyntheticDomain.TARGET_SHAPES, count=16,
                                        seed=3, size=16))


@pytest.fixture
def config_file(tmp_path, make_config):
    """Write a tiny config as key=value lines and return its path"""
    def factory(**overrides):
        path = tmp_path / "run.conf"
        path.write_text("\n".join(make_config(**overrides).to_lines()) + "\n")
        return path
    return factory
