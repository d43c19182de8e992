"""
Desk-scale reproductions of the transfer claims. Slow; run with --runslow.
"""

import numpy as np
import pytest

from src.architecture import build_models, configure_models, list_parameters
from src.config import RunConfig, TrainMode
from src.data import SyntheticDomain, SyntheticSpec, resolve_corpus, synth_generate
from src.train import Trainer
from src.transfer import load_checkpoint, save_checkpoint, transfer_init

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3)

DESK = dict(
    resolution=32,
    channels=[32, 32, 16, 16],
    latent_dim=32,
    style_dim=32,
    mapping_depth=4,
    batch=16,
    eval_every=200,
    snapshot_every=100000,
    fid_samples=256,
    monitor_window=100,
)


def _desk_config(**overrides) -> RunConfig:
    return RunConfig(**{**DESK, **overrides})


def _transfer_run(source, mode: str, seed: int, total_iters: int):
    cfg = _desk_config(mode=mode, gm=4, dn=2, seed=seed, total_iters=total_iters)
    target = resolve_corpus("synth:target_shapes", cfg.resolution, False, count=2000,
                            seed=seed, limit_n=500)
    g, d, partition = configure_models(cfg)
    transfer_init(source, g, d, partition, cfg.mode)
    return Trainer(g, d, target, cfg, partition=partition).run()


@pytest.fixture(scope="module")
def desk_source(tmp_path_factory):
    """Source model pretrained for 3000 iterations on 5000 synthetic images"""
    cfg = _desk_config(total_iters=3000)
    cfg = cfg.model_copy(update={"mode": TrainMode.SCRATCH, "head_type": cfg.pretrain_head})
    corpus = synth_generate(SyntheticSpec(domain=SyntheticDomain.SOURCE_SHAPES, count=5000,
                                          seed=0, size=cfg.resolution))
    g, d, partition = configure_models(cfg)
    Trainer(g, d, corpus, cfg, partition=partition).run()
    path = save_checkpoint((g, d), None, tmp_path_factory.mktemp("source") / "source.ckpt", cfg)
    return load_checkpoint(path)


@pytest.fixture(scope="module")
def desk_runs(desk_source):
    return {
        seed: {mode: _transfer_run(desk_source, mode, seed, 2000)
               for mode in ("adafm", "smallhead", "scratch")}
        for seed in SEEDS
    }


def _first_reaching(rows, threshold):
    for row in rows:
        if row.pfid is not None and row.pfid <= threshold:
            return row.iter + 1
    return None


def test_freeze_and_warmup_over_a_long_run(tmp_path):
    source_cfg = _desk_config(mode="scratch", head_type="style")
    source_models = build_models(source_cfg, seed=21)
    source_registry = list_parameters(source_models)
    source = {name: source_registry[name].data.copy() for name in source_registry.names()}
    ckpt = load_checkpoint(save_checkpoint(source_models, None, tmp_path / "source.ckpt", source_cfg))

    cfg = _desk_config(mode="adafm", gm=4, dn=2, total_iters=500, eval_every=250, fid_samples=32)
    g, d, partition = configure_models(cfg)
    transfer_init(ckpt, g, d, partition, cfg.mode)
    registry = list_parameters((g, d))
    frozen = registry.frozen()
    modulation = registry.modulation()
    assert frozen and modulation
    assert cfg.warmup_iters == 83

    corpus = resolve_corpus("synth:target_shapes", cfg.resolution, False, count=200, seed=0)
    for row in Trainer(g, d, corpus, cfg, partition=partition).iterate():
        for name, tensor in frozen.items():
            assert np.array_equal(tensor.data, source[name]), name
        if row.iter < cfg.warmup_iters:
            for name, tensor in modulation.items():
                identity = 1.0 if name.endswith("gamma") else 0.0
                assert np.all(tensor.data == identity), name


def test_transfer_beats_scratch(desk_runs):
    better = 0
    faster = 0
    for runs in desk_runs.values():
        adafm, scratch = runs["adafm"], runs["scratch"]
        if adafm.summary.best_pfid < scratch.summary.best_pfid:
            better += 1
        reached = _first_reaching(adafm.rows, scratch.summary.final_pfid)
        if reached is not None and reached <= 0.5 * scratch.summary.iterations_completed:
            faster += 1
    assert better >= 3
    assert faster >= 3


def test_modulation_beats_small_head(desk_runs):
    wins = sum(
        runs["adafm"].summary.best_pfid <= runs["smallhead"].summary.best_pfid
        for runs in desk_runs.values()
    )
    assert wins >= 3
