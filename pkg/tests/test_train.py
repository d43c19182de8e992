import json

import numpy as np
import pandas as pd
import pytest

from src.architecture import configure_models, list_parameters
from src.config import GPMode
from src.data import SyntheticDomain, SyntheticSpec, synth_generate
from src.errors import GraphError, NumericAbort, ShapeError
from src.models import METRIC_COLUMNS
from src.monitoring import TrainingMetrics
from src.tensor_core import Parameter, Tensor, backward, conv2d, precision
from src.train import (
    AdamState,
    EarlyStopSignal,
    LossMonitor,
    MonitorStatus,
    Trainer,
    adam_step,
    d_loss,
    early_stop_check,
    g_loss,
    gp_both_sides,
    r1_penalty,
    train_loop,
    warmup_gate,
)


def linear_discriminator(a):
    weights = Tensor(a)
    return lambda x: (x * weights).sum(axis=1)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _finite_difference(fn, array, eps=1e-6):
    """Central differences of a scalar fn() w.r.t. array, edited in place"""
    result = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + eps
        upper = fn()
        array[idx] = original - eps
        lower = fn()
        array[idx] = original
        result[idx] = (upper - lower) / (2 * eps)
    return result


def _reference_adam(start, curvature, cfg, steps):
    """Textbook Adam on f(x) = sum(curvature * x^2) / 2, one row per step"""
    x = start.astype(np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    trajectory = []
    for t in range(1, steps + 1):
        g = curvature * x
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        x = x - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        trajectory.append(x)
    return np.stack(trajectory)


def _share_rank_one_modulation(fs_registry, adafm_registry, rng):
    """Randomize FS scales and shifts and give AdaFM the same values on every input channel"""
    for name, param in fs_registry.modulation().items():
        base, family = name.rsplit("/", 1)
        if family == "gamma_hat":
            param.data[...] = rng.uniform(0.9, 1.1, size=param.shape)
        else:
            param.data[...] = rng.uniform(-0.05, 0.05, size=param.shape)
        full = adafm_registry[f"{base}/{family[:-len('_hat')]}"]
        full.data[...] = np.repeat(param.data[:, None], full.shape[1], axis=1)


class TestLosses:
    def test_zero_logits(self):
        zeros = Tensor(np.zeros(4))
        assert d_loss(zeros, zeros).item() == pytest.approx(2 * np.log(2), rel=1e-6)
        assert g_loss(zeros).item() == pytest.approx(np.log(2), rel=1e-6)

    def test_confident_discriminator(self):
        real = Tensor(np.full(3, 30.0))
        fake = Tensor(np.full(3, -30.0))
        assert d_loss(real, fake).item() == pytest.approx(0.0, abs=1e-12)
        assert g_loss(fake).item() == pytest.approx(30.0, rel=1e-6)

    def test_random_logits_match_log_sigmoid(self, rng):
        real, fake = rng.normal(scale=3.0, size=(2, 32))
        with precision(np.float64):
            d_value = d_loss(Tensor(real), Tensor(fake)).item()
            g_value = g_loss(Tensor(fake)).item()
        expected_d = np.mean(-np.log(_sigmoid(real)) - np.log(1.0 - _sigmoid(fake)))
        expected_g = np.mean(-np.log(_sigmoid(fake)))
        assert d_value == pytest.approx(expected_d, rel=1e-6)
        assert g_value == pytest.approx(expected_g, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            d_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
        with pytest.raises(ShapeError):
            g_loss(Tensor(np.zeros(0)))


class TestPenalties:
    def test_r1_of_linear_discriminator(self):
        a = np.array([1.0, -2.0, 0.5])
        with precision(np.float64):
            real = Tensor(np.random.default_rng(0).normal(size=(5, 3)), requires_grad=True)
            value = r1_penalty(linear_discriminator(a), real, gamma=10.0).item()
        assert value == pytest.approx(5.0 * float(a @ a), abs=1e-6)

    def test_both_sides_of_linear_discriminator(self):
        a = np.array([0.3, 0.4])
        rng = np.random.default_rng(1)
        with precision(np.float64):
            real = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
            fake = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
            value = gp_both_sides(linear_discriminator(a), real, fake, gamma=20.0).item()
        assert value == pytest.approx(20.0 * float(a @ a), abs=1e-6)

    def test_r1_of_constant_discriminator(self):
        with precision(np.float64):
            real = Tensor(np.ones((3, 2)), requires_grad=True)
            value = r1_penalty(lambda x: (x * 0.0).sum(axis=1) + 1.0, real, gamma=10.0).item()
        assert value == 0.0

    def test_r1_of_small_conv_discriminator(self, rng):
        with precision(np.float64):
            w = Tensor(rng.normal(scale=0.5, size=(3, 2, 3, 3)))
            head = Tensor(rng.normal(size=(3 * 4 * 4,)))

            def discriminator(x):
                h = conv2d(x, w, padding=1).tanh()
                return (h.reshape(x.shape[0], -1) * head).sum(axis=1)

            batch = rng.normal(size=(2, 2, 4, 4))
            value = r1_penalty(discriminator, Tensor(batch, requires_grad=True), gamma=10.0).item()
            # each logit depends on its own sample only
            grads = _finite_difference(lambda: discriminator(Tensor(batch)).sum().item(), batch)
        expected = 5.0 * float(np.sum(grads ** 2)) / batch.shape[0]
        assert value == pytest.approx(expected, rel=1e-3)

    def test_penalized_batch_must_require_grad(self):
        with pytest.raises(GraphError):
            r1_penalty(linear_discriminator(np.ones(2)), Tensor(np.ones((2, 2))), 10.0)

    def test_penalty_reaches_discriminator_weights(self):
        with precision(np.float64):
            w = Parameter(np.array([1.0, 2.0]))
            real = Tensor(np.ones((3, 2)), requires_grad=True)
            penalty = r1_penalty(lambda x: (x * w).sum(axis=1), real, gamma=2.0)
            backward(penalty)
        # penalty = ||w||^2, so its gradient is 2w
        np.testing.assert_allclose(w.grad, [2.0, 4.0])


class TestAdam:
    def test_first_step_moves_by_learning_rate(self, tiny_config):
        p = Parameter(np.array([1.0, -1.0, 0.5]))
        p.grad = np.array([0.2, -3.0, 0.0], dtype=np.float32)
        state = AdamState()
        adam_step({"p": p}, state, tiny_config)
        lr = tiny_config.lr
        np.testing.assert_allclose(p.data, [1.0 - lr, -1.0 + lr, 0.5], rtol=1e-5)
        assert state.steps["p"] == 1

    def test_zero_beta1_keeps_the_current_gradient(self, tiny_config):
        assert tiny_config.beta1 == 0.0
        p = Parameter(np.zeros(3))
        state = AdamState()
        for g in ([1.0, -2.0, 0.5], [0.25, 4.0, -1.0], [3.0, 0.0, 2.0]):
            p.grad = np.array(g, dtype=np.float32)
            adam_step({"p": p}, state, tiny_config)
            np.testing.assert_array_equal(state.m["p"], p.grad)

    def test_quadratic_bowl_trajectory(self, make_config):
        cfg = make_config(lr=0.05, beta1=0.9, beta2=0.99)
        curvature = np.array([1.0, 4.0, 0.25])
        start = np.array([2.0, -1.5, 3.0])
        with precision(np.float64):
            p = Parameter(start)
        state = AdamState()
        trajectory = []
        for _ in range(10):
            p.grad = curvature * p.data
            adam_step({"p": p}, state, cfg)
            trajectory.append(p.data.copy())
        np.testing.assert_allclose(np.stack(trajectory), _reference_adam(start, curvature, cfg, 10),
                                   rtol=0, atol=1e-6)
        assert state.steps["p"] == 10

    def test_step_counts_are_per_parameter(self, tiny_config):
        a, b = Parameter(np.ones(2)), Parameter(np.ones(2))
        state = AdamState()
        a.grad = np.ones(2, dtype=np.float32)
        adam_step({"a": a, "b": b}, state, tiny_config)
        b.grad = np.ones(2, dtype=np.float32)
        adam_step({"a": a, "b": b}, state, tiny_config)
        assert state.steps == {"a": 2, "b": 1}

    def test_frozen_parameter_is_rejected(self, tiny_config):
        p = Parameter(np.ones(2))
        p.freeze()
        with pytest.raises(ValueError):
            adam_step({"p": p}, AdamState(), tiny_config)

    def test_non_finite_gradient_aborts(self, tiny_config):
        p = Parameter(np.ones(2))
        p.grad = np.array([np.nan, 0.0], dtype=np.float32)
        with pytest.raises(NumericAbort) as excinfo:
            adam_step({"p": p}, AdamState(), tiny_config)
        assert excinfo.value.parameter == "p"

    def test_warmup_gate(self, make_config):
        cfg = make_config(total_iters=12, warmup_iters=3)
        assert [warmup_gate(i, cfg) for i in range(5)] == [False, False, False, True, True]
        assert make_config(total_iters=600).warmup_iters == 100


class TestMonitor:
    @pytest.mark.parametrize("values,status", [
        ([0.6, 0.6], MonitorStatus.WARMING),
        ([0.6, 0.6, 0.6], MonitorStatus.OVERFIT),
        ([1.0, 1.1, 0.9], MonitorStatus.HEALTHY),
        ([2.0, 2.0, 2.0], MonitorStatus.OTHER),
        ([0.75, 0.75, 0.75], MonitorStatus.OTHER),
    ])
    def test_status(self, values, status):
        monitor = LossMonitor(window=3)
        for v in values:
            monitor.push(v)
        assert monitor.status() == status

    def test_window_slides(self):
        monitor = LossMonitor(window=2)
        for v in (5.0, 1.0, 1.0):
            monitor.push(v)
        assert monitor.mean() == 1.0

    def test_early_stop_check(self):
        monitor = LossMonitor(window=2)
        assert early_stop_check(monitor, 0.6) == EarlyStopSignal.CONTINUE
        assert early_stop_check(monitor, 0.6) == EarlyStopSignal.FLAG_OVERFIT
        assert early_stop_check(monitor, 5.0) == EarlyStopSignal.CONTINUE

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            LossMonitor(window=0)


def _snapshot(registry):
    return {name: registry[name].data.copy() for name in registry.names()}


class TestTrainer:
    def test_freeze_and_warmup_invariants(self, make_config, target_corpus):
        cfg = make_config(mode="adafm", gm=2, dn=1, total_iters=4, warmup_iters=2)
        g, d, partition = configure_models(cfg)
        registry = list_parameters((g, d))
        before = _snapshot(registry)
        trainer = Trainer(g, d, target_corpus, cfg, partition=partition)

        for row in trainer.iterate():
            for name, tensor in registry.frozen().items():
                np.testing.assert_array_equal(tensor.data, before[name])
            if row.iter < cfg.warmup_iters:
                for name, tensor in registry.modulation().items():
                    identity = 1.0 if name.rsplit("/", 1)[-1] == "gamma" else 0.0
                    assert np.all(tensor.data == identity), name

        moved = [n for n in registry.trainable() if not np.array_equal(registry[n].data, before[n])]
        assert "gen/fc/W" in moved
        assert "disc/fc/W" in moved
        assert any(n in registry.modulation() for n in moved)

    def test_optimizer_state_skips_frozen_and_pinned_parameters(self, make_config, target_corpus):
        cfg = make_config(mode="adafm", gm=2, dn=1, total_iters=4, warmup_iters=2)
        g, d, partition = configure_models(cfg)
        modulation = set(list_parameters(g).modulation())
        frozen = set(list_parameters(g).frozen()) | set(list_parameters(d).frozen())
        assert modulation and frozen
        trainer = Trainer(g, d, target_corpus, cfg, partition=partition)

        for row in trainer.iterate():
            held = set()
            for state in (trainer.g_state, trainer.d_state):
                held |= set(state.m) | set(state.v) | set(state.steps)
            assert not held & frozen
            if row.iter < cfg.warmup_iters:
                assert not held & modulation
        assert modulation <= set(trainer.g_state.m)

    def test_filter_selection_matches_rank_one_adafm(self, make_config, target_corpus):
        runs = {}
        for mode in ("fs", "adafm"):
            cfg = make_config(mode=mode, gm=2, dn=1, total_iters=4, warmup_iters=4)
            runs[mode] = (cfg, *configure_models(cfg))
        _share_rank_one_modulation(list_parameters(runs["fs"][1]), list_parameters(runs["adafm"][1]),
                                   np.random.default_rng(5))

        frames = {}
        for mode, (cfg, g, d, partition) in runs.items():
            rows = Trainer(g, d, target_corpus, cfg, partition=partition).run().rows
            frames[mode] = pd.DataFrame([r.model_dump() for r in rows])
        pd.testing.assert_frame_equal(frames["fs"], frames["adafm"], check_exact=False, rtol=1e-6)

    def test_filter_selection_gradient_sums_adafm_gradient(self, make_config):
        generators = {}
        with precision(np.float64):
            for mode in ("fs", "adafm"):
                generators[mode] = configure_models(make_config(mode=mode, gm=2, dn=1))[0]
            fs_registry = list_parameters(generators["fs"])
            adafm_registry = list_parameters(generators["adafm"])
            _share_rank_one_modulation(fs_registry, adafm_registry, np.random.default_rng(6))

            z = np.random.default_rng(7).standard_normal((2, 8))
            outputs = {}
            for mode, g in generators.items():
                out = g(Tensor(z))
                outputs[mode] = out.data
                backward(out.sum())
        np.testing.assert_allclose(outputs["fs"], outputs["adafm"], rtol=1e-10, atol=1e-12)
        for name, param in fs_registry.modulation().items():
            base, family = name.rsplit("/", 1)
            full = adafm_registry[f"{base}/{family[:-len('_hat')]}"]
            np.testing.assert_allclose(param.grad, full.grad.sum(axis=1), rtol=1e-8, atol=1e-10)

    def test_rows_and_evaluation_schedule(self, tiny_config, target_corpus):
        g, d, partition = configure_models(tiny_config)
        result = Trainer(g, d, target_corpus, tiny_config, partition=partition).run()
        assert [r.iter for r in result.rows] == [0, 1, 2, 3]
        assert [r.pfid is not None for r in result.rows] == [False, True, False, True]
        assert all(r.wall_ms == 0.0 for r in result.rows)
        assert result.summary.iterations_completed == 4
        assert result.summary.final_pfid == result.rows[-1].pfid
        assert result.summary.best_pfid == min(result.rows[1].pfid, result.rows[3].pfid)

    def test_deterministic(self, tiny_config, target_corpus):
        runs = []
        for _ in range(2):
            g, d, partition = configure_models(tiny_config)
            runs.append(Trainer(g, d, target_corpus, tiny_config, partition=partition).run())
        assert [r.model_dump() for r in runs[0].rows] == [r.model_dump() for r in runs[1].rows]

    def test_outputs(self, make_config, target_corpus, tmp_path):
        cfg = make_config(snapshot_every=2, record_wall_time=True)
        out = tmp_path / "run"
        result = train_loop(configure_models(cfg)[:2], target_corpus, cfg, out)
        frame = pd.read_csv(out / "metrics.csv")
        assert list(frame.columns) == METRIC_COLUMNS
        assert len(frame) == 4
        assert frame["pfid"].isna().tolist() == [True, False, True, False]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["iterations_completed"] == 4
        assert (out / "final.ckpt").is_file()
        assert (out / "snapshots" / "iter_000002.ckpt").is_file()
        assert (out / "samples" / "iter_000004.png").is_file()
        assert "train_iterations_total 4.0" in (out / "metrics.prom").read_text()
        assert all(r.wall_ms > 0 for r in result.rows)

    def test_penalty_on_real_and_fake(self, make_config, target_corpus):
        cfg = make_config(gp_mode="real_and_fake", total_iters=2)
        assert cfg.gp_mode == GPMode.REAL_AND_FAKE
        g, d, partition = configure_models(cfg)
        result = Trainer(g, d, target_corpus, cfg, partition=partition).run()
        assert all(r.r1 > 0 for r in result.rows)

    def test_grayscale(self, make_config):
        cfg = make_config(grayscale=True, total_iters=2)
        corpus = synth_generate(SyntheticSpec(domain=SyntheticDomain.TARGET_SHAPES, count=8,
                                              size=16, grayscale=True))
        g, d, partition = configure_models(cfg)
        assert len(Trainer(g, d, corpus, cfg, partition=partition).run().rows) == 2

    def test_channel_mismatch(self, make_config, target_corpus):
        cfg = make_config(grayscale=True)
        g, d, _ = configure_models(cfg)
        with pytest.raises(ShapeError):
            Trainer(g, d, target_corpus, cfg)

    def test_non_finite_loss_aborts_with_checkpoint(self, tiny_config, target_corpus, tmp_path):
        g, d, partition = configure_models(tiny_config)
        g.fc.b.data[0] = np.nan
        trainer = Trainer(g, d, target_corpus, tiny_config, tmp_path, partition=partition)
        with pytest.raises(NumericAbort) as excinfo:
            trainer.run()
        assert excinfo.value.exit_code == 4
        assert (tmp_path / "nan_abort.ckpt").is_file()

    def test_early_stop(self, make_config, target_corpus):
        cfg = make_config(early_stop=True, total_iters=4)
        g, d, partition = configure_models(cfg)
        trainer = Trainer(g, d, target_corpus, cfg, partition=partition)
        trainer.monitor = LossMonitor(window=1, overfit_band=(0.0, 100.0))
        result = trainer.run()
        assert len(result.rows) == 1
        assert result.summary.stopped_early
        assert result.summary.first_overfit_iter == 0
        assert result.rows[0].pfid is not None
        assert result.summary.best_pfid == result.rows[0].pfid

    def test_overfit_flag_without_early_stop(self, tiny_config, target_corpus):
        g, d, partition = configure_models(tiny_config)
        trainer = Trainer(g, d, target_corpus, tiny_config, partition=partition)
        trainer.monitor = LossMonitor(window=1, overfit_band=(0.0, 100.0))
        result = trainer.run()
        assert len(result.rows) == 4
        assert result.summary.overfit_flagged
        assert not result.summary.stopped_early

    def test_metrics_registry(self, tiny_config, target_corpus):
        metrics = TrainingMetrics()
        g, d, partition = configure_models(tiny_config)
        Trainer(g, d, target_corpus, tiny_config, partition=partition, metrics=metrics).run()
        text = metrics.get_metrics()
        assert "train_iterations_total 4.0" in text
        assert 'model_trainable_parameters{network="generator"}' in text
