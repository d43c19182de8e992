"""
Adversarial Training

Losses, gradient penalties, the Adam optimizer, AdaFM warm-up gating, the
discriminator-loss overfitting monitor and the alternating training loop.

Key Components:
- d_loss / g_loss: non-saturating logistic GAN objective
- r1_penalty / gp_both_sides: gradient penalties via double backprop
- adam_step: Adam with per-parameter step counts
- LossMonitor: windowed discriminator-loss heuristic
- Trainer / train_loop: one D step then one G step per iteration

Version: 1.0.0
License: MIT License
"""

import contextlib
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Deque, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import structlog

from .architecture import (
    Discriminator,
    Generator,
    ModelPartition,
    list_parameters,
)
from .config import GPMode, RunConfig
from .data import ImageCorpus, batch_iterator
from .errors import GraphError, NumericAbort, ShapeError
from .metrics import (
    FeatureExtractor,
    GaussianFit,
    frechet_distance,
    generate,
    make_grid,
    sample_latents,
    save_png,
)
from .models import METRIC_COLUMNS, MetricRow, RunSummary
from .monitoring import TrainingMetrics
from .tensor_core import Parameter, Tensor, backward, no_grad, second_order_grad_norm

logger = structlog.get_logger(__name__)

HEALTHY_BAND = (0.8, 1.3)
OVERFIT_BAND = (0.5, 0.7)


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def d_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """
    Mean of softplus(-D(x)) + softplus(D(G(z))).

    Raises:
        ShapeError: If the logit batches differ in shape or are empty
    """
    if real_logits.shape != fake_logits.shape or real_logits.size == 0:
        raise ShapeError(
            f"real and fake logits must share a non-empty shape, got "
            f"{real_logits.shape} and {fake_logits.shape}"
        )
    return ((-real_logits).softplus() + fake_logits.softplus()).mean()


def g_loss(fake_logits: Tensor) -> Tensor:
    """Non-saturating generator loss, mean of softplus(-D(G(z)))"""
    if fake_logits.size == 0:
        raise ShapeError("fake logits are empty")
    return (-fake_logits).softplus().mean()


def r1_penalty(discriminator: Discriminator, real_batch: Tensor, gamma: float,
               logits: Optional[Tensor] = None) -> Tensor:
    """
    (gamma / 2) * mean over the batch of ||d D(x) / dx||^2, differentiable
    with respect to the discriminator parameters.

    Args:
        logits: Precomputed D(real_batch) to reuse its graph

    Raises:
        GraphError: If real_batch does not require grad
    """
    if not real_batch.requires_grad:
        raise GraphError("the penalized batch must require grad")
    out = discriminator(real_batch) if logits is None else logits
    squared = second_order_grad_norm(out.sum(), real_batch)
    return squared * (gamma / (2.0 * real_batch.shape[0]))


def gp_both_sides(discriminator: Discriminator, real_batch: Tensor, fake_batch: Tensor,
                  gamma: float = 20.0, real_logits: Optional[Tensor] = None,
                  fake_logits: Optional[Tensor] = None) -> Tensor:
    """The penalty applied to real and generated samples"""
    return (r1_penalty(discriminator, real_batch, gamma, real_logits)
            + r1_penalty(discriminator, fake_batch, gamma, fake_logits))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First and second moments and step counts, keyed by parameter name"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: Dict[str, int] = field(default_factory=dict)


def adam_step(params: Mapping[str, Parameter], state: AdamState, cfg: RunConfig) -> None:
    """
    Update every parameter that has a gradient.

    Raises:
        ValueError: If a frozen parameter is passed
        NumericAbort: If a gradient is not finite
    """
    beta1, beta2 = cfg.beta1, cfg.beta2
    for name, param in params.items():
        if param.frozen:
            raise ValueError(f"frozen parameter {name} passed to the optimizer")
        g = param.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for {name}", parameter=name)
        t = state.steps.get(name, 0) + 1
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.data -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(param.data.dtype)
        state.steps[name] = t


def warmup_gate(iteration: int, cfg: RunConfig) -> bool:
    """Whether modulation parameters may update at this iteration"""
    return iteration >= cfg.warmup_iters


# ---------------------------------------------------------------------------
# Overfitting monitor
# ---------------------------------------------------------------------------


class EarlyStopSignal(str, Enum):
    CONTINUE = "continue"
    FLAG_OVERFIT = "flag_overfit"


class MonitorStatus(str, Enum):
    WARMING = "warming"
    HEALTHY = "healthy"
    OVERFIT = "overfit"
    OTHER = "other"


@dataclass
class LossMonitor:
    """
    Windowed mean of the discriminator loss.

    A mean inside [0.8, 1.3] is typical of healthy training; a mean that
    settles inside [0.5, 0.7] suggests the discriminator has begun to
    memorize the training set.
    """
    window: int = 100
    healthy_band: Tuple[float, float] = HEALTHY_BAND
    overfit_band: Tuple[float, float] = OVERFIT_BAND
    values: Deque[float] = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("monitor window must be at least 1")
        self.values = deque(self.values, maxlen=self.window)

    def push(self, value: float):
        self.values.append(float(value))

    @property
    def full(self) -> bool:
        return len(self.values) == self.window

    def mean(self) -> Optional[float]:
        return float(np.mean(self.values)) if self.values else None

    def status(self) -> MonitorStatus:
        if not self.full:
            return MonitorStatus.WARMING
        mean = self.mean()
        if self.overfit_band[0] <= mean <= self.overfit_band[1]:
            return MonitorStatus.OVERFIT
        if self.healthy_band[0] <= mean <= self.healthy_band[1]:
            return MonitorStatus.HEALTHY
        return MonitorStatus.OTHER


def early_stop_check(monitor: LossMonitor, new_d_loss: float) -> EarlyStopSignal:
    """Record a D loss and flag once a full window's mean sits in the overfit band"""
    monitor.push(new_d_loss)
    if monitor.status() == MonitorStatus.OVERFIT:
        return EarlyStopSignal.FLAG_OVERFIT
    return EarlyStopSignal.CONTINUE


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def _suspended(params: Mapping[str, Parameter]) -> Iterator[None]:
    """Stop gradients to trainable parameters inside the block"""
    for param in params.values():
        param.requires_grad = False
    try:
        yield
    finally:
        for param in params.values():
            param.requires_grad = True


@dataclass
class TrainResult:
    rows: List[MetricRow]
    summary: RunSummary


def write_metrics_csv(rows: List[MetricRow], path: Path) -> None:
    frame = pd.DataFrame([r.model_dump() for r in rows], columns=METRIC_COLUMNS)
    frame.to_csv(path, index=False, na_rep="")


class Trainer:
    """
    Alternating GAN training on one corpus.

    Each iteration takes one discriminator step on a real batch and a
    detached fake batch, then one generator step against a discriminator
    whose parameters are excluded from the graph. Modulation parameters
    join the generator update once the warm-up gate opens.
    """

    def __init__(self, generator: Generator, discriminator: Discriminator,
                 corpus: ImageCorpus, cfg: RunConfig, out_dir: Optional[Path] = None,
                 extractor: Optional[FeatureExtractor] = None,
                 partition: Optional[ModelPartition] = None,
                 metrics: Optional[TrainingMetrics] = None):
        if corpus.channels != generator.image_channels:
            raise ShapeError(
                f"corpus has {corpus.channels} channels, generator emits {generator.image_channels}"
            )
        self.generator = generator
        self.discriminator = discriminator
        self.corpus = corpus
        self.cfg = cfg
        self.out_dir = out_dir
        self.extractor = extractor or FeatureExtractor()
        self.partition = partition or ModelPartition.for_config(cfg)
        self.metrics = metrics or TrainingMetrics()

        g_registry = list_parameters(generator)
        modulation = g_registry.modulation()
        self.g_params = {k: p for k, p in g_registry.trainable().items() if k not in modulation}
        self.mod_params = {k: p for k, p in modulation.items() if not p.frozen}
        self.d_params = dict(list_parameters(discriminator).trainable())
        self.g_state = AdamState()
        self.d_state = AdamState()

        self.batches = batch_iterator(corpus, cfg.batch, cfg.seed)
        self.z_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
        self.monitor = LossMonitor(window=cfg.monitor_window)
        self.eval_z = sample_latents(cfg.fid_samples, cfg.latent_dim, cfg.eval_seed)
        self.grid_z = sample_latents(cfg.grid_size ** 2, cfg.latent_dim, cfg.eval_seed + 1)
        self._real_fit: Optional[GaussianFit] = None
        self.iteration = 0

        self.metrics.describe_run(cfg.mode.value, self.partition.label, cfg.seed)
        self.metrics.trainable_parameters.labels(network="generator").set(
            sum(p.size for p in self.g_params.values()) + sum(p.size for p in self.mod_params.values()))
        self.metrics.trainable_parameters.labels(network="discriminator").set(
            sum(p.size for p in self.d_params.values()))

    def _latents(self) -> Tensor:
        return Tensor(self.z_rng.standard_normal((self.cfg.batch, self.cfg.latent_dim)))

    def _check_finite(self, name: str, value: float):
        if not np.isfinite(value):
            path = self._save("nan_abort.ckpt")
            logger.error("non-finite loss", loss=name, iteration=self.iteration,
                         checkpoint=str(path) if path else None)
            raise NumericAbort(f"{name} became non-finite at iteration {self.iteration}",
                               iteration=self.iteration)

    def discriminator_step(self) -> Tuple[float, float]:
        cfg = self.cfg
        real = Tensor(next(self.batches), requires_grad=True)
        with no_grad():
            fake_data = self.generator(self._latents()).data
        both = cfg.gp_mode == GPMode.REAL_AND_FAKE
        fake = Tensor(fake_data, requires_grad=both)

        real_logits = self.discriminator(real)
        fake_logits = self.discriminator(fake)
        loss = d_loss(real_logits, fake_logits)
        if both:
            penalty = gp_both_sides(self.discriminator, real, fake, cfg.penalty_gamma,
                                    real_logits, fake_logits)
        else:
            penalty = r1_penalty(self.discriminator, real, cfg.penalty_gamma, real_logits)
        self._check_finite("d_loss", loss.item())
        self._check_finite("r1", penalty.item())

        backward(loss + penalty)
        adam_step(self.d_params, self.d_state, cfg)
        self.discriminator.zero_grad()
        return loss.item(), penalty.item()

    def generator_step(self) -> float:
        with _suspended(self.d_params):
            logits = self.discriminator(self.generator(self._latents()))
            loss = g_loss(logits)
            self._check_finite("g_loss", loss.item())
            backward(loss)
        params = dict(self.g_params)
        if warmup_gate(self.iteration, self.cfg):
            params.update(self.mod_params)
        else:
            for param in self.mod_params.values():
                param.grad = None
        adam_step(params, self.g_state, self.cfg)
        self.generator.zero_grad()
        return loss.item()

    def real_fit(self) -> GaussianFit:
        if self._real_fit is None:
            count = min(self.cfg.fid_samples, len(self.corpus))
            self._real_fit = self.extractor.fit(self.corpus.images[:count])
        return self._real_fit

    def evaluate(self) -> float:
        """Proxy-FID of the fixed evaluation latents against the corpus"""
        fake = generate(self.generator, self.eval_z)
        return frechet_distance(self.real_fit(), self.extractor.fit(fake))

    def _save(self, filename: str) -> Optional[Path]:
        if self.out_dir is None:
            return None
        from .transfer import save_checkpoint

        path = self.out_dir / filename
        save_checkpoint((self.generator, self.discriminator),
                        {"gen": self.g_state, "disc": self.d_state},
                        path, self.cfg, iteration=self.iteration)
        return path

    def snapshot(self):
        if self.out_dir is None:
            return
        tag = f"iter_{self.iteration + 1:06d}"
        (self.out_dir / "snapshots").mkdir(parents=True, exist_ok=True)
        (self.out_dir / "samples").mkdir(parents=True, exist_ok=True)
        self._save(f"snapshots/{tag}.ckpt")
        grid = make_grid(generate(self.generator, self.grid_z), nrow=self.cfg.grid_size)
        save_png(grid, self.out_dir / "samples" / f"{tag}.png")
        logger.info("snapshot written", iteration=self.iteration + 1,
                    memory_mb=self.metrics.sample_memory())

    def iterate(self) -> Iterator[MetricRow]:
        """Run the remaining iterations, yielding one metric row each"""
        cfg = self.cfg
        while self.iteration < cfg.total_iters:
            started = time.perf_counter()
            d_value, penalty = self.discriminator_step()
            g_value = self.generator_step()
            signal = early_stop_check(self.monitor, d_value)

            pfid = None
            last = self.iteration == cfg.total_iters - 1
            if (self.iteration + 1) % cfg.eval_every == 0 or last:
                pfid = self.evaluate()
            if (self.iteration + 1) % cfg.snapshot_every == 0:
                self.snapshot()

            wall_ms = (time.perf_counter() - started) * 1000.0 if cfg.record_wall_time else 0.0
            row = MetricRow(iter=self.iteration, d_loss=d_value, g_loss=g_value, r1=penalty,
                            pfid=pfid, overfit_flag=int(signal == EarlyStopSignal.FLAG_OVERFIT),
                            wall_ms=wall_ms)
            self.metrics.record_iteration(row)
            if pfid is not None:
                logger.info("evaluation", iteration=self.iteration, pfid=pfid,
                            d_loss_window=self.monitor.mean())
            self.iteration += 1
            yield row

    def run(self) -> TrainResult:
        rows: List[MetricRow] = []
        summary = RunSummary(mode=self.cfg.mode.value, partition=self.partition.label,
                             iterations_completed=0)
        best: Optional[float] = None
        for row in self.iterate():
            rows.append(row)
            if row.pfid is not None:
                summary.final_pfid = row.pfid
                if best is None or row.pfid < best:
                    best = row.pfid
                    summary.best_pfid, summary.best_pfid_iter = row.pfid, row.iter
                    self.metrics.record_best(row.pfid)
                if self.out_dir is not None:
                    write_metrics_csv(rows, self.out_dir / "metrics.csv")
            if row.overfit_flag and not summary.overfit_flagged:
                summary.overfit_flagged = True
                summary.first_overfit_iter = row.iter
                logger.warning("discriminator loss settled in the overfit band",
                               iteration=row.iter, window_mean=self.monitor.mean())
                if self.cfg.early_stop:
                    summary.stopped_early = True
                    if row.pfid is None:
                        row.pfid = self.evaluate()
                        summary.final_pfid = row.pfid
                        if best is None or row.pfid < best:
                            summary.best_pfid, summary.best_pfid_iter = row.pfid, row.iter
                    break
        summary.iterations_completed = len(rows)

        if self.out_dir is not None:
            write_metrics_csv(rows, self.out_dir / "metrics.csv")
            self._save("final.ckpt")
            (self.out_dir / "summary.json").write_text(summary.model_dump_json(indent=2),
                                                       encoding="utf-8")
            self.metrics.write(self.out_dir / "metrics.prom")
        logger.info("training finished", mode=summary.mode, partition=summary.partition,
                    iterations=summary.iterations_completed, best_pfid=summary.best_pfid)
        return TrainResult(rows=rows, summary=summary)


def train_loop(models: Tuple[Generator, Discriminator], corpus: ImageCorpus, cfg: RunConfig,
               out_dir: Optional[Path] = None, **kwargs) -> TrainResult:
    """Train ``models`` on ``corpus`` for ``cfg.total_iters`` iterations"""
    generator, discriminator = models
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    return Trainer(generator, discriminator, corpus, cfg, out_dir, **kwargs).run()
