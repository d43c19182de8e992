"""
Training Monitoring and Observability Module

This module provides structured logging setup and a Prometheus metrics
registry for training runs. Each run owns a private registry whose text
exposition is written next to the run's other artifacts.

Version: 1.0.0
License: MIT License
"""

import logging
from pathlib import Path
from typing import Optional

try:
    import psutil
except ImportError:
    psutil = None
import structlog
from prometheus_client import CollectorRegistry, Counter, Gauge, Info, generate_latest

from .config import LogFormat, Settings, get_settings
from .models import MetricRow

logger = structlog.get_logger(__name__)


class TrainingMetrics:
    """
    Prometheus metrics for one training run.

    The registry is private so that several runs in one process (the sweep
    command, the test suite) never share collectors.
    """

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        self.registry = registry or CollectorRegistry()
        self._init_metrics()

    def _init_metrics(self):
        """Initialize Prometheus metrics"""
        self.iterations = Counter(
            'train_iterations_total',
            'Completed training iterations',
            registry=self.registry
        )
        self.loss = Gauge(
            'train_loss',
            'Most recent loss value',
            ['network'],
            registry=self.registry
        )
        self.penalty = Gauge(
            'train_gradient_penalty',
            'Most recent discriminator gradient penalty',
            registry=self.registry
        )
        self.proxy_fid = Gauge(
            'train_proxy_fid',
            'Most recent proxy-FID estimate',
            registry=self.registry
        )
        self.best_proxy_fid = Gauge(
            'train_best_proxy_fid',
            'Lowest proxy-FID seen so far',
            registry=self.registry
        )
        self.overfit_flag = Gauge(
            'train_overfit_flag',
            'Whether the discriminator-loss monitor currently flags overfitting',
            registry=self.registry
        )
        self.trainable_parameters = Gauge(
            'model_trainable_parameters',
            'Number of trainable scalars',
            ['network'],
            registry=self.registry
        )
        self.memory_usage_bytes = Gauge(
            'process_resident_memory_sampled_bytes',
            'Resident memory sampled at snapshots',
            registry=self.registry
        )
        self.run_info = Info(
            'run',
            'Run identification',
            registry=self.registry
        )

    def describe_run(self, mode: str, partition: str, seed: int):
        self.run_info.info({"mode": mode, "partition": partition, "seed": str(seed)})

    def record_iteration(self, row: MetricRow):
        """Record one training iteration"""
        self.iterations.inc()
        self.loss.labels(network="discriminator").set(row.d_loss)
        self.loss.labels(network="generator").set(row.g_loss)
        self.penalty.set(row.r1)
        self.overfit_flag.set(row.overfit_flag)
        if row.pfid is not None:
            self.proxy_fid.set(row.pfid)

    def record_best(self, pfid: float):
        self.best_proxy_fid.set(pfid)

    def sample_memory(self) -> Optional[float]:
        """Sample resident memory in megabytes, if psutil is installed"""
        if psutil is None:
            return None
        rss = psutil.Process().memory_info().rss
        self.memory_usage_bytes.set(rss)
        return rss / (1024 * 1024)

    def get_metrics(self) -> str:
        """Get Prometheus metrics in text format"""
        return generate_latest(self.registry).decode('utf-8')

    def write(self, path: Path):
        path.write_text(self.get_metrics(), encoding="utf-8")


def setup_structured_logging(settings: Optional[Settings] = None):
    """Configure structured logging for the process"""
    settings = settings or get_settings()
    renderer = (
        structlog.processors.JSONRenderer()
        if settings.log_format == LogFormat.JSON
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )

    logging.basicConfig(level=getattr(logging, settings.log_level), format="%(message)s")
