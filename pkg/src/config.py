"""
Run Configuration Management

This module provides configuration management for GAN filter-transfer runs:
the process-wide logging settings and the per-run hyper-parameter set shared
by pretraining, transfer, evaluation and analysis commands.

Key Components:
- Enumerations for training modes, penalty modes, head types and regimes
- RunConfig: validated hyper-parameters with derived defaults
- Config files as flat key=value lines (python-dotenv syntax)
- Resolved-config rendering that round-trips through the loader

Version: 1.0.0
License: MIT License
"""

import hashlib
import json
import math
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values
from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class TrainMode(str, Enum):
    """Transfer strategies, from training from scratch to the full method"""
    SCRATCH = "scratch"
    FINETUNE_ALL = "finetune_all"
    GPHEAD = "gphead"
    SMALLHEAD = "smallhead"
    ADAFM = "adafm"
    FS = "fs"
    WDEMOD = "wdemod"


class GPMode(str, Enum):
    """Samples the discriminator gradient penalty is applied to"""
    REAL_ONLY = "real_only"
    REAL_AND_FAKE = "real_and_fake"


class HeadType(str, Enum):
    """Generator specific-part architecture"""
    STYLE = "style"
    RESIDUAL = "residual"


class DemodForm(str, Enum):
    """Weight demodulation normalizer: printed linear sum or squared norm"""
    LINEAR = "linear"
    SQUARED = "squared"


class Regime(str, Enum):
    """Data regime presets"""
    STANDARD = "standard"
    EXTREME = "extreme"


class LogFormat(str, Enum):
    """Structured log renderers"""
    JSON = "json"
    CONSOLE = "console"


# Modes that keep the whole network trainable regardless of gm/dn.
UNPARTITIONED_MODES = frozenset({TrainMode.SCRATCH, TrainMode.FINETUNE_ALL})


class Settings(BaseSettings):
    """
    Process-wide settings that are not part of a run's reproducible state.
    """

    app_name: str = Field(default="GAN Filter Transfer", description="Application name")
    app_version: str = Field(default="1.0.0", description="Application version")
    log_level: str = Field(default="INFO", description="Minimum log level")
    log_format: LogFormat = Field(default=LogFormat.CONSOLE, description="Log renderer")

    model_config = SettingsConfigDict(env_prefix="GANXFER_", env_file=".env", extra="ignore")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level: {v}")
        return level


class RunConfig(BaseSettings):
    """
    Hyper-parameters of one pretraining, transfer or evaluation run.

    Field defaults are the desk-scale values; the optimizer and penalty
    values are the usual R1 recipe (lr 1e-4, betas 0 and 0.99, gamma 10).
    Fields derived from other fields (``warmup_iters``, regime presets) are
    filled in by the model validator unless they were set explicitly.
    """

    # Reproducibility
    seed: int = Field(default=0, description="Master seed for data order, latents and init")
    eval_seed: int = Field(default=1234, description="Seed of the fixed evaluation latents")

    # Transfer strategy
    mode: TrainMode = Field(default=TrainMode.SCRATCH, description="Transfer strategy")
    gm: int = Field(default=4, ge=0, description="Frozen generator groups (output side)")
    dn: int = Field(default=2, ge=0, description="Frozen discriminator groups (input side)")
    regime: Regime = Field(default=Regime.STANDARD, description="Data regime preset")
    limit_n: Optional[int] = Field(default=None, ge=1, description="Target training images")

    # Architecture
    resolution: int = Field(default=32, description="Image side length")
    channels: Optional[List[int]] = Field(
        default=None, description="Generator widths from 4x4 to full resolution"
    )
    base_channels: int = Field(default=32, ge=1, description="Width at full resolution")
    max_channels: int = Field(default=256, ge=1, description="Width cap at low resolution")
    blocks_per_group: int = Field(default=1, ge=1, description="Residual blocks per tail group")
    latent_dim: int = Field(default=64, ge=1, description="Latent vector size")
    style_dim: int = Field(default=64, ge=1, description="Style vector size")
    mapping_depth: int = Field(default=8, ge=1, description="Mapping MLP layers")
    head_type: Optional[HeadType] = Field(
        default=None, description="Generator head; derived from mode when unset"
    )
    pretrain_head: HeadType = Field(
        default=HeadType.RESIDUAL, description="Generator head used by source pretraining"
    )
    grayscale: bool = Field(default=False, description="Single-channel images")
    style_demod_form: DemodForm = Field(
        default=DemodForm.SQUARED, description="Demodulation form inside style blocks"
    )
    wdemod_form: DemodForm = Field(
        default=DemodForm.SQUARED, description="Demodulation form for wdemod mode"
    )
    epsilon_demod: float = Field(default=1e-8, gt=0, description="Demodulation epsilon")

    # Optimization
    lr: float = Field(default=1e-4, gt=0, description="Adam learning rate")
    beta1: float = Field(default=0.0, ge=0, lt=1, description="Adam first-moment decay")
    beta2: float = Field(default=0.99, ge=0, lt=1, description="Adam second-moment decay")
    adam_eps: float = Field(default=1e-8, gt=0, description="Adam epsilon")
    batch: int = Field(default=16, ge=1, description="Minibatch size")
    r1_gamma: float = Field(default=10.0, ge=0, description="R1 weight on real samples")
    gp_mode: GPMode = Field(default=GPMode.REAL_ONLY, description="Gradient penalty samples")
    gp_gamma_extreme: float = Field(
        default=20.0, ge=0, description="Penalty weight when penalizing real and fake"
    )
    total_iters: int = Field(default=6000, ge=1, description="Training iterations")
    warmup_iters: Optional[int] = Field(
        default=None, ge=0, description="Iterations with modulation pinned at identity"
    )

    # Monitoring
    eval_every: int = Field(default=500, ge=1, description="Proxy-FID interval")
    snapshot_every: int = Field(default=1000, ge=1, description="Checkpoint and grid interval")
    fid_samples: int = Field(default=2000, ge=2, description="Samples per proxy-FID estimate")
    monitor_window: int = Field(default=100, ge=1, description="D-loss averaging window")
    early_stop: bool = Field(default=False, description="Stop when the monitor flags overfitting")
    record_wall_time: bool = Field(default=False, description="Fill the wall_ms metric column")

    # Data
    source_data: str = Field(default="synth:source_shapes", description="Pretraining corpus")
    target_data: str = Field(default="synth:target_shapes", description="Transfer corpus")
    synth_count: int = Field(default=2000, ge=1, description="Images per synthetic corpus")

    # Outputs
    grid_size: int = Field(default=8, ge=1, description="Rows and columns of sample grids")
    interp_steps: int = Field(default=8, ge=2, description="Frames per interpolation strip")
    mix_block: int = Field(default=1, ge=1, le=2, description="Style block replaced when mixing")
    gamma_bank: Optional[str] = Field(
        default=None, description="Conv bank analysed by the sorted gamma matrix"
    )
    sweep_pairs: List[str] = Field(
        default_factory=lambda: ["G2D0", "G3D0", "G4D0", "G4D2", "G4D3"],
        description="Partitions visited by the sweep command",
    )

    model_config = SettingsConfigDict(env_prefix="GANXFER_", extra="forbid")

    @field_validator("channels", mode="before")
    @classmethod
    def parse_channels(cls, v: Any) -> Any:
        """Parse comma-separated channel widths"""
        if isinstance(v, str):
            v = v.strip()
            if not v:
                return None
            return [int(part) for part in v.split(",") if part.strip()]
        return v

    @field_validator("sweep_pairs", mode="before")
    @classmethod
    def parse_sweep_pairs(cls, v: Any) -> Any:
        """Parse comma-separated GmDn labels"""
        if isinstance(v, str):
            return [part.strip().upper() for part in v.split(",") if part.strip()]
        return v

    @field_validator("head_type", "limit_n", "warmup_iters", "gamma_bank", mode="before")
    @classmethod
    def empty_as_unset(cls, v: Any) -> Any:
        if isinstance(v, str) and not v.strip():
            return None
        return v

    @model_validator(mode="after")
    def apply_derived_defaults(self) -> "RunConfig":
        explicit = set(self.model_fields_set)
        if self.regime == Regime.EXTREME:
            if "latent_dim" not in explicit:
                self.latent_dim = 4
            if "gp_mode" not in explicit:
                self.gp_mode = GPMode.REAL_AND_FAKE
            if "limit_n" not in explicit:
                self.limit_n = 25
            if "gm" not in explicit:
                self.gm = 4
            if "dn" not in explicit:
                # every discriminator group
                self.dn = self.resolution_steps() + 2
        if self.warmup_iters is None:
            self.warmup_iters = self.total_iters // 6
        if self.warmup_iters > self.total_iters:
            raise ValueError(
                f"warmup_iters ({self.warmup_iters}) exceeds total_iters ({self.total_iters})"
            )
        for label in self.sweep_pairs:
            parse_partition_label(label)
        return self

    # Derived architecture -------------------------------------------------

    @property
    def image_channels(self) -> int:
        return 1 if self.grayscale else 3

    @property
    def penalty_gamma(self) -> float:
        """Penalty weight matching the configured penalty mode"""
        if self.gp_mode == GPMode.REAL_AND_FAKE:
            return self.gp_gamma_extreme
        return self.r1_gamma

    def resolved_head(self) -> HeadType:
        """Head type, defaulting to the GP-style residual head for the GP modes"""
        if self.head_type is not None:
            return self.head_type
        if self.mode in (TrainMode.FINETUNE_ALL, TrainMode.GPHEAD):
            return HeadType.RESIDUAL
        return HeadType.STYLE

    def resolution_steps(self) -> int:
        """Number of 2x upsamplings from 4x4 to the output resolution"""
        steps = math.log2(self.resolution / 4) if self.resolution > 0 else -1
        if self.resolution < 16 or steps != int(steps):
            raise ConfigError(
                f"resolution must be a power of two >= 16, got {self.resolution}"
            )
        return int(steps)

    def generator_channels(self) -> List[int]:
        """
        Tail widths from the 4x4 group to the full-resolution group.

        Returns:
            List[int]: ``resolution_steps() + 1`` widths
        """
        steps = self.resolution_steps()
        if self.channels is not None:
            if len(self.channels) != steps + 1:
                raise ConfigError(
                    f"channels needs {steps + 1} widths for resolution {self.resolution}, "
                    f"got {len(self.channels)}"
                )
            if any(c < 1 for c in self.channels):
                raise ConfigError("channel widths must be positive")
            return list(self.channels)
        return [min(self.max_channels, self.base_channels * 2 ** i) for i in range(steps, -1, -1)]

    def discriminator_channels(self) -> List[int]:
        """Discriminator widths from full resolution down to 4x4"""
        return list(reversed(self.generator_channels()))

    def architecture_fields(self) -> Dict[str, Any]:
        """Fields that determine parameter names and shapes"""
        return {
            "resolution": self.resolution,
            "generator_channels": self.generator_channels(),
            "blocks_per_group": self.blocks_per_group,
            "latent_dim": self.latent_dim,
            "style_dim": self.style_dim,
            "mapping_depth": self.mapping_depth,
            "head": self.resolved_head().value,
            "image_channels": self.image_channels,
        }

    def architecture_hash(self) -> str:
        """Short digest of the architecture fields"""
        payload = json.dumps(self.architecture_fields(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    # Serialization ---------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def to_lines(self) -> List[str]:
        """
        Render the effective configuration as key=value lines.

        Unset optional fields are omitted so the loader restores them as None.
        """
        lines = []
        for key, value in self.model_dump(mode="json").items():
            if value is None:
                continue
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, list):
                text = ",".join(str(item) for item in value)
            else:
                text = str(value)
            lines.append(f"{key}={text}")
        return lines

    def write_resolved(self, path: Path) -> None:
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")


def parse_partition_label(label: str) -> tuple:
    """
    Parse a ``GmDn`` label such as ``G4D2`` into ``(m, n)``.

    Raises:
        ValueError: If the label is malformed
    """
    text = label.strip().upper()
    if not text.startswith("G") or "D" not in text:
        raise ValueError(f"malformed partition label: {label}")
    g_part, d_part = text[1:].split("D", 1)
    if not g_part.isdigit() or not d_part.isdigit():
        raise ValueError(f"malformed partition label: {label}")
    return int(g_part), int(d_part)


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Read a key=value configuration file.

    Raises:
        ConfigError: If the file is missing or names unknown keys
    """
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = dotenv_values(path)
    values: Dict[str, str] = {}
    for key, value in raw.items():
        name = key.strip().lower()
        if name not in RunConfig.model_fields:
            raise ConfigError(f"unknown config key '{key}' in {path}")
        if value is None:
            raise ConfigError(f"config key '{key}' in {path} has no value")
        values[name] = value
    return values


def load_run_config(path: Optional[Path] = None,
                    overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build the effective run configuration.

    Precedence: overrides > config file > GANXFER_* environment > defaults.

    Args:
        path: Optional key=value config file
        overrides: Values from command-line flags; None entries are ignored

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(Path(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
            for err in exc.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from exc


@lru_cache()
def get_settings() -> Settings:
    """Get cached process settings"""
    return Settings()
