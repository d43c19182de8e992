"""
GAN Filter Transfer - Data Models

This module defines the serializable records produced by the toolkit:
checkpoint manifests, transfer reports, per-iteration metrics, run summaries
and modulation statistics. Containers that hold numpy arrays live next to the
code that computes them as dataclasses.

Key Components:
- Checkpoint manifest and tensor directory entries
- Transfer report with per-tensor actions
- Training metric rows and run summaries
- Modulation quartile statistics and sweep results

Version: 1.0.0
License: MIT License
"""

from enum import Enum
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

METRIC_COLUMNS = ["iter", "d_loss", "g_loss", "r1", "pfid", "overfit_flag", "wall_ms"]


class TensorKind(str, Enum):
    """What a checkpoint tensor holds"""
    PARAMETER = "parameter"
    ADAM_M = "adam_m"
    ADAM_V = "adam_v"


class TensorEntry(BaseModel):
    """Directory entry locating one tensor in the checkpoint payload"""
    name: str = Field(..., description="Registry name, or opt/<net>/<param>/<m|v>")
    kind: TensorKind = Field(default=TensorKind.PARAMETER)
    shape: List[int] = Field(..., description="Tensor extents")
    offset: int = Field(..., ge=0, description="Byte offset into the payload")
    nbytes: int = Field(..., ge=0, description="Byte length in the payload")
    frozen: bool = Field(default=False, description="Frozen when the checkpoint was written")


class CheckpointManifest(BaseModel):
    """Self-describing header of a checkpoint file"""
    format_version: int = Field(default=1)
    architecture_hash: str = Field(..., description="Digest of the architecture fields")
    config: Dict[str, Any] = Field(..., description="Run configuration that produced the weights")
    iteration: int = Field(default=0, ge=0)
    payload_bytes: int = Field(..., ge=0)
    entries: List[TensorEntry] = Field(default_factory=list)
    optimizer_steps: Dict[str, int] = Field(
        default_factory=dict, description="Adam step count per <net>/<param>"
    )

    def parameter_names(self) -> List[str]:
        return [e.name for e in self.entries if e.kind == TensorKind.PARAMETER]


class TransferAction(str, Enum):
    """What transfer initialization did to a target parameter"""
    COPIED = "copied"
    REINITIALIZED = "reinitialized"
    SKIPPED = "skipped"


class TransferRecord(BaseModel):
    name: str
    action: TransferAction
    reason: str = ""


class TransferReport(BaseModel):
    """
    Outcome of initializing a target model from a source checkpoint.

    Attributes:
        mode: Training mode the target was built for
        partition: GmDn label of the frozen general part
        records: One record per target parameter, in registry order
    """
    mode: str
    partition: str
    records: List[TransferRecord] = Field(default_factory=list)

    def names(self, action: TransferAction) -> List[str]:
        return [r.name for r in self.records if r.action == action]

    @property
    def copied(self) -> List[str]:
        return self.names(TransferAction.COPIED)

    @property
    def reinitialized(self) -> List[str]:
        return self.names(TransferAction.REINITIALIZED)

    @property
    def skipped(self) -> List[str]:
        return self.names(TransferAction.SKIPPED)

    def to_text(self) -> str:
        lines = [
            f"mode: {self.mode}",
            f"partition: {self.partition}",
            f"copied: {len(self.copied)}",
            f"reinitialized: {len(self.reinitialized)}",
            f"skipped: {len(self.skipped)}",
            "",
        ]
        for record in self.records:
            suffix = f" ({record.reason})" if record.reason else ""
            lines.append(f"{record.action.value:<14} {record.name}{suffix}")
        return "\n".join(lines) + "\n"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [r.model_dump(mode="json") for r in self.records],
            columns=["name", "action", "reason"],
        )


class MetricRow(BaseModel):
    """One row of the training metrics CSV"""
    iter: int = Field(..., ge=0)
    d_loss: float
    g_loss: float
    r1: float
    pfid: Optional[float] = None
    overfit_flag: int = 0
    wall_ms: float = 0.0


class RunSummary(BaseModel):
    """End-of-run digest written to summary.json"""
    mode: str
    partition: str
    iterations_completed: int
    best_pfid: Optional[float] = None
    best_pfid_iter: Optional[int] = None
    final_pfid: Optional[float] = None
    overfit_flagged: bool = False
    first_overfit_iter: Optional[int] = None
    stopped_early: bool = False


class QuartileStats(BaseModel):
    """Five-number summary of one modulation parameter family in one group"""
    group: str
    param: str
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float


# adafm_stats.csv columns
REPORT_COLUMNS = ["group", "param", "min", "q1", "median", "q3", "max"]


class AdaFMReport(BaseModel):
    """Per-group distribution of the learned modulation parameters"""
    stats: List[QuartileStats] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [s.model_dump(exclude={"count"}) for s in self.stats],
            columns=REPORT_COLUMNS,
        )


class SweepResult(BaseModel):
    """Outcome of one partition visited by the sweep command"""
    partition: str
    gm: int
    dn: int
    best_pfid: Optional[float] = None
    final_pfid: Optional[float] = None
    iterations_completed: int = 0
