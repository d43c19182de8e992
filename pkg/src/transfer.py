"""
Checkpoints and Transfer Initialization

A checkpoint is one self-describing file:

    magic (8 bytes) | manifest length (uint64, little-endian) | manifest JSON | payload

The manifest lists every tensor's name, shape and byte range; the payload
holds the tensors as little-endian float32. Adam moments are stored as
ordinary tensors named ``opt/<net>/<param>/m`` and ``.../v``.

Transfer initialization copies the pretrained general part of a source
checkpoint into a freshly built target model and reports what it did with
every target parameter.

Version: 1.0.0
License: MIT License
"""

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import ValidationError

from .architecture import (
    Discriminator,
    Generator,
    ModelPartition,
    ParameterRegistry,
    configure_models,
    list_parameters,
)
from .config import RunConfig, TrainMode
from .errors import CheckpointError, ConfigError, TransferMismatchError
from .models import (
    CheckpointManifest,
    TensorEntry,
    TensorKind,
    TransferAction,
    TransferRecord,
    TransferReport,
)
from .train import AdamState

logger = structlog.get_logger(__name__)

MAGIC = b"GXFRCKP1"
HEADER = struct.Struct("<Q")
PAYLOAD_DTYPE = np.dtype("<f4")

# Parameter roles that are always freshly initialized on transfer.
REINIT_ROLES = frozenset({"fc"})


@dataclass
class Checkpoint:
    manifest: CheckpointManifest
    tensors: Dict[str, np.ndarray]

    @property
    def config(self) -> RunConfig:
        try:
            return RunConfig(**self.manifest.config)
        except ValidationError as exc:
            raise CheckpointError(f"checkpoint carries an invalid configuration: {exc}") from exc

    def parameters(self) -> Dict[str, np.ndarray]:
        names = set(self.manifest.parameter_names())
        return {k: v for k, v in self.tensors.items() if k in names}

    def optimizer_states(self) -> Dict[str, AdamState]:
        states: Dict[str, AdamState] = {}
        for entry in self.manifest.entries:
            if entry.kind == TensorKind.PARAMETER:
                continue
            _, net, rest = entry.name.split("/", 2)
            param = rest.rsplit("/", 1)[0]
            state = states.setdefault(net, AdamState())
            target = state.m if entry.kind == TensorKind.ADAM_M else state.v
            target[param] = self.tensors[entry.name].copy()
        for key, steps in self.manifest.optimizer_steps.items():
            net, param = key.split("/", 1)
            states.setdefault(net, AdamState()).steps[param] = steps
        return states


def save_checkpoint(models: Sequence, optimizer_state: Optional[Mapping[str, AdamState]],
                    path: Path, cfg: RunConfig, iteration: int = 0) -> Path:
    """
    Write parameters (and optional Adam state) to ``path`` atomically.

    Args:
        models: Generator and discriminator
        optimizer_state: AdamState per network prefix ("gen", "disc")

    Raises:
        CheckpointError: If the file cannot be written
    """
    registry = list_parameters(models)
    entries = []
    chunks = []
    offset = 0

    def add(name: str, kind: TensorKind, array: np.ndarray, frozen: bool = False):
        nonlocal offset
        data = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
        entries.append(TensorEntry(name=name, kind=kind, shape=list(array.shape),
                                   offset=offset, nbytes=len(data), frozen=frozen))
        chunks.append(data)
        offset += len(data)

    for info in registry:
        add(info.name, TensorKind.PARAMETER, info.tensor.data, info.frozen)

    steps: Dict[str, int] = {}
    for net, state in (optimizer_state or {}).items():
        for param in sorted(state.m):
            add(f"opt/{net}/{param}/m", TensorKind.ADAM_M, state.m[param])
            add(f"opt/{net}/{param}/v", TensorKind.ADAM_V, state.v[param])
        for param, count in sorted(state.steps.items()):
            steps[f"{net}/{param}"] = count

    manifest = CheckpointManifest(
        architecture_hash=cfg.architecture_hash(),
        config=cfg.to_dict(),
        iteration=iteration,
        payload_bytes=offset,
        entries=entries,
        optimizer_steps=steps,
    )
    header = manifest.model_dump_json().encode("utf-8")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(HEADER.pack(len(header)))
            fh.write(header)
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.debug("checkpoint saved", path=str(path), tensors=len(entries), iteration=iteration)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """
    Read and verify a checkpoint.

    Raises:
        CheckpointError: If the file is missing, not a checkpoint, or truncated
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    prefix = len(MAGIC) + HEADER.size
    if len(blob) < prefix or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (header_len,) = HEADER.unpack_from(blob, len(MAGIC))
    if prefix + header_len > len(blob):
        raise CheckpointError(f"integrity error: manifest of {path} is truncated")
    try:
        manifest = CheckpointManifest.model_validate_json(blob[prefix:prefix + header_len])
    except ValidationError as e:
        raise CheckpointError(f"integrity error: unreadable manifest in {path}: {e}") from e

    payload = memoryview(blob)[prefix + header_len:]
    if len(payload) != manifest.payload_bytes:
        raise CheckpointError(
            f"integrity error: {path} payload has {len(payload)} bytes, "
            f"manifest declares {manifest.payload_bytes}"
        )
    tensors: Dict[str, np.ndarray] = {}
    for entry in manifest.entries:
        expected = int(np.prod(entry.shape, dtype=np.int64)) * PAYLOAD_DTYPE.itemsize
        if entry.nbytes != expected or entry.offset + entry.nbytes > len(payload):
            raise CheckpointError(f"integrity error: tensor {entry.name} in {path} is inconsistent")
        if entry.name in tensors:
            raise CheckpointError(f"integrity error: duplicate tensor {entry.name} in {path}")
        raw = np.frombuffer(payload[entry.offset:entry.offset + entry.nbytes], dtype=PAYLOAD_DTYPE)
        tensors[entry.name] = raw.astype(np.float32).reshape(entry.shape)
    return Checkpoint(manifest=manifest, tensors=tensors)


def load_parameters(registry: ParameterRegistry, checkpoint: Checkpoint) -> None:
    """
    Overwrite every registry parameter with the checkpoint's values.

    Raises:
        CheckpointError: If names or shapes differ
    """
    stored = checkpoint.parameters()
    missing = [n for n in registry.names() if n not in stored]
    extra = [n for n in stored if n not in registry]
    if missing or extra:
        raise CheckpointError(
            f"checkpoint tensors do not match the model: missing {missing[:5]}, unexpected {extra[:5]}"
        )
    for info in registry:
        array = stored[info.name]
        if array.shape != info.tensor.shape:
            raise CheckpointError(
                f"shape mismatch for {info.name}: checkpoint {array.shape}, model {info.tensor.shape}"
            )
    for info in registry:
        info.tensor.data[...] = stored[info.name]


def restore_models(checkpoint: Checkpoint) -> Tuple[RunConfig, Generator, Discriminator]:
    """Rebuild the models a checkpoint was written from and load its weights"""
    cfg = checkpoint.config
    if cfg.architecture_hash() != checkpoint.manifest.architecture_hash:
        raise CheckpointError("checkpoint architecture hash does not match its configuration")
    generator, discriminator, _ = configure_models(cfg)
    load_parameters(list_parameters((generator, discriminator)), checkpoint)
    return cfg, generator, discriminator


def transfer_init(source: Optional[Checkpoint], generator: Generator, discriminator: Discriminator,
                  partition: ModelPartition, mode: TrainMode) -> TransferReport:
    """
    Initialize a partitioned target model from a source checkpoint.

    scratch copies nothing; finetune_all copies every non-FC tensor the
    source has; the other modes copy exactly the frozen general part.
    FC layers and modulation parameters are never copied. All copies are
    validated before any target tensor is written.

    Raises:
        ConfigError: If a copying mode gets no source checkpoint
        TransferMismatchError: If a tensor to be copied is absent or has another shape
    """
    if source is None and mode != TrainMode.SCRATCH:
        raise ConfigError(f"mode {mode.value} needs a source checkpoint")
    registry = list_parameters((generator, discriminator))
    stored = source.parameters() if source is not None else {}
    records = []
    plan: Dict[str, np.ndarray] = {}

    for info in registry:
        if mode == TrainMode.SCRATCH:
            records.append(TransferRecord(name=info.name, action=TransferAction.REINITIALIZED,
                                          reason="scratch"))
            continue
        if info.role == "modulation":
            records.append(TransferRecord(name=info.name, action=TransferAction.REINITIALIZED,
                                          reason="identity modulation"))
            continue
        if info.role in REINIT_ROLES:
            records.append(TransferRecord(name=info.name, action=TransferAction.REINITIALIZED,
                                          reason="fully connected"))
            continue
        if mode == TrainMode.FINETUNE_ALL:
            wanted = True
        else:
            wanted = info.frozen
        if not wanted:
            records.append(TransferRecord(name=info.name, action=TransferAction.REINITIALIZED,
                                          reason="specific part"))
            continue
        array = stored.get(info.name)
        if array is None:
            if mode == TrainMode.FINETUNE_ALL:
                records.append(TransferRecord(name=info.name, action=TransferAction.SKIPPED,
                                              reason="absent from source"))
                continue
            raise TransferMismatchError(f"source checkpoint has no tensor {info.name}")
        if array.shape != info.tensor.shape:
            raise TransferMismatchError(
                f"shape mismatch for {info.name}: source {array.shape}, target {info.tensor.shape}"
            )
        plan[info.name] = array
        records.append(TransferRecord(name=info.name, action=TransferAction.COPIED))

    for name, array in plan.items():
        registry[name].data[...] = array

    report = TransferReport(mode=mode.value, partition=partition.label, records=records)
    logger.info("transfer applied", mode=mode.value, partition=partition.label,
                copied=len(report.copied), reinitialized=len(report.reinitialized),
                skipped=len(report.skipped))
    return report


def write_transfer_report(report: TransferReport, out_dir: Path) -> None:
    (out_dir / "transfer_report.txt").write_text(report.to_text(), encoding="utf-8")
    report.to_frame().to_csv(out_dir / "transfer_report.csv", index=False)
