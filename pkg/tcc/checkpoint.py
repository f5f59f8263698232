# tcc/checkpoint.py
"""
Checkpoints passed between the training phases.

Binary layout (little-endian):
    b"TSCK" | u32 version | u32 len + UTF-8 JSON snapshot
    | u32 count | count x (u32 len + UTF-8 name | u32 rank | rank x u32 dims | float32 payload)

The JSON snapshot holds the run config, the phase name, the loss history and
free-form metadata (data dims, provenance). Tensors are named
``model.<param>``, ``optim.<param>.<slot>`` and ``norm.min`` / ``norm.max``.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from tcc.errors import DataFormatError
from tcc.utils import file_fingerprint

MAGIC = b"TSCK"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    phase: str
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    history: List[Dict[str, Any]] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        head = prefix + "."
        return {k[len(head):]: v for k, v in self.tensors.items() if k.startswith(head)}

    @property
    def has_classifier(self) -> bool:
        return bool(self.meta.get("classifier_trained"))


def capture(
        model: torch.nn.Module,
        optimizer: Optional[torch.optim.Optimizer],
        config: Dict[str, Any],
        phase: str,
        history: List[Dict[str, Any]],
        meta: Dict[str, Any],
        norm_min: Optional[np.ndarray] = None,
        norm_max: Optional[np.ndarray] = None,
) -> Checkpoint:
    """Snapshot model parameters/buffers and optimizer moments into a Checkpoint."""
    tensors: Dict[str, np.ndarray] = {}
    for name, value in model.state_dict().items():
        tensors[f"model.{name}"] = value.detach().cpu().numpy().astype(np.float32)

    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                state = optimizer.state.get(p)
                if not state:
                    continue
                name = names[id(p)]
                for slot, value in state.items():
                    array = torch.as_tensor(value).detach().cpu().numpy().astype(np.float32)
                    tensors[f"optim.{name}.{slot}"] = array

    if norm_min is not None and norm_max is not None:
        tensors["norm.min"] = np.asarray(norm_min, dtype=np.float32)
        tensors["norm.max"] = np.asarray(norm_max, dtype=np.float32)

    return Checkpoint(config=config, phase=phase, tensors=tensors, history=list(history), meta=dict(meta))


def restore(model: torch.nn.Module, ckpt: Checkpoint, prefixes: Optional[List[str]] = None) -> None:
    """Load ``model.*`` tensors into ``model``; ``prefixes`` limits it to submodules (e.g. ["encoder."])."""
    state = {name: torch.from_numpy(array.copy()) for name, array in ckpt.group("model").items()}
    if prefixes is not None:
        state = {n: v for n, v in state.items() if any(n.startswith(p) for p in prefixes)}
        model.load_state_dict(state, strict=False)
        return
    model.load_state_dict(state)


# --------------------------------------------------------------------
# File format
# --------------------------------------------------------------------
def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshot = json.dumps(
        {"config": ckpt.config, "phase": ckpt.phase, "history": ckpt.history, "meta": ckpt.meta},
        sort_keys=True,
        ensure_ascii=False,
        default=str,
    ).encode("utf-8")

    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(snapshot)), snapshot, _U32.pack(len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        array = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(dim) for dim in array.shape)
        chunks.append(array.tobytes(order="C"))

    with open(path, "wb") as f:
        f.write(b"".join(chunks))
    return path


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise DataFormatError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic = reader.take(4)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: magic mismatch, expected {MAGIC!r}, got {magic!r}")
    version = reader.u32()
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        snapshot = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: unreadable config snapshot: {e}") from e

    tensors = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = tuple(reader.u32() for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        payload = reader.take(4 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if reader.pos != len(reader.raw):
        raise DataFormatError(f"{path}: trailing bytes after tensor list")

    return Checkpoint(
        config=snapshot.get("config", {}),
        phase=snapshot.get("phase", ""),
        tensors=tensors,
        history=snapshot.get("history", []),
        meta=snapshot.get("meta", {}),
    )


def checkpoint_checksum(path) -> str:
    return file_fingerprint(Path(path))


def checkpoint_fingerprint(ckpt: Checkpoint) -> str:
    """sha256 over tensor names and float32 payloads, independent of the file."""
    digest = hashlib.sha256()
    for name in sorted(ckpt.tensors):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(ckpt.tensors[name], dtype="<f4").tobytes())
    return digest.hexdigest()
