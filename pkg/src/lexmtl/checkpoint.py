"""Binary checkpoint files.

Layout (little endian)::

    b"MMLG"  u32 version
    u32 len + config text (UTF-8 JSON)
    32-byte vocabulary hash
    u32 count, then per parameter: u32 len + name, u32 ndim, u32 dims..., float32 data
    u64 optimizer step, u64 non-finite count,
    u32 count, then per entry: u32 len + name, first-moment table entry, second-moment entry
    u64 training step

The metric history lives next to the file as ``<path>.history.csv``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (CheckpointFormatError, CheckpointTruncatedError, CheckpointVersionError,
                     VocabHashMismatchError)

MAGIC = b"MMLG"
VERSION = 1


def ids_only_vocab_hash(reserved_size: int = 64) -> bytes:
    """Hash used when a run has no subword vocabulary (synthetic id-level tasks)."""
    return hashlib.sha256(f"lexmtl:ids-only:{reserved_size}".encode()).digest()


@dataclass
class Checkpoint:
    config: dict
    vocab_hash: bytes
    params: dict
    optimizer: dict = field(default_factory=dict)   # name -> (m, v)
    opt_step: int = 0
    nonfinite: int = 0
    step: int = 0
    history: list = field(default_factory=list)
    version: int = VERSION


def _put_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _put_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def to_bytes(ckpt: Checkpoint) -> bytes:
    if len(ckpt.vocab_hash) != 32:
        raise CheckpointFormatError(f"vocabulary hash must be 32 bytes, got {len(ckpt.vocab_hash)}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    _put_str(buf, json.dumps(ckpt.config, sort_keys=True))
    buf.write(ckpt.vocab_hash)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        _put_str(buf, name)
        _put_array(buf, arr)
    buf.write(struct.pack("<QQ", ckpt.opt_step, ckpt.nonfinite))
    buf.write(struct.pack("<I", len(ckpt.optimizer)))
    for name, (m, v) in ckpt.optimizer.items():
        _put_str(buf, name)
        _put_array(buf, m)
        _put_array(buf, v)
    buf.write(struct.pack("<Q", ckpt.step))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<I")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def from_bytes(data: bytes, expected_vocab_hash: Optional[bytes] = None) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    config = json.loads(r.string())
    vocab_hash = r.take(32)
    if expected_vocab_hash is not None and vocab_hash != expected_vocab_hash:
        raise VocabHashMismatchError(
            f"checkpoint vocabulary {vocab_hash.hex()[:16]}... does not match "
            f"{expected_vocab_hash.hex()[:16]}...")
    (n,) = r.unpack("<I")
    params = {}
    for _ in range(n):
        name = r.string()
        params[name] = r.array()
    opt_step, nonfinite = r.unpack("<QQ")
    (n,) = r.unpack("<I")
    optimizer = {}
    for _ in range(n):
        name = r.string()
        optimizer[name] = (r.array(), r.array())
    (step,) = r.unpack("<Q")
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} unexpected trailing bytes")
    return Checkpoint(config, vocab_hash, params, optimizer, opt_step, nonfinite, step,
                      version=version)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def history_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".history.csv")


def _history_csv(history: list) -> str:
    keys = sorted({k for row in history for k in row})
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow(row)
    return buf.getvalue()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, to_bytes(ckpt))
    if ckpt.history:
        atomic_write(history_path(path), _history_csv(ckpt.history).encode("utf-8"))


def load_checkpoint(path, expected_vocab_hash: Optional[bytes] = None) -> Checkpoint:
    ckpt = from_bytes(Path(path).read_bytes(), expected_vocab_hash)
    hist = history_path(path)
    if hist.exists():
        with hist.open(newline="", encoding="utf-8") as fh:
            ckpt.history = [{k: _number(v) for k, v in row.items()} for row in csv.DictReader(fh)]
    return ckpt


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


# -- trainer glue -------------------------------------------------------------------

def capture(trainer, vocab_hash: bytes, extra_config: Optional[dict] = None) -> Checkpoint:
    """Snapshot a :class:`~lexmtl.trainer.Trainer` into a checkpoint record."""
    model, opt = trainer.model, trainer.opt
    config = {"model": json.loads(model.cfg.to_json()), "tasks": model.registry.to_dict(),
              "seed": trainer.seed, "lr": opt.lr, "warmup": opt.warmup,
              "clip_norm": opt.clip_norm, "betas": [opt.beta1, opt.beta2], "eps": opt.eps}
    config.update(extra_config or {})
    optimizer = {name: (opt.m[name], opt.v[name]) for name in model.params if name in opt.m}
    return Checkpoint(config, vocab_hash, dict(model.state_dict()), optimizer, opt.t,
                      opt.nonfinite, trainer.state.step, list(trainer.state.metric_history))


def restore(trainer, ckpt: Checkpoint) -> None:
    """Load parameters, optimiser moments and the step counter into ``trainer``."""
    trainer.model.load_state_dict(ckpt.params)
    opt = trainer.opt
    opt.m = {k: m.astype(trainer.model.dtype).copy() for k, (m, _) in ckpt.optimizer.items()}
    opt.v = {k: v.astype(trainer.model.dtype).copy() for k, (_, v) in ckpt.optimizer.items()}
    opt.t = ckpt.opt_step
    opt.nonfinite = ckpt.nonfinite
    trainer.state.step = ckpt.step
    trainer.state.metric_history = list(ckpt.history)
    for name in trainer.state.updates.keys() | {t.name for t in trainer.joint.tasks}:
        trainer.state.updates[name] = ckpt.step
