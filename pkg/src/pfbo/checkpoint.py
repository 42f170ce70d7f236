"""Binary checkpoint format for trained surrogates.

Layout (all integers little-endian)::

    b"PFBO"  u32 version
    u32 config length, config bytes (UTF-8 "key=value" lines, sorted)
    u32 tensor count
    per tensor: u32 name length, name, u8 dtype tag, u32 rank,
                rank x u64 extents, little-endian payload

Tensors are written in sorted name order, so saving a loaded checkpoint
reproduces the original bytes.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np
import torch

from pfbo.priors import HyperPrior
from pfbo.pt import PTConfig, PTSurrogate, init_model
from pfbo.riemann import RiemannSpec

MAGIC = b"PFBO"
VERSION = 1

_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_OF = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(ValueError):
    pass


def _tensors(sur: PTSurrogate) -> dict[str, np.ndarray]:
    out = {f"model.{k}": v.detach().cpu().numpy() for k, v in sur.model.state_dict().items()}
    out["riemann.borders"] = sur.spec.borders
    out["telemetry.history"] = np.asarray(sur.history, dtype=np.float64)
    return out


def to_bytes(sur: PTSurrogate) -> bytes:
    meta = sur.cfg.to_text()
    meta["format_version"] = str(VERSION)
    meta["hyperprior"] = sur.hyperprior.describe()
    meta["seed"] = str(sur.seed)
    text = "".join(f"{k}={meta[k]}\n" for k in sorted(meta)).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(text)) + text)
    tensors = _tensors(sur)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        tag = _TAG_OF.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<BI", tag, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.astype(_TAGS[tag], copy=False).tobytes())
    return buf.getvalue()


def save(path, sur: PTSurrogate) -> None:
    Path(path).write_bytes(to_bytes(sur))


def from_bytes(data: bytes) -> PTSurrogate:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint")
    pos = 4
    (version,) = struct.unpack_from("<I", view, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", view, pos)
    pos += 4
    text = bytes(view[pos : pos + n]).decode("utf-8")
    pos += n
    meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    (count,) = struct.unpack_from("<I", view, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<I", view, pos)
        pos += 4
        name = bytes(view[pos : pos + ln]).decode("utf-8")
        pos += ln
        tag, rank = struct.unpack_from("<BI", view, pos)
        pos += 5
        shape = struct.unpack_from(f"<{rank}Q", view, pos)
        pos += 8 * rank
        dt = _TAGS[tag]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(view[pos : pos + size], dtype=dt).reshape(shape).copy()
        pos += size
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")

    cfg = PTConfig.from_text(meta)
    spec = RiemannSpec(tensors.pop("riemann.borders"))
    if spec.n_buckets != cfg.n_buckets:
        raise CheckpointError("bucket border count does not match config")
    history = tensors.pop("telemetry.history", None)
    seed = int(meta.get("seed", 0))
    model = init_model(cfg, seed)
    state = {k[len("model."):]: torch.from_numpy(v) for k, v in tensors.items()}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"tensor shapes inconsistent with config: {exc}") from exc
    return PTSurrogate(cfg, spec, model, HyperPrior.parse(meta["hyperprior"]), seed, history)


def load(path) -> PTSurrogate:
    return from_bytes(Path(path).read_bytes())
