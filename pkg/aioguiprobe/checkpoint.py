"""
Checkpoint container:

    magic "GPQN" | format_version u16 | flags u16 | model_version u64
    | n_sizes u32 | layer sizes u32... | meta_len u32 | meta (UTF-8 JSON)
    | float64 arrays (little endian): prediction, target[, adam m, adam v]
    | blake2b-64 digest of everything before it

All integers are little endian.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from aioguiprobe.encoder import EncoderConfig
from aioguiprobe.qnet import AdamState, MlpParams
from aioguiprobe.util import ChecksumError, ParseError, atomic_write


MAGIC = b"GPQN"
FORMAT_VERSION = 1
FLAG_ADAM = 1
DIGEST_SIZE = 8
HEADER = struct.Struct("<4sHHQI")


@dataclass
class Checkpoint:
    pred: MlpParams
    target: MlpParams
    encoder_cfg: EncoderConfig
    adam: Optional[AdamState] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def model_version(self) -> int:
        return int(self.meta.get("model_version", 0))


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


def _pack_params(params: MlpParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())


def _unpack_params(sizes: Sequence[int], data: memoryview, offset: int) -> tuple[MlpParams, int]:
    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_in * fan_out
        weight = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(fan_in, fan_out)
        weights.append(weight.astype(np.float64))
        offset += 8 * n
        biases.append(np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset).astype(np.float64))
        offset += 8 * fan_out
    return MlpParams(weights, biases), offset


def dumps_checkpoint(checkpoint: Checkpoint) -> bytes:
    sizes = checkpoint.pred.layer_sizes
    meta = dict(checkpoint.meta)
    meta["encoder"] = checkpoint.encoder_cfg.to_dict()
    flags = 0
    if checkpoint.adam is not None:
        flags |= FLAG_ADAM
        adam = checkpoint.adam
        meta["adam"] = {"step": adam.step, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")

    parts = [
        HEADER.pack(MAGIC, FORMAT_VERSION, flags, checkpoint.model_version, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
        struct.pack("<I", len(meta_bytes)),
        meta_bytes,
        _pack_params(checkpoint.pred),
        _pack_params(checkpoint.target),
    ]
    if checkpoint.adam is not None:
        parts += [_pack_params(checkpoint.adam.m), _pack_params(checkpoint.adam.v)]
    body = b"".join(parts)
    return body + _digest(body)


def loads_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < HEADER.size + DIGEST_SIZE:
        raise ChecksumError("Checkpoint truncated")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if _digest(body) != digest:
        raise ChecksumError("Checkpoint digest mismatch")

    view = memoryview(body)
    magic, version, flags, model_version, n_sizes = HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise ParseError(f"Not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ParseError(f"Unknown checkpoint format version {version}")
    offset = HEADER.size
    try:
        sizes = list(struct.unpack_from(f"<{n_sizes}I", view, offset))
        offset += 4 * n_sizes
        (meta_len,) = struct.unpack_from("<I", view, offset)
        offset += 4
        meta = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
        offset += meta_len
        pred, offset = _unpack_params(sizes, view, offset)
        target, offset = _unpack_params(sizes, view, offset)
        adam = None
        if flags & FLAG_ADAM:
            m, offset = _unpack_params(sizes, view, offset)
            v, offset = _unpack_params(sizes, view, offset)
            hyper = meta.pop("adam")
            adam = AdamState(
                m, v, step=hyper["step"], lr=hyper["lr"], beta1=hyper["beta1"], beta2=hyper["beta2"], eps=hyper["eps"]
            )
        encoder_cfg = EncoderConfig.from_dict(meta.pop("encoder"))
    except (struct.error, ValueError, KeyError) as e:
        raise ParseError(f"Malformed checkpoint: {e}")
    if offset != len(body):
        raise ParseError("Trailing bytes in checkpoint")
    meta["model_version"] = model_version
    return Checkpoint(pred, target, encoder_cfg, adam, meta)


def save_checkpoint(
    params_pred: MlpParams,
    params_target: MlpParams,
    adam_state: Optional[AdamState],
    encoder_cfg: EncoderConfig,
    meta: Dict[str, Any],
    path: Path | str,
) -> None:
    atomic_write(Path(path), dumps_checkpoint(Checkpoint(params_pred, params_target, encoder_cfg, adam_state, meta)))


def load_checkpoint(path: Path | str) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())
