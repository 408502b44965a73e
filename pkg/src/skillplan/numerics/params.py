"""Named parameter storage, Adam, and the SKDF binary tensor format."""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .tensor import DTYPE, Tensor, TrainingError

MAGIC = b"SKDF"
VERSION = 1

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class ParamStore:
    """Trainable tensors keyed by dotted name, plus their Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in self.params.items()}

    def num_values(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.params.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"missing parameter {key!r}")
            value = arrays[key]
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {key!r}: file {value.shape}, model {p.data.shape}")
            p.data = np.array(value, dtype=DTYPE)

    def optimizer_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"{prefix}m.{k}"] = self.m[k]
            out[f"{prefix}v.{k}"] = self.v[k]
        out[f"{prefix}step"] = np.array([float(self.step)])
        return out

    def load_optimizer_arrays(self, arrays: Mapping[str, np.ndarray], prefix: str) -> None:
        for k in self.params:
            self.m[k] = np.array(arrays[f"{prefix}m.{k}"])
            self.v[k] = np.array(arrays[f"{prefix}v.{k}"])
        self.step = int(arrays[f"{prefix}step"][0])


def adam_step(store: ParamStore, learning_rate: float) -> ParamStore:
    """Bias-corrected Adam update over every parameter; clears gradients."""
    for name, p in store.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store.m[name] = BETA1 * store.m[name] + (1.0 - BETA1) * g
        v = store.v[name] = BETA2 * store.v[name] + (1.0 - BETA2) * g * g
        p.data = p.data - learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        p.grad = None
    return store


# -- SKDF ------------------------------------------------------------------------

def save_tensors(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write named float64 arrays: magic, u32 version, then one record per tensor."""
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", VERSION)
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an SKDF tensor file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported SKDF version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims)
            pos += 8 * count
            out[name] = arr.astype(DTYPE)
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated or corrupt SKDF file") from exc
    return out
