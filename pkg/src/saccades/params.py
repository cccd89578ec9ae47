"""Named trainable parameters, Adam updates and the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"SACKPT01"                 8-byte magic
    uint64 header_len
    header_len bytes of UTF-8 JSON:
        {"format_version": 1, "step": int,
         "params": [{"name": str, "shape": [int], "offset": int}, ...]}
    payload: concatenated little-endian float64 arrays, row-major

Offsets count bytes from the start of the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"SACKPT01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class AdamConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class ParamStore:
    params: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if k.startswith(prefix)}

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def merge(self, other: "ParamStore") -> None:
        for name, t in other.params.items():
            if name in self.params:
                raise KeyError(f"duplicate parameter {name!r}")
            self.params[name] = t
            self.m[name] = other.m[name]
            self.v[name] = other.v[name]

    def n_values(self) -> int:
        return int(np.sum([t.size for t in self.params.values()]))


def adam_step(store: ParamStore, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are left in place."""
    missing = [k for k, t in store.params.items() if t.grad is None]
    if missing:
        raise RuntimeError(f"no gradient for parameters: {', '.join(missing)}")
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for name, t in store.params.items():
        g = t.grad
        m = store.m[name]
        v = store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def save_checkpoint(store: ParamStore, path) -> None:
    entries = []
    offset = 0
    for name, t in store.params.items():
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += t.size * 8
    header = json.dumps({"format_version": FORMAT_VERSION, "step": store.step, "params": entries},
                        sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for t in store.params.values():
            fh.write(t.data.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> ParamStore:
    """Read a checkpoint; optimizer moments start at zero."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = memoryview(raw)[16 + hlen:]
    store = ParamStore(step=int(header["step"]))
    for e in header["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        if start + 8 * n > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {e['name']}")
        arr = np.frombuffer(payload[start:start + 8 * n], dtype="<f8").reshape(e["shape"])
        store.add(e["name"], arr.astype(np.float64))
    return store
