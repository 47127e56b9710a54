"""Named parameter store and the binary checkpoint format.

Checkpoint layout (all integers little-endian uint32)::

    b"JSLUCKPT" version
    meta_len  meta (UTF-8 JSON: config, config hash, ...)
    count
    per parameter: name_len name rank extent*rank float64*prod(extents)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .autodiff import Tensor

MAGIC = b"JSLUCKPT"
VERSION = 1


class ParamStore:
    """Ordered mapping from parameter name to a leaf :class:`Tensor`."""

    def __init__(self, seed: int = 0) -> None:
        self._params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(seed)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def get_or_create(self, name: str, shape: tuple[int, ...], init: str = "xavier") -> Tensor:
        if name in self._params:
            t = self._params[name]
            if t.shape != tuple(shape):
                raise ValueError(f"{name}: stored shape {t.shape} != requested {tuple(shape)}")
            return t
        return self.add(name, self._init(shape, init))

    def _init(self, shape: tuple[int, ...], init: str) -> np.ndarray:
        if init == "zeros":
            return np.zeros(shape)
        if init == "ones":
            return np.ones(shape)
        if init == "normal":
            return self.rng.normal(0.0, 0.1, size=shape)
        if init == "xavier":
            fan_out, fan_in = shape[0], shape[-1] if len(shape) > 1 else shape[0]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return self.rng.uniform(-bound, bound, size=shape)
        raise ValueError(f"unknown init {init!r}")

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, value in arrays.items():
            if name in self._params:
                if self._params[name].shape != value.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {self._params[name].shape}")
                self._params[name].data = np.array(value, dtype=np.float64)
            elif strict:
                raise KeyError(f"unexpected parameter {name!r} in checkpoint")
            else:
                self.add(name, value)

    def zero_(self, prefix: str = "") -> None:
        for name, t in self._params.items():
            if name.startswith(prefix):
                t.data = np.zeros_like(t.data)


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        value = np.asarray(value, dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)) + nb)
        chunks.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        chunks.append(value.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)

    def u32():
        nonlocal pos
        (v,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    n = u32()
    meta = json.loads(buf[pos: pos + n].decode("utf-8"))
    pos += n
    arrays: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        n = u32()
        name = buf[pos: pos + n].decode("utf-8")
        pos += n
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    return arrays, meta
