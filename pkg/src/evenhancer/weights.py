"""Named-tensor container and its ``WTS1`` binary file format.

Layout (little-endian)::

    b"WTS1" | u32 count | count x entry
    entry := u32 name_len | name (utf-8) | u32 rank | rank x u32 extent | float32 payload

Names use a dotted scheme: ``easm.<block>...`` for the shared feature
extractor and ``livt.<n>.<block>...`` for upsampling pathway ``n``.
"""
from __future__ import annotations

import struct
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor_core import DTYPE, ContractError

MAGIC = b"WTS1"


class WeightStore(OrderedDict):
    """Ordered mapping of tensor name to float32 array."""

    def __setitem__(self, name, value):
        super().__setitem__(str(name), np.ascontiguousarray(value, dtype=DTYPE))

    def __getitem__(self, name):
        try:
            return super().__getitem__(name)
        except KeyError:
            raise KeyError(f"missing weight tensor {name!r}") from None

    def with_prefix(self, prefix: str) -> list[str]:
        return [k for k in self if k.startswith(prefix)]

    def zero(self, prefix: str = "") -> "WeightStore":
        """Copy with every tensor under ``prefix`` zeroed."""
        out = WeightStore(self)
        for k in out.with_prefix(prefix):
            out[k] = np.zeros_like(out[k])
        return out

    def num_params(self, prefix: str = "") -> int:
        return sum(self[k].size for k in self.with_prefix(prefix))

    def save(self, path) -> None:
        chunks = [MAGIC, struct.pack("<I", len(self))]
        for name, arr in self.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)) + raw)
            chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            chunks.append(arr.astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "WeightStore":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ContractError(f"{path}: not a WTS1 weight file")
        (count,) = struct.unpack_from("<I", raw, 4)
        pos = 8
        store = cls()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{rank}I", raw, pos + 4)
            pos += 4 + 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            store[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
        if pos != len(raw):
            raise ContractError(f"{path}: {len(raw) - pos} trailing bytes")
        return store


def fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith(".bias"):
        return 0
    return int(np.prod(shape[1:], dtype=np.int64)) if len(shape) > 1 else int(shape[0])


def init_weights(shapes: Mapping[str, tuple[int, ...]], seed: int = 42) -> WeightStore:
    """Uniform(-a, a) init with a = 1/sqrt(fan_in).

    Each tensor draws from its own generator keyed by (seed, crc32(name)), so a
    tensor's values do not depend on which other tensors are present. Biases
    use the fan-in of their sibling weight.
    """
    store = WeightStore()
    for name, shape in shapes.items():
        ref = name[: -len(".bias")] + ".weight" if name.endswith(".bias") else name
        fi = fan_in(ref, tuple(shapes.get(ref, shape)))
        bound = 1.0 / np.sqrt(fi) if fi > 0 else 1.0
        rng = np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
        store[name] = rng.uniform(-bound, bound, size=shape)
    return store
