"""Named-tensor weight container with a little-endian binary file format.

File layout: magic "FGWC", version u32, tensor count u32, then per tensor a
u16 name length, UTF-8 name, dtype tag u8 (0 = float32), rank u8, dims as
u32 each, and the row-major float32 payload. Architecture hyperparameters
travel in a reserved "meta.arch" tensor so files are self-describing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import WeightFormatError

MAGIC = b"FGWC"
FORMAT_VERSION = 1
DTYPE_F32 = 0

ARCH_TENSOR = "meta.arch"
# Order of the header fields inside the meta.arch tensor.
ARCH_FIELDS = ("depth", "nsr_input_size", "lut_bins", "basis_count", "nsr_width")

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def tensor_seed(global_seed: int, name: str) -> int:
    return _mix64((global_seed & MASK64) ^ fnv1a64(name))


def uniform_stream(seed: int, n: int) -> np.ndarray:
    """n doubles in [0, 1) from a counter-based SplitMix64 stream.

    Counter form instead of sequential state keeps the stream vectorizable
    while producing the same values as the scalar recurrence.
    """
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + idx * np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def seeded_uniform(global_seed: int, name: str, shape, fan_in: int) -> np.ndarray:
    """Deterministic uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) tensor."""
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    u = uniform_stream(tensor_seed(global_seed, name), n)
    bound = float(np.sqrt(1.0 / fan_in))
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(shape)


def materialize_specs(specs, seed: int) -> dict:
    """Build tensors from (name, shape, init_kind, fan_in) rows.

    init_kind is one of "uniform" (seeded, bounded by 1/sqrt(fan_in)),
    "zeros", or "ones".
    """
    out = {}
    for name, shape, kind, fan_in in specs:
        if kind == "uniform":
            out[name] = seeded_uniform(seed, name, shape, fan_in)
        elif kind == "zeros":
            out[name] = np.zeros(shape, dtype=np.float32)
        elif kind == "ones":
            out[name] = np.ones(shape, dtype=np.float32)
        else:
            raise ValueError(f"unknown init kind '{kind}' for tensor '{name}'")
    return out


@dataclass(frozen=True)
class WeightContainer:
    """Immutable name -> float32 ndarray map plus an architecture header."""

    tensors: dict = field(default_factory=dict)
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        frozen = {}
        for name, arr in self.tensors.items():
            a = np.ascontiguousarray(arr, dtype=np.float32)
            a.setflags(write=False)
            frozen[name] = a
        object.__setattr__(self, "tensors", frozen)
        object.__setattr__(self, "header", dict(self.header))

    def tensor(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise WeightFormatError(f"missing tensor '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self):
        return sorted(self.tensors)


def _header_to_array(header: dict) -> np.ndarray:
    return np.array([float(header[k]) for k in ARCH_FIELDS], dtype=np.float32)


def _header_from_array(arr: np.ndarray) -> dict:
    if arr.size < len(ARCH_FIELDS):
        raise WeightFormatError(
            f"'{ARCH_TENSOR}' holds {arr.size} values, expected {len(ARCH_FIELDS)}"
        )
    return {k: int(v) for k, v in zip(ARCH_FIELDS, arr.reshape(-1))}


def save_weights(container: WeightContainer, path) -> None:
    entries = dict(container.tensors)
    if container.header:
        entries[ARCH_TENSOR] = _header_to_array(container.header)
    blob = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(entries))]
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype=np.float32)
        encoded = name.encode("utf-8")
        blob.append(struct.pack("<H", len(encoded)))
        blob.append(encoded)
        blob.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blob.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFormatError(
                f"truncated weight file: needed {n} bytes for {what} at offset "
                f"{self.pos}, file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_weights(path) -> WeightContainer:
    """Read an FGWC file; errors name the failing offset or tensor."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    if cur.take(4, "magic") != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight container")
    version, count = struct.unpack("<II", cur.take(8, "version/count"))
    if version != FORMAT_VERSION:
        raise WeightFormatError(
            f"{path}: unsupported container version {version}, expected {FORMAT_VERSION}"
        )
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", cur.take(2, "name length"))
        name = cur.take(name_len, "tensor name").decode("utf-8")
        dtype_tag, rank = struct.unpack("<BB", cur.take(2, f"dtype/rank of '{name}'"))
        if dtype_tag != DTYPE_F32:
            raise WeightFormatError(f"{path}: tensor '{name}' has unknown dtype tag {dtype_tag}")
        dims = struct.unpack(f"<{rank}I", cur.take(4 * rank, f"dims of '{name}'"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = cur.take(4 * n, f"payload of '{name}'")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if cur.pos != len(cur.data):
        raise WeightFormatError(
            f"{path}: {len(cur.data) - cur.pos} trailing bytes after last tensor"
        )
    header = {}
    if ARCH_TENSOR in tensors:
        header = _header_from_array(tensors.pop(ARCH_TENSOR))
    return WeightContainer(tensors, header)
