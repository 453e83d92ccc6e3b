"""Contiguous row-major tensors and their bit-exact wire framing.

Tensors are immutable values: every operation returns a new tensor and all
process-boundary transfers copy bytes. The frame layout (all integers
little-endian) is:

    u32 total_payload_length, then the payload:
      u8  hook_id            (see HookId)
      u8  tensor_count
      u32 ctx_entry_count, then per entry: u32 key_len, key, u32 val_len, val
      per tensor: u8 dtype_code, u8 rank, rank x u64 dims, then data
        numeric dtypes -> raw row-major bytes
        string dtype   -> per element: u32 len, bytes

Response frames reuse the identical layout with the hook id echoing the
request.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LengthMismatch,
    RankError,
    TruncatedFrame,
    UnknownDtypeCode,
    UnknownHookId,
)

# Auxiliary string key/value configuration passed alongside tensors.
Ctx = dict[str, str]


class ElementType(enum.IntEnum):
    uint8 = 0
    int8 = 1
    int32 = 2
    int64 = 3
    float32 = 4
    float64 = 5
    string = 6

    @property
    def width(self) -> int | None:
        """Fixed byte width, or None for the variable-width string type."""
        return _WIDTHS[self]

    @property
    def numpy_dtype(self) -> np.dtype:
        if self is ElementType.string:
            raise TypeError("string tensors have no numpy dtype")
        return _NP_DTYPES[self]

    @classmethod
    def from_name(cls, name: str) -> "ElementType":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown element type {name!r}") from None


_WIDTHS = {
    ElementType.uint8: 1,
    ElementType.int8: 1,
    ElementType.int32: 4,
    ElementType.int64: 8,
    ElementType.float32: 4,
    ElementType.float64: 8,
    ElementType.string: None,
}

_NP_DTYPES = {
    ElementType.uint8: np.dtype("uint8"),
    ElementType.int8: np.dtype("int8"),
    ElementType.int32: np.dtype("<i4"),
    ElementType.int64: np.dtype("<i8"),
    ElementType.float32: np.dtype("<f4"),
    ElementType.float64: np.dtype("<f8"),
}

_NP_TO_ELEMENT = {
    np.dtype("uint8"): ElementType.uint8,
    np.dtype("int8"): ElementType.int8,
    np.dtype("int32"): ElementType.int32,
    np.dtype("int64"): ElementType.int64,
    np.dtype("float32"): ElementType.float32,
    np.dtype("float64"): ElementType.float64,
}


class HookId(enum.IntEnum):
    """The six processing hooks, in wire order."""

    before_preprocess = 0
    preprocess = 1
    after_preprocess = 2
    before_postprocess = 3
    postprocess = 4
    after_postprocess = 5


#: Hooks that carry tensor data; the other four are lifecycle-only.
DATA_HOOKS = frozenset({HookId.preprocess, HookId.postprocess})


@dataclass(frozen=True)
class Tensor:
    """dtype + shape + contiguous row-major payload.

    ``data`` is raw bytes for numeric dtypes and a tuple of per-element byte
    strings (flat row-major order) for the string dtype.
    """

    dtype: ElementType
    shape: tuple[int, ...]
    data: bytes | tuple[bytes, ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 0 for d in self.shape):
            raise ValueError(f"negative dimension in shape {self.shape}")
        count = element_count(self)
        if self.dtype is ElementType.string:
            if not isinstance(self.data, tuple):
                object.__setattr__(self, "data", tuple(self.data))
            if len(self.data) != count:
                raise ValueError(
                    f"string tensor has {len(self.data)} elements, shape wants {count}"
                )
            if not all(isinstance(e, bytes) for e in self.data):
                raise TypeError("string tensor elements must be bytes")
        else:
            if not isinstance(self.data, bytes):
                object.__setattr__(self, "data", bytes(self.data))
            want = count * self.dtype.width
            if len(self.data) != want:
                raise ValueError(
                    f"{self.dtype.name} tensor of shape {self.shape} needs "
                    f"{want} bytes, got {len(self.data)}"
                )

    @property
    def rank(self) -> int:
        return len(self.shape)

    @classmethod
    def from_numpy(cls, arr: np.ndarray) -> "Tensor":
        arr = np.ascontiguousarray(arr)
        dtype = _NP_TO_ELEMENT.get(arr.dtype)
        if dtype is None:
            raise TypeError(f"unsupported numpy dtype {arr.dtype}")
        return cls(dtype, arr.shape, arr.tobytes())

    def to_numpy(self) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype=self.dtype.numpy_dtype)
        return arr.reshape(self.shape)

    @classmethod
    def from_strings(cls, values: list[str], shape: tuple[int, ...] | None = None) -> "Tensor":
        data = tuple(v.encode("utf-8") for v in values)
        return cls(ElementType.string, shape if shape is not None else (len(values),), data)

    def strings(self) -> list[str]:
        if self.dtype is not ElementType.string:
            raise TypeError("not a string tensor")
        return [e.decode("utf-8") for e in self.data]

    @classmethod
    def scalar(cls, value, dtype: ElementType) -> "Tensor":
        return cls.from_numpy(np.asarray(value, dtype=dtype.numpy_dtype).reshape(()))


def element_count(t: Tensor) -> int:
    """Product of the shape entries; the empty (scalar) shape counts 1."""
    n = 1
    for d in t.shape:
        n *= d
    return n


_LAYOUT_PERMS = {
    ("NHWC", "NCHW"): (0, 3, 1, 2),
    ("NCHW", "NHWC"): (0, 2, 3, 1),
}


def layout_convert(t: Tensor, src: str, dst: str) -> Tensor:
    """Physically reorder a rank-4 tensor between NHWC and NCHW."""
    if src not in ("NHWC", "NCHW") or dst not in ("NHWC", "NCHW"):
        raise ValueError(f"unknown layout tag {src!r} or {dst!r}")
    if t.rank != 4:
        raise RankError(f"layout conversion needs rank 4, got rank {t.rank}")
    if src == dst:
        return Tensor(t.dtype, t.shape, t.data)
    perm = _LAYOUT_PERMS[(src, dst)]
    if t.dtype is ElementType.string:
        order = np.arange(element_count(t)).reshape(t.shape).transpose(perm)
        new_shape = order.shape
        data = tuple(t.data[i] for i in order.ravel())
        return Tensor(ElementType.string, new_shape, data)
    arr = t.to_numpy().transpose(perm)
    return Tensor.from_numpy(arr)


# --- frame codec --------------------------------------------------------------

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def encode_frame(tensors: list[Tensor], ctx: Ctx, hook: HookId) -> bytes:
    """Serialize a (tensors, ctx, hook) triple into one length-prefixed frame."""
    hook = HookId(hook)
    if len(tensors) > 0xFF:
        raise ValueError(f"at most 255 tensors per frame, got {len(tensors)}")
    parts = [_U8.pack(hook), _U8.pack(len(tensors)), _U32.pack(len(ctx))]
    for key, val in ctx.items():
        kb = key.encode("utf-8")
        vb = val.encode("utf-8")
        parts += [_U32.pack(len(kb)), kb, _U32.pack(len(vb)), vb]
    for t in tensors:
        parts += [_U8.pack(t.dtype), _U8.pack(t.rank)]
        parts += [_U64.pack(d) for d in t.shape]
        if t.dtype is ElementType.string:
            for elem in t.data:
                parts += [_U32.pack(len(elem)), elem]
        else:
            parts.append(t.data)
    payload = b"".join(parts)
    return _U32.pack(len(payload)) + payload


class _Cursor:
    """Sequential reader over a payload, failing loudly on under-runs."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFrame(
                f"frame payload ended at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return _U8.unpack(self.take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def decode_frame(data: bytes) -> tuple[list[Tensor], Ctx, HookId]:
    """Exact inverse of encode_frame."""
    if len(data) < 4:
        raise TruncatedFrame(f"frame header needs 4 bytes, got {len(data)}")
    declared = _U32.unpack(data[:4])[0]
    payload = data[4:]
    if len(payload) < declared:
        raise TruncatedFrame(
            f"frame declares {declared} payload bytes, only {len(payload)} present"
        )
    if len(payload) > declared:
        raise LengthMismatch(
            f"frame declares {declared} payload bytes but carries {len(payload)}"
        )
    cur = _Cursor(payload)
    hook_raw = cur.u8()
    try:
        hook = HookId(hook_raw)
    except ValueError:
        raise UnknownHookId(f"hook id {hook_raw} outside 0..5") from None
    tensor_count = cur.u8()
    ctx: Ctx = {}
    for _ in range(cur.u32()):
        key = cur.take(cur.u32()).decode("utf-8")
        val = cur.take(cur.u32()).decode("utf-8")
        ctx[key] = val
    tensors = []
    for _ in range(tensor_count):
        code = cur.u8()
        try:
            dtype = ElementType(code)
        except ValueError:
            raise UnknownDtypeCode(f"dtype code {code} outside 0..6") from None
        rank = cur.u8()
        shape = tuple(cur.u64() for _ in range(rank))
        count = 1
        for d in shape:
            count *= d
        if dtype is ElementType.string:
            elems = tuple(cur.take(cur.u32()) for _ in range(count))
            tensors.append(Tensor(dtype, shape, elems))
        else:
            tensors.append(Tensor(dtype, shape, cur.take(count * dtype.width)))
    if cur.pos != len(payload):
        raise LengthMismatch(
            f"frame has {len(payload) - cur.pos} undeclared trailing payload bytes"
        )
    return tensors, ctx, hook


def read_frame(stream) -> bytes | None:
    """Read one complete frame (header included) from a binary stream.

    Returns None on clean EOF at a frame boundary; raises TruncatedFrame on
    EOF inside a frame.
    """
    header = stream.read(4)
    if header == b"" or header is None:
        return None
    while len(header) < 4:
        more = stream.read(4 - len(header))
        if not more:
            raise TruncatedFrame("stream ended inside a frame header")
        header += more
    declared = _U32.unpack(header)[0]
    chunks = []
    remaining = declared
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncatedFrame(
                f"stream ended with {remaining} of {declared} payload bytes missing"
            )
        chunks.append(chunk)
        remaining -= len(chunk)
    return header + b"".join(chunks)
