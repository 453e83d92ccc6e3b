"""Dataset storage, binary file format, and synthetic dataset generation.

Dataset file layout: u32 sample_count (little-endian), then each sample as
one tensor in the wire tensor encoding (dtype, rank, dims, data). Labels live
in a separate file of sample_count little-endian int64 values.

The synthetic generators keep runs verifiable at desk scale: the
classification generator emits logit vectors whose argmax IS the label, so an
identity backend scores perfect top-1 accuracy, and the image generator emits
random HWC byte images for exercising the built-in processing steps.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IndexOutOfRange, TruncatedFrame
from .tensor import ElementType, Tensor

_U32 = struct.Struct("<I")
_U8 = struct.Struct("<B")
_U64 = struct.Struct("<Q")


@dataclass
class DatasetStore:
    """Indexed raw samples plus optional labels and the preprocessed cache."""

    samples: list[Tensor]
    labels: list[int] | None = None
    preprocessed: dict[int, list[Tensor]] = field(default_factory=dict)

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.samples):
            raise ValueError(
                f"{len(self.labels)} labels for {len(self.samples)} samples"
            )

    def __len__(self) -> int:
        return len(self.samples)

    def check_index(self, index: int) -> None:
        if not (0 <= index < len(self.samples)):
            raise IndexOutOfRange(f"sample index {index} outside 0..{len(self.samples) - 1}")


def _encode_tensor(t: Tensor) -> bytes:
    parts = [_U8.pack(t.dtype), _U8.pack(t.rank)]
    parts += [_U64.pack(d) for d in t.shape]
    if t.dtype is ElementType.string:
        for elem in t.data:
            parts += [_U32.pack(len(elem)), elem]
    else:
        parts.append(t.data)
    return b"".join(parts)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFrame(f"dataset file ended early (wanted {n} bytes, got {len(buf)})")
    return buf


def _decode_tensor(fh) -> Tensor:
    dtype = ElementType(_U8.unpack(_read_exact(fh, 1))[0])
    rank = _U8.unpack(_read_exact(fh, 1))[0]
    shape = tuple(_U64.unpack(_read_exact(fh, 8))[0] for _ in range(rank))
    count = 1
    for d in shape:
        count *= d
    if dtype is ElementType.string:
        elems = tuple(
            _read_exact(fh, _U32.unpack(_read_exact(fh, 4))[0]) for _ in range(count)
        )
        return Tensor(dtype, shape, elems)
    return Tensor(dtype, shape, _read_exact(fh, count * dtype.width))


def save_dataset(path: str | Path, samples: list[Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(_U32.pack(len(samples)))
        for t in samples:
            fh.write(_encode_tensor(t))


def load_dataset(path: str | Path) -> list[Tensor]:
    with open(path, "rb") as fh:
        count = _U32.unpack(_read_exact(fh, 4))[0]
        return [_decode_tensor(fh) for _ in range(count)]


def save_labels(path: str | Path, labels: list[int]) -> None:
    with open(path, "wb") as fh:
        for lab in labels:
            fh.write(struct.pack("<q", lab))


def load_labels(path: str | Path) -> list[int]:
    data = Path(path).read_bytes()
    if len(data) % 8:
        raise TruncatedFrame(f"labels file length {len(data)} is not a multiple of 8")
    return [v[0] for v in struct.iter_unpack("<q", data)]


def load_store(
    dataset_path: str | Path, labels_path: str | Path | None = None
) -> DatasetStore:
    labels = load_labels(labels_path) if labels_path else None
    return DatasetStore(load_dataset(dataset_path), labels)


# --- synthetic generators -------------------------------------------------------

def generate_classification_dataset(
    count: int, num_classes: int, seed: int
) -> tuple[list[Tensor], list[int]]:
    """Logit-vector samples whose argmax equals the label."""
    rng = random.Random(seed)
    samples, labels = [], []
    for _ in range(count):
        label = rng.randrange(num_classes)
        logits = np.array(
            [rng.uniform(0.0, 0.5) for _ in range(num_classes)], dtype=np.float32
        )
        logits[label] = rng.uniform(1.0, 2.0)
        samples.append(Tensor.from_numpy(logits))
        labels.append(label)
    return samples, labels


def generate_image_dataset(
    count: int, height: int, width: int, channels: int, seed: int
) -> list[Tensor]:
    """Random uint8 HWC images for driving the built-in step pipeline."""
    rng = np.random.default_rng(seed)
    return [
        Tensor.from_numpy(
            rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8)
        )
        for _ in range(count)
    ]
