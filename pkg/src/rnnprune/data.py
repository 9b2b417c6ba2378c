"""Dataset ingestion: MNIST in IDX format and small synthetic sequence tasks."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .rnn import SequenceBatch

__all__ = [
    "IdxFormatError",
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "read_idx_images",
    "read_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "load_mnist_idx",
    "as_sequences",
    "synthetic_copy",
    "synthetic_parity",
    "parity_labels",
    "synthetic_task",
    "TASKS",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
TASKS = ("mnist_rows", "mnist_pixels", "synthetic_copy", "synthetic_parity")


class IdxFormatError(ValueError):
    pass


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw: bytes, magic: int, fields: int, path) -> tuple[int, ...]:
    size = 4 * (fields + 1)
    if len(raw) >= 4:
        (found,) = struct.unpack(">I", raw[:4])
        if found != magic:
            raise IdxFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < size:
        raise IdxFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    return struct.unpack(f">{fields + 1}I", raw[:size])[1:]


def read_idx_images(path) -> np.ndarray:
    """uint8 array of shape (count, rows, cols)."""
    raw = _read_bytes(path)
    count, rows, cols = _header(raw, IMAGE_MAGIC, 3, path)
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise IdxFormatError(f"{path}: truncated, expected {need} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    (count,) = _header(raw, LABEL_MAGIC, 1, path)
    if len(raw) < 8 + count:
        raise IdxFormatError(f"{path}: truncated, expected {8 + count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).copy()


def _write(path, payload: bytes) -> None:
    path = Path(path)
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def write_idx_images(path, images) -> None:
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    data = np.clip(np.rint(images), 0, 255).astype(np.uint8)
    _write(path, struct.pack(">4I", IMAGE_MAGIC, *data.shape) + data.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels).astype(np.uint8)
    _write(path, struct.pack(">2I", LABEL_MAGIC, labels.size) + labels.tobytes())


def as_sequences(images: np.ndarray, mode: str = "rows") -> np.ndarray:
    """Scale uint8 images to [0, 1] and read them as sequences.

    ``rows`` gives one image row per step (T = rows, d_x = cols); ``pixels``
    gives one pixel per step in row-major order (T = rows * cols, d_x = 1).
    """
    x = np.asarray(images, dtype=np.float64) / 255.0
    n, rows, cols = x.shape
    if mode == "rows":
        return x
    if mode == "pixels":
        return x.reshape(n, rows * cols, 1)
    raise ValueError(f"unknown sequence mode {mode!r}")


def load_mnist_idx(images_path, labels_path, mode: str = "rows", limit: int | None = None) -> SequenceBatch:
    """Load an IDX image/label pair; ``limit`` keeps the first ``limit`` examples."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        if limit > images.shape[0]:
            raise IdxFormatError(f"requested {limit} examples, file has {images.shape[0]}")
        images, labels = images[:limit], labels[:limit]
    return SequenceBatch(as_sequences(images, mode), labels.astype(np.int64))


def synthetic_copy(n: int, steps: int, seed, vocab: int = 4) -> SequenceBatch:
    """One-hot token stream; the label is the token seen at the first step."""
    if steps < 1 or vocab < 2:
        raise ValueError("need steps >= 1 and vocab >= 2")
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, vocab, size=(n, steps))
    x = np.eye(vocab)[tokens]
    return SequenceBatch(x, tokens[:, 0].astype(np.int64))


def parity_labels(stream: np.ndarray) -> np.ndarray:
    """1 when the number of -1 entries along the last axis is odd."""
    return (np.sum(stream < 0, axis=-1) % 2).astype(np.int64)


def synthetic_parity(n: int, steps: int, seed, encoding: str = "signed") -> SequenceBatch:
    """Parity of a random +-1 stream.

    ``signed`` feeds the stream itself (d_x = 1). ``onehot`` feeds the pair
    ``(s == +1, s == -1)`` (d_x = 2), a non-negative encoding of the same stream.
    """
    if steps < 1:
        raise ValueError("need steps >= 1")
    rng = np.random.default_rng(seed)
    stream = np.where(rng.random((n, steps)) < 0.5, -1.0, 1.0)
    if encoding == "signed":
        x = stream[:, :, None]
    elif encoding == "onehot":
        x = np.stack([stream > 0, stream < 0], axis=-1).astype(np.float64)
    else:
        raise ValueError(f"unknown parity encoding {encoding!r}")
    return SequenceBatch(x, parity_labels(stream))


def synthetic_task(kind: str, n: int, steps: int, seed, **kwargs) -> SequenceBatch:
    if kind == "synthetic_copy":
        return synthetic_copy(n, steps, seed, **kwargs)
    if kind == "synthetic_parity":
        return synthetic_parity(n, steps, seed, **kwargs)
    raise ValueError(f"unknown synthetic task {kind!r}")
