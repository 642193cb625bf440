"""MNIST IDX ingestion, binarization and digit streaming.

IDX is the classic big-endian binary layout: a 4-byte magic (two zero
bytes, a dtype code, a dimension count), one big-endian uint32 per
dimension, then the raw values. Images use magic 0x00000803 (uint8,
3 dims), labels 0x00000801. Gzip-compressed files are detected by their
leading two bytes and handled transparently.

Images are presented to the network one per timestep as 784-entry binary
vectors: a pixel at or above the threshold becomes a full-strength
(amplitude 1) input spike.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_TRAIN_COUNT = 60000
MNIST_TEST_COUNT = 10000


class IdxFormatError(ValueError):
    """Malformed IDX data; message carries the byte offset of the problem."""


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_be32(fh, offset, what):
    data = fh.read(4)
    if len(data) != 4:
        raise IdxFormatError(f"truncated file reading {what} at byte {offset}")
    return struct.unpack(">I", data)[0], offset + 4


def load_idx_images(path, expected_count=None):
    """Parse an IDX image file into a (count, rows, cols) uint8 array.

    expected_count, when given, must match the header (pass 60000 / 10000
    to enforce the standard MNIST train / test files).
    """
    with _open_maybe_gzip(path) as fh:
        offset = 0
        magic, offset = _read_be32(fh, offset, "magic")
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(f"bad image magic 0x{magic:08x} at byte 0 "
                                 f"(expected 0x{IMAGE_MAGIC:08x})")
        count, offset = _read_be32(fh, offset, "image count")
        rows, offset = _read_be32(fh, offset, "row count")
        cols, offset = _read_be32(fh, offset, "column count")
        if expected_count is not None and count != expected_count:
            raise IdxFormatError(f"image count {count} != expected {expected_count}")
        need = count * rows * cols
        raw = fh.read(need)
        if len(raw) != need:
            raise IdxFormatError(f"truncated pixel data at byte {offset + len(raw)} "
                                 f"(expected {need} pixels)")
        if fh.read(1):
            raise IdxFormatError(f"trailing bytes after pixel data at byte {offset + need}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path, expected_count=None):
    """Parse an IDX label file into a (count,) uint8 array of digits 0-9."""
    with _open_maybe_gzip(path) as fh:
        offset = 0
        magic, offset = _read_be32(fh, offset, "magic")
        if magic != LABEL_MAGIC:
            raise IdxFormatError(f"bad label magic 0x{magic:08x} at byte 0 "
                                 f"(expected 0x{LABEL_MAGIC:08x})")
        count, offset = _read_be32(fh, offset, "label count")
        if expected_count is not None and count != expected_count:
            raise IdxFormatError(f"label count {count} != expected {expected_count}")
        raw = fh.read(count)
        if len(raw) != count:
            raise IdxFormatError(f"truncated label data at byte {offset + len(raw)}")
        if fh.read(1):
            raise IdxFormatError(f"trailing bytes after label data at byte {offset + count}")
    labels = np.frombuffer(raw, dtype=np.uint8)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise IdxFormatError(f"label value {labels[bad[0]]} out of range 0-9 "
                             f"at item {bad[0]} (byte {offset + int(bad[0])})")
    return labels


def save_idx_images(path, images):
    """Write a (count, rows, cols) uint8 array in IDX image format;
    .gz paths are gzip-compressed."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"images must be 3-d, got shape {images.shape}")
    header = struct.pack(">IIII", IMAGE_MAGIC, *images.shape)
    _write_binary(path, header + images.tobytes())


def save_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {labels.shape}")
    if labels.size and labels.max() > 9:
        raise ValueError("labels must be digits 0-9")
    header = struct.pack(">II", LABEL_MAGIC, labels.size)
    _write_binary(path, header + labels.tobytes())


def _write_binary(path, payload: bytes):
    path = Path(path)
    if path.suffix == ".gz":
        # fixed mtime so identical content gives identical bytes
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def binarize(images, threshold: int = 128) -> np.ndarray:
    """1-bit-per-pixel conversion: pixel >= threshold -> 1, else 0.

    Idempotent for already-binary input as long as threshold <= 128.
    """
    arr = np.asarray(images)
    return (arr >= threshold).astype(np.uint8)


class DigitStream:
    """Ordered sequence of flattened binary digit images with labels.

    One item is presented per network timestep. The stream is a plain
    cursor over fixed arrays; reshuffling or tiling happens at
    construction time so runs are reproducible.
    """

    def __init__(self, images, labels):
        images = np.asarray(images)
        labels = np.asarray(labels)
        if images.ndim == 3:
            images = images.reshape(images.shape[0], -1)
        if images.shape[0] != labels.shape[0]:
            raise ValueError(f"{images.shape[0]} images vs {labels.shape[0]} labels")
        if images.size and not np.isin(np.unique(images), [0, 1]).all():
            raise ValueError("stream images must be binarized to {0, 1}")
        self.images = images.astype(np.uint8)
        self.labels = labels.astype(np.int64)
        self.cursor = 0

    def __len__(self):
        return self.images.shape[0]

    @property
    def n_pixels(self):
        return self.images.shape[1]

    def reset(self):
        self.cursor = 0

    def next(self):
        if self.cursor >= len(self):
            raise StopIteration("digit stream exhausted")
        img = self.images[self.cursor]
        lab = int(self.labels[self.cursor])
        self.cursor += 1
        return img, lab

    def shuffled(self, seed: int) -> "DigitStream":
        order = np.random.default_rng([seed, 0x5f]).permutation(len(self))
        return DigitStream(self.images[order], self.labels[order])

    def tiled(self, total: int, seed=None) -> "DigitStream":
        """Repeat the stream up to `total` presentations, optionally
        reshuffling each pass with a seeded generator."""
        imgs, labs = [], []
        have = 0
        pass_idx = 0
        while have < total:
            src = self if seed is None else self.shuffled(seed + pass_idx)
            take = min(len(src), total - have)
            imgs.append(src.images[:take])
            labs.append(src.labels[:take])
            have += take
            pass_idx += 1
        return DigitStream(np.concatenate(imgs), np.concatenate(labs))


def load_streams(train_images, train_labels, test_images, test_labels,
                 threshold: int = 128, strict_counts: bool = False):
    """Load and binarize the four MNIST files into (train, test) streams.

    strict_counts enforces the canonical 60000 / 10000 sizes.
    """
    xtr = load_idx_images(train_images, MNIST_TRAIN_COUNT if strict_counts else None)
    ytr = load_idx_labels(train_labels, xtr.shape[0])
    xte = load_idx_images(test_images, MNIST_TEST_COUNT if strict_counts else None)
    yte = load_idx_labels(test_labels, xte.shape[0])
    return (DigitStream(binarize(xtr, threshold), ytr),
            DigitStream(binarize(xte, threshold), yte))
