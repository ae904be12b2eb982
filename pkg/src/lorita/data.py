"""Dataset ingestion: IDX (MNIST) files, synthetic blobs, subsampling.

IDX files are big-endian with magic 0x00000803 (images) / 0x00000801
(labels). Gzip-compressed files are accepted transparently (sniffed by
the 0x1f 0x8b prefix). Pixels are scaled by 1/255 and images flattened
row-major, so MNIST yields 784-dim features in [0, 1].
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file (bad magic, truncation, count mismatch)."""


@dataclass
class Dataset:
    features: np.ndarray  # J x d, float64 in [0, 1]
    labels: np.ndarray  # J int64 class indices
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features/labels length mismatch")
        if self.features.shape[0] < 1:
            raise ValueError("dataset must be non-empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("label outside [0, num_classes)")

    def __len__(self):
        return self.features.shape[0]


def _read_bytes(path):
    with open(path, "rb") as f:
        head = f.read(2)
        rest = f.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx(raw, path):
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IMAGES_MAGIC:
        if len(raw) < 16:
            raise IdxFormatError(f"{path}: truncated image header")
        count, rows, cols = struct.unpack(">III", raw[4:16])
        expected = 16 + count * rows * cols
        if len(raw) != expected:
            raise IdxFormatError(
                f"{path}: expected {expected} bytes for {count} images, got {len(raw)}"
            )
        data = np.frombuffer(raw, dtype=np.uint8, offset=16)
        return magic, data.reshape(count, rows * cols)
    if magic == LABELS_MAGIC:
        if len(raw) < 8:
            raise IdxFormatError(f"{path}: truncated label header")
        (count,) = struct.unpack(">I", raw[4:8])
        if len(raw) != 8 + count:
            raise IdxFormatError(
                f"{path}: expected {8 + count} bytes for {count} labels, got {len(raw)}"
            )
        return magic, np.frombuffer(raw, dtype=np.uint8, offset=8)
    raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")


def load_idx(images_path, labels_path):
    """Load an image/label IDX file pair into a Dataset."""
    magic_i, images = _parse_idx(_read_bytes(images_path), images_path)
    if magic_i != IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: not an images file (magic 0x{magic_i:08x})")
    magic_l, labels = _parse_idx(_read_bytes(labels_path), labels_path)
    if magic_l != LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: not a labels file (magic 0x{magic_l:08x})")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    features = images.astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    return Dataset(features, labels, num_classes=int(labels.max()) + 1)


def write_idx(ds, images_path, labels_path, rows, cols, compress=False):
    """Write a Dataset back to an IDX pair (features must be k/255 grid values)."""
    count, d = ds.features.shape
    if d != rows * cols:
        raise ValueError(f"feature dim {d} != rows*cols {rows * cols}")
    pixels = np.rint(ds.features * 255.0).astype(np.uint8)
    img_blob = struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols) + pixels.tobytes()
    lbl_blob = struct.pack(">II", LABELS_MAGIC, count) + ds.labels.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(images_path, "wb") as f:
        f.write(img_blob)
    with opener(labels_path, "wb") as f:
        f.write(lbl_blob)


def synth_blobs(n_per_class, classes, d, separation, seed):
    """Gaussian blobs (unit std) at random centers `separation` apart in
    expectation, clamped to [0, 1]. Deterministic per seed."""
    if n_per_class < 1 or classes < 1 or d < 1:
        raise ValueError("n_per_class, classes, d must be positive")
    rng = np.random.default_rng(seed)
    centers = []
    for _ in range(classes):
        cand = rng.normal(0.0, separation, size=d)
        for _ in range(1000):
            if all(np.linalg.norm(cand - c) >= separation for c in centers):
                break
            cand = rng.normal(0.0, separation, size=d)
        centers.append(cand)
    features = []
    labels = []
    for c in range(classes):
        pts = centers[c] + rng.normal(0.0, 1.0, size=(n_per_class, d))
        features.append(pts)
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    features = np.concatenate(features)
    # affine rescale into [0, 1]; preserves linear separability
    lo, hi = features.min(), features.max()
    if hi > lo:
        features = (features - lo) / (hi - lo)
    else:
        features = np.zeros_like(features)
    return Dataset(features, np.concatenate(labels), num_classes=classes)


def subsample(ds, n, seed):
    """n examples without replacement, deterministic per seed."""
    if n > len(ds):
        raise ValueError(f"cannot subsample {n} from {len(ds)} examples")
    idx = np.random.default_rng(seed).choice(len(ds), size=n, replace=False)
    return Dataset(ds.features[idx], ds.labels[idx], ds.num_classes)
