"""Checkpoint persistence: structured text header + raw float64 blob.

The header is UTF-8 text lines terminated by an ``end-header`` line;
the blob is the declared tensors concatenated in header order as
little-endian float64. Factorized checkpoints keep the uncollapsed
factors so compression can be re-run with different knobs; compressed
checkpoints store the (A, B) pair per layer. Writes are atomic
(temp file + rename) and save -> load -> save is byte-identical.
"""

import os
import tempfile

import numpy as np

from .compress import CompressedModel
from .nn import FactorizedDense, Mlp

FORMAT_VERSION = "lorita-checkpoint v1"


class CheckpointError(ValueError):
    pass


def _header_lines(kind, meta, tensors):
    lines = [FORMAT_VERSION, f"kind {kind}"]
    for key in sorted(meta):
        lines.append(f"meta {key} {meta[key]}")
    offset = 0
    for name, arr in tensors:
        lines.append(f"tensor {name} {arr.shape[0]} {arr.shape[1]} {offset}")
        offset += arr.size
    lines.append("end-header")
    return lines


def _atomic_write(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write(path, kind, meta, tensors):
    header = "\n".join(_header_lines(kind, meta, tensors)) + "\n"
    blob = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors
    )
    _atomic_write(path, header.encode("utf-8") + blob)


def save_model(path, model, meta=None):
    """Save an Mlp with its factorized (uncollapsed) weights."""
    meta = dict(meta or {})
    meta["n_layers"] = len(model.layers)
    tensors = []
    for li, layer in enumerate(model.layers):
        for fi, f in enumerate(layer.factors):
            tensors.append((f"layer{li}.factor{fi}", f))
    _write(path, "factorized", meta, tensors)


def save_compressed(path, cm, meta=None):
    """Save a CompressedModel's (A, B) pairs."""
    meta = dict(meta or {})
    meta["n_layers"] = len(cm.pairs)
    meta["num_classes"] = cm.num_classes
    tensors = []
    for li, (a, b) in enumerate(cm.pairs):
        tensors.append((f"layer{li}.A", a))
        tensors.append((f"layer{li}.B", b))
    _write(path, "compressed", meta, tensors)


def load(path):
    """Load a checkpoint; returns (model_or_compressed, kind, meta)."""
    with open(path, "rb") as f:
        raw = f.read()
    marker = b"end-header\n"
    split = raw.find(marker)
    if not raw.startswith(FORMAT_VERSION.encode()) or split < 0:
        raise CheckpointError(f"{path}: not a recognized checkpoint")
    header = raw[:split].decode("utf-8").splitlines()
    blob = raw[split + len(marker) :]

    kind = None
    meta = {}
    tensors = {}
    order = []
    for line in header[1:]:
        parts = line.split()
        if parts[0] == "kind":
            kind = parts[1]
        elif parts[0] == "meta":
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "tensor":
            name, rows, cols, offset = parts[1], int(parts[2]), int(parts[3]), int(parts[4])
            tensors[name] = (rows, cols, offset)
            order.append(name)
        else:
            raise CheckpointError(f"{path}: bad header line {line!r}")
    declared = sum(r * c for r, c, _ in tensors.values()) * 8
    if declared != len(blob):
        raise CheckpointError(
            f"{path}: blob length {len(blob)} != declared {declared}"
        )

    def read(name):
        rows, cols, offset = tensors[name]
        return (
            np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset * 8)
            .reshape(rows, cols)
            .copy()
        )

    n_layers = int(meta["n_layers"])
    if kind == "factorized":
        layers = []
        for li in range(n_layers):
            factors = [read(n) for n in order if n.startswith(f"layer{li}.factor")]
            layers.append(FactorizedDense(factors))
        return Mlp(layers), kind, meta
    if kind == "compressed":
        pairs = [(read(f"layer{li}.A"), read(f"layer{li}.B")) for li in range(n_layers)]
        return CompressedModel(pairs, num_classes=int(meta["num_classes"])), kind, meta
    raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
