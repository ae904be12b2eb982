"""Parameter/FLOP accounting, model evaluation, and compression curves.

FLOPs are counted as multiply-accumulates (one MAC = one FLOP),
matching the convention of the reference architecture totals the
accounting is checked against (ResNet20 40.81M, VGG16 314.59M on
32x32 inputs). Counts are exact integer arithmetic, per sample,
ignoring activations, softmax, and batch-norm arithmetic.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import compress, nn
from .errors import ShapeError
from .util import thread_cap


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | lowrank_dense | conv | lowrank_conv | batchnorm
    dims: tuple

    def params(self):
        d = self.dims
        if self.kind == "dense":  # (m, n)
            return d[0] * d[1]
        if self.kind == "lowrank_dense":  # (m, n, r)
            return (d[0] + d[1]) * d[2]
        if self.kind == "conv":  # (fh, fw, fd, m, h_out, w_out)
            return d[0] * d[1] * d[2] * d[3]
        if self.kind == "lowrank_conv":  # (fh, fw, fd, m, h_out, w_out, r)
            return d[0] * d[1] * d[2] * d[6] + d[3] * d[6]
        if self.kind == "batchnorm":  # (channels,)
            return 2 * d[0]
        raise ShapeError(f"unknown layer kind {self.kind!r}")

    def flops(self):
        d = self.dims
        if self.kind == "dense":
            return d[0] * d[1]
        if self.kind == "lowrank_dense":
            return (d[0] + d[1]) * d[2]
        if self.kind == "conv":
            return d[0] * d[1] * d[2] * d[3] * d[4] * d[5]
        if self.kind == "lowrank_conv":
            return (d[0] * d[1] * d[2] * d[6] + d[3] * d[6]) * d[4] * d[5]
        if self.kind == "batchnorm":
            return 0
        raise ShapeError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class ArchDescriptor:
    name: str
    layers: tuple


def dense(m, n):
    return LayerSpec("dense", (m, n))


def lowrank_dense(m, n, r):
    return LayerSpec("lowrank_dense", (m, n, r))


def conv(fh, fw, fd, m, h_out, w_out):
    return LayerSpec("conv", (fh, fw, fd, m, h_out, w_out))


def lowrank_conv(fh, fw, fd, m, h_out, w_out, r):
    return LayerSpec("lowrank_conv", (fh, fw, fd, m, h_out, w_out, r))


def batchnorm(channels):
    return LayerSpec("batchnorm", (channels,))


def count_params(arch):
    return sum(layer.params() for layer in arch.layers)


def count_flops(arch):
    return sum(layer.flops() for layer in arch.layers)


def resnet20_arch():
    """CIFAR-style ResNet20: 3x3 stem, 3 stages x 3 basic blocks
    (channels 16/32/64), 1x1 shortcut convs at stage boundaries,
    batch-norm after every conv, final 64 -> 10 dense layer."""
    layers = [conv(3, 3, 3, 16, 32, 32), batchnorm(16)]
    in_ch = 16
    for stage, (ch, size) in enumerate([(16, 32), (32, 16), (64, 8)]):
        for block in range(3):
            stride_block = stage > 0 and block == 0
            layers += [conv(3, 3, in_ch, ch, size, size), batchnorm(ch)]
            layers += [conv(3, 3, ch, ch, size, size), batchnorm(ch)]
            if stride_block:
                layers += [conv(1, 1, in_ch, ch, size, size), batchnorm(ch)]
            in_ch = ch
    layers.append(dense(10, 64))
    return ArchDescriptor("resnet20", tuple(layers))


def vgg16_cifar_arch():
    """CIFAR-style VGG16: 13 3x3 convs in five max-pooled blocks
    (64/128/256/512/512 channels), batch-norm per conv, final
    512 -> 10 dense layer."""
    plan = [
        (64, 2, 32),
        (128, 2, 16),
        (256, 3, 8),
        (512, 3, 4),
        (512, 3, 2),
    ]
    layers = []
    in_ch = 3
    for ch, n_convs, size in plan:
        for _ in range(n_convs):
            layers += [conv(3, 3, in_ch, ch, size, size), batchnorm(ch)]
            in_ch = ch
    layers.append(dense(10, 512))
    return ArchDescriptor("vgg16", tuple(layers))


def mlp_arch(model):
    layers = tuple(dense(l.out_dim, l.in_dim) for l in model.layers)
    return ArchDescriptor("mlp", layers)


def compressed_arch(cm):
    layers = tuple(
        lowrank_dense(a.shape[0], b.shape[1], a.shape[1]) for a, b in cm.pairs
    )
    return ArchDescriptor("compressed-mlp", layers)


NAMED_ARCHS = {"resnet20": resnet20_arch, "vgg16": vgg16_cifar_arch}


def evaluate(model, dataset, chunk=4096):
    """Top-1 accuracy; accepts an Mlp or a CompressedModel."""
    fwd = model.forward if hasattr(model, "pairs") else (
        lambda x: nn.forward(model, x)[0]
    )
    correct = 0
    n = len(dataset)
    for start in range(0, n, chunk):
        logits = fwd(dataset.features[start : start + chunk])
        correct += int(
            np.sum(np.argmax(logits, axis=1) == dataset.labels[start : start + chunk])
        )
    return correct / n


@dataclass
class CurvePoint:
    retained_fraction: float
    test_accuracy: float
    accuracy_drop: float
    retained_params: int
    flops: int


def sweep_curve(model, dataset, scheme, fractions):
    """Accuracy-vs-retained-singular-values curve for lsvt or gsvt."""
    if scheme not in ("lsvt", "gsvt"):
        raise ValueError(f"sweep supports lsvt/gsvt, got {scheme!r}")
    if any(not 0 < f <= 1 for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    if list(fractions) != sorted(fractions):
        raise ValueError("fractions must be ascending")
    base_acc = evaluate(model, dataset)

    def one_point(fraction):
        if scheme == "lsvt":
            plan = compress.lsvt(model, fraction=fraction)
        else:
            plan = compress.gsvt(model, keep_fraction=fraction)
        cm = compress.apply_plan(model, plan)
        acc = evaluate(cm, dataset)
        return CurvePoint(
            retained_fraction=compress.retained_sv_fraction(plan, model),
            test_accuracy=acc,
            accuracy_drop=base_acc - acc,
            retained_params=cm.retained_params(),
            flops=count_flops(compressed_arch(cm)),
        )

    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        return list(pool.map(one_point, fractions))


@dataclass
class SpectrumRow:
    layer: int
    index: int
    s_normalized: float


def spectrum_report(model):
    """Per-layer spectra normalized by each layer's top singular value,
    in CSV row order (layer, then index)."""
    rows = []
    for li, s in enumerate(compress.spectra(model)):
        top = s[0] if s[0] > 0 else 1.0
        for i, si in enumerate(s):
            rows.append(SpectrumRow(layer=li, index=i, s_normalized=float(si / top)))
    return rows
