"""Factorized fully-connected networks and convolution forward paths.

A layer holds an ordered factor list [W1 (m x n), W2..WN (n x n)] whose
left-to-right product is the logical weight. Networks are bias-free
ReLU MLPs; inputs are batch-major (batch x dim) and layers apply
x @ W.T per factor without ever collapsing the product during the
forward pass.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .linalg import as_mat


@dataclass
class FactorizedDense:
    """One logical m x n weight stored as a product of N factors."""

    factors: list  # [m x n, n x n, ..., n x n]

    def __post_init__(self):
        if not self.factors:
            raise ShapeError("factor list must be non-empty")
        self.factors = [as_mat(f, f"factor {i}") for i, f in enumerate(self.factors)]
        m, n = self.factors[0].shape
        for i, f in enumerate(self.factors[1:], start=1):
            if f.shape != (n, n):
                raise ShapeError(
                    f"factor {i} must be {n}x{n}, got {f.shape[0]}x{f.shape[1]}"
                )

    @property
    def out_dim(self):
        return self.factors[0].shape[0]

    @property
    def in_dim(self):
        return self.factors[0].shape[1]

    @property
    def depth(self):
        return len(self.factors)

    def copy(self):
        return FactorizedDense([f.copy() for f in self.factors])


@dataclass
class Mlp:
    """Bias-free ReLU MLP; activation after every layer except the last."""

    layers: list

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer chain broken: out_dim {a.out_dim} != in_dim {b.in_dim}"
                )

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def out_dim(self):
        return self.layers[-1].out_dim

    def copy(self):
        return Mlp([l.copy() for l in self.layers])

    def all_factors(self):
        """Flat factor list, layer-major then factor order."""
        return [f for layer in self.layers for f in layer.factors]

    # training-loop protocol (shared with compress._PairModel)
    def forward_cached(self, x):
        return forward(self, x)

    def backward_cached(self, cache, dlogits):
        return backward(self, cache, dlogits)


@dataclass
class BatchActivations:
    """Per-layer intermediates cached by forward() for backward()."""

    model_token: int
    batch_size: int
    # factor_inputs[l][i] is the input to factor application i of layer l
    # (factors are applied right-to-left: i=0 applies W^N, last applies W^1)
    factor_inputs: list = field(default_factory=list)
    preacts: list = field(default_factory=list)


def collapse(layer):
    """Left-to-right product of the factor list."""
    w = layer.factors[0]
    for f in layer.factors[1:]:
        w = w @ f
    return w


def forward(model, x):
    """Forward pass through the uncollapsed factor chain.

    Returns (logits, cache); cache feeds backward().
    """
    x = as_mat(x, "input")
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"input dim {x.shape[1]} != model in_dim {model.in_dim}")
    cache = BatchActivations(model_token=id(model), batch_size=x.shape[0])
    h = x
    last = len(model.layers) - 1
    for li, layer in enumerate(model.layers):
        inputs = []
        a = h
        for f in reversed(layer.factors):
            inputs.append(a)
            a = a @ f.T
        cache.factor_inputs.append(inputs)
        cache.preacts.append(a)
        h = a if li == last else np.maximum(a, 0.0)
    return h, cache


def backward(model, cache, dlogits):
    """Exact data-loss gradients for every factor (weight decay excluded).

    Returns a flat list aligned with model.all_factors().
    """
    if cache.model_token != id(model):
        raise ShapeError("activation cache does not belong to this model")
    dlogits = as_mat(dlogits, "dlogits")
    if dlogits.shape != (cache.batch_size, model.out_dim):
        raise ShapeError(
            f"dlogits shape {dlogits.shape} != "
            f"({cache.batch_size}, {model.out_dim})"
        )
    grads = [None] * len(model.layers)
    da = dlogits
    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        if li != len(model.layers) - 1:
            da = da * (cache.preacts[li] > 0.0)
        layer_grads = []
        # walk factors left to right: W^1 saw the chain output, W^N the layer input
        for i in range(layer.depth - 1, -1, -1):
            f = layer.factors[layer.depth - 1 - i]
            a_in = cache.factor_inputs[li][i]
            layer_grads.append(da.T @ a_in)
            da = da @ f
        grads[li] = layer_grads
    return [g for layer_grads in grads for g in layer_grads]


def softmax_ce(logits, labels):
    """Mean softmax cross-entropy and its logits gradient."""
    logits = as_mat(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} != ({batch},)")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(batch), labels]))
    probs = np.exp(shifted - logsumexp[:, None])
    dlogits = probs
    dlogits[np.arange(batch), labels] -= 1.0
    return loss, dlogits / batch


def init_factorized(m, n, depth, seed):
    """Gaussian init with per-factor std (2^(1/N) / n)^(1/2).

    The collapsed product then has entry variance 2/n (He) for every
    depth, so the initial forward scale is depth-independent. depth=1
    reduces to plain He initialization.
    """
    if m < 1 or n < 1 or depth < 1:
        raise ShapeError(f"invalid dims m={m}, n={n}, depth={depth}")
    rng = np.random.default_rng(seed)
    std = float(np.sqrt(2.0 ** (1.0 / depth) / n))
    factors = [rng.normal(0.0, std, size=(m, n))]
    for _ in range(depth - 1):
        factors.append(rng.normal(0.0, std, size=(n, n)))
    return FactorizedDense(factors)


def build_mlp(dims, depth, seed):
    """MLP with layer dims [d0, d1, ..., dL]; one sub-seed per layer."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(len(dims) - 1):
        layer_seed = int(rng.integers(0, 2**63 - 1))
        layers.append(init_factorized(dims[i + 1], dims[i], depth, layer_seed))
    return Mlp(layers)


# --- convolution forward paths (inference/equivalence only) ---


def conv_forward(image, kernel):
    """Valid-mode stride-1 convolution of an H x W x D image with an
    F_H x F_W x F_D x M kernel tensor."""
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if image.ndim != 3 or kernel.ndim != 4:
        raise ShapeError("expected H x W x D image and F_H x F_W x F_D x M kernel")
    h, w, d = image.shape
    fh, fw, fd, m = kernel.shape
    if fd != d:
        raise ShapeError(f"kernel depth {fd} != image depth {d}")
    if fh > h or fw > w:
        raise ShapeError(f"kernel {fh}x{fw} larger than image {h}x{w}")
    oh, ow = h - fh + 1, w - fw + 1
    cols = np.empty((oh, ow, fh * fw * fd))
    for i in range(fh):
        for j in range(fw):
            patch = image[i : i + oh, j : j + ow, :]
            cols[:, :, (i * fw + j) * fd : (i * fw + j) * fd + fd] = patch
    return cols @ kernel.reshape(fh * fw * fd, m)


def mode4_unfold(kernel):
    """Flatten F_H x F_W x F_D x M kernel into (F_H*F_W*F_D) x M; column m
    is filter m in (i, j, k) lexicographic order."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be 4-D, got shape {kernel.shape}")
    fh, fw, fd, m = kernel.shape
    return np.ascontiguousarray(kernel.reshape(fh * fw * fd, m))


def fold4(mat, dims):
    """Inverse of mode4_unfold; dims = (F_H, F_W, F_D, M)."""
    mat = as_mat(mat, "unfolded kernel")
    fh, fw, fd, m = dims
    if mat.shape != (fh * fw * fd, m):
        raise ShapeError(f"cannot fold {mat.shape} into {dims}")
    return mat.reshape(fh, fw, fd, m)


@dataclass
class LowRankConv:
    """Rank-r factorized convolution: r filters then an M x r channel mix."""

    l_tensor: np.ndarray  # F_H x F_W x F_D x r
    r_mat: np.ndarray  # M x r

    def __post_init__(self):
        self.l_tensor = np.asarray(self.l_tensor, dtype=np.float64)
        self.r_mat = as_mat(self.r_mat, "r_mat")
        if self.l_tensor.ndim != 4:
            raise ShapeError("l_tensor must be 4-D")
        r = self.l_tensor.shape[3]
        fh, fw, fd = self.l_tensor.shape[:3]
        if r < 1 or r > min(fh * fw * fd, self.r_mat.shape[0]):
            raise ShapeError(f"rank {r} out of range")
        if self.r_mat.shape[1] != r:
            raise ShapeError(
                f"r_mat cols {self.r_mat.shape[1]} != l_tensor rank {r}"
            )


def lowrank_conv_forward(image, lrc):
    """Convolve with the r low-rank filters, then mix channels with R."""
    inter = conv_forward(image, lrc.l_tensor)
    return inter @ lrc.r_mat.T
