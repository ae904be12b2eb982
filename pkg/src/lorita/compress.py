"""Singular-value-truncation compression: per-layer, global, and iterative
rank selection, plan application, and post-compression fine-tuning.

All three schemes produce a CompressionPlan (one retained rank per
layer); apply_plan materializes it by collapsing each layer, taking its
SVD, and keeping the top-r singular triples as an (m x r, r x n) factor
pair with the singular values folded into the left factor.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg, nn
from .errors import ShapeError


@dataclass
class CompressionPlan:
    ranks: list  # one retained rank per layer
    scheme: str  # lsvt | gsvt | isvt
    params: dict = field(default_factory=dict)


@dataclass
class CompressedModel:
    """Per layer a factor pair (A_l m x r, B_l r x n); storage (m+n)*r."""

    pairs: list  # [(a_factor, b_factor), ...]
    num_classes: int = 0

    @property
    def ranks(self):
        return [a.shape[1] for a, _ in self.pairs]

    @property
    def in_dim(self):
        return self.pairs[0][1].shape[1]

    @property
    def out_dim(self):
        return self.pairs[-1][0].shape[0]

    def retained_params(self):
        return sum((a.shape[0] + b.shape[1]) * a.shape[1] for a, b in self.pairs)

    def forward(self, x):
        h = np.asarray(x, dtype=np.float64)
        last = len(self.pairs) - 1
        for i, (a, b) in enumerate(self.pairs):
            h = (h @ b.T) @ a.T
            if i != last:
                h = np.maximum(h, 0.0)
        return h


def spectra(model):
    """Per-layer descending singular values of the collapsed weights."""
    return [linalg.svd(nn.collapse(layer)).s for layer in model.layers]


def layer_svds(model):
    return [linalg.svd(nn.collapse(layer)) for layer in model.layers]


def full_ranks(model):
    return [min(layer.out_dim, layer.in_dim) for layer in model.layers]


def lsvt(model, r=None, fraction=None):
    """Identical rank rule per layer: fixed r, or ceil(fraction * k_l)."""
    ks = full_ranks(model)
    if (r is None) == (fraction is None):
        raise ValueError("specify exactly one of r, fraction")
    if r is not None:
        for li, k in enumerate(ks):
            if not 1 <= r <= k:
                raise ShapeError(f"rank {r} invalid for layer {li} (k={k})")
        ranks = [r] * len(ks)
        params = {"r": r}
    else:
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
        ranks = [max(1, math.ceil(fraction * k)) for k in ks]
        params = {"fraction": fraction}
    return CompressionPlan(ranks=ranks, scheme="lsvt", params=params)


def gsvt(model, keep_fraction):
    """Normalize each spectrum by its top value, pool globally, keep the
    top ceil(keep_fraction * total); per-layer rank floored at 1."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    pooled = []
    for li, s in enumerate(spectra(model)):
        top = s[0] if s[0] > 0 else 1.0
        for si in s:
            pooled.append((si / top, li))
    keep = math.ceil(keep_fraction * len(pooled))
    pooled.sort(key=lambda t: -t[0])
    counts = [0] * len(full_ranks(model))
    for _, li in pooled[:keep]:
        counts[li] += 1
    ranks = [max(1, c) for c in counts]
    return CompressionPlan(
        ranks=ranks, scheme="gsvt", params={"keep_fraction": keep_fraction}
    )


def retained_sv_fraction(plan, model):
    """Mean over layers of retained rank / full rank."""
    ks = full_ranks(model)
    return float(np.mean([r / k for r, k in zip(plan.ranks, ks)]))


def _compressed_from_svds(svds, ranks, num_classes):
    pairs = [linalg.truncate(sr, r) for sr, r in zip(svds, ranks)]
    return CompressedModel(pairs=pairs, num_classes=num_classes)


def _probe_loss(svds, ranks, probe):
    cm = _compressed_from_svds(svds, ranks, probe.num_classes)
    loss, _ = nn.softmax_ce(cm.forward(probe.features), probe.labels)
    return loss


def isvt(model, probe, step_params=500, target_retained_params=None, start_ranks=None):
    """Greedy iterative truncation (cold start or warm start from a plan).

    Each round tentatively drops, per candidate layer, the smallest
    singular values carrying at least step_params parameters
    (m_l + n_l each; overshoot allowed), evaluates the probe
    cross-entropy, and commits the layer with the lowest loss (ties to
    the lowest layer index). Stops when retained parameters fall to the
    target, or with a warning when every layer is at rank 1.
    """
    if len(probe) < 1:
        raise ValueError("probe dataset is empty")
    if step_params < 1:
        raise ValueError("step_params must be >= 1")
    if target_retained_params is None:
        raise ValueError("target_retained_params is required")
    svds = layer_svds(model)
    dims = [(layer.out_dim, layer.in_dim) for layer in model.layers]
    ranks = list(start_ranks) if start_ranks is not None else full_ranks(model)
    history = []

    def retained(rs):
        return sum((m + n) * r for (m, n), r in zip(dims, rs))

    while retained(ranks) > target_retained_params:
        best = None
        for li, (m, n) in enumerate(dims):
            drop = min(max(1, math.ceil(step_params / (m + n))), ranks[li] - 1)
            if drop < 1:
                continue
            trial = list(ranks)
            trial[li] -= drop
            loss = _probe_loss(svds, trial, probe)
            if best is None or loss < best[0]:
                best = (loss, li, trial)
        if best is None:
            warnings.warn(
                "ISVT target unreachable: all layers at rank 1; returning partial plan"
            )
            break
        loss, li, ranks = best
        history.append({"layer": li, "ranks": list(ranks), "probe_loss": loss})
    return CompressionPlan(
        ranks=ranks,
        scheme="isvt",
        params={
            "step_params": step_params,
            "target_retained_params": target_retained_params,
            "probe_size": len(probe),
            "history": history,
        },
    )


def apply_plan(model, plan):
    """Collapse -> SVD -> truncate each layer at its planned rank."""
    svds = layer_svds(model)
    ks = full_ranks(model)
    for li, (r, k) in enumerate(zip(plan.ranks, ks)):
        if not 1 <= r <= k:
            raise ShapeError(f"plan rank {r} invalid for layer {li} (k={k})")
    return _compressed_from_svds(svds, plan.ranks, num_classes=model.out_dim)


def finetune(cm, dataset, cfg):
    """Brief post-compression training of the (A_l, B_l) pairs at fixed ranks.

    Runs the same mini-batch loop as optim.train on the pair parameters
    (SGD or Adam per cfg); ranks never change. Returns (cm, metrics).
    """
    from . import optim  # local import to avoid a cycle

    proxy = _PairModel(cm)
    metrics = optim.train(proxy, dataset, cfg)
    return cm, metrics


class _PairModel:
    """Adapter exposing a CompressedModel's factor pairs to the training loop.

    Each pair acts as one linear layer h -> A (B h) with ReLU between
    pairs. Implements the forward_cached/backward_cached/all_factors
    protocol that optim.train expects.
    """

    def __init__(self, cm):
        self.cm = cm

    @property
    def in_dim(self):
        return self.cm.in_dim

    @property
    def out_dim(self):
        return self.cm.out_dim

    def all_factors(self):
        return [f for a, b in self.cm.pairs for f in (a, b)]

    def forward_cached(self, x):
        x = np.asarray(x, dtype=np.float64)
        cache = nn.BatchActivations(model_token=id(self), batch_size=x.shape[0])
        h = x
        last = len(self.cm.pairs) - 1
        for i, (a, b) in enumerate(self.cm.pairs):
            mid = h @ b.T
            pre = mid @ a.T
            cache.factor_inputs.append([h, mid])
            cache.preacts.append(pre)
            h = pre if i == last else np.maximum(pre, 0.0)
        return h, cache

    def backward_cached(self, cache, dlogits):
        if cache.model_token != id(self):
            raise ShapeError("activation cache does not belong to this model")
        grads = [None] * len(self.cm.pairs)
        da = dlogits
        for li in range(len(self.cm.pairs) - 1, -1, -1):
            a, b = self.cm.pairs[li]
            if li != len(self.cm.pairs) - 1:
                da = da * (cache.preacts[li] > 0.0)
            h, mid = cache.factor_inputs[li]
            ga = da.T @ mid
            dmid = da @ a
            gb = dmid.T @ h
            da = dmid @ b
            grads[li] = (ga, gb)
        return [g for pair in grads for g in pair]
