"""Adam/SGD steps and the mini-batch training loop.

Weight decay is coupled L2: the update gradient is g + 2*lambda*W per
factor, the exact gradient of lambda * sum ||W||_F^2, applied before
the Adam moment updates. Shuffling draws a fresh counter-derived
stream (seed, epoch) each epoch, so runs are reproducible bit-for-bit.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ShapeError


@dataclass
class TrainConfig:
    lr: float = 1e-2
    weight_decay: float = 0.0
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_model(cls, model):
        factors = model.all_factors()
        return cls(
            m=[np.zeros_like(f) for f in factors],
            v=[np.zeros_like(f) for f in factors],
        )


def _check_grads(factors, grads):
    if len(grads) != len(factors):
        raise ShapeError(f"{len(grads)} grads for {len(factors)} factors")
    for f, g in zip(factors, grads):
        if g.shape != f.shape:
            raise ShapeError(f"grad shape {g.shape} != factor shape {f.shape}")


def adam_step(model, grads, state, cfg):
    """One in-place Adam update with coupled L2 decay and bias correction."""
    factors = model.all_factors()
    _check_grads(factors, grads)
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for i, (f, g) in enumerate(zip(factors, grads)):
        g_eff = g + 2.0 * cfg.weight_decay * f
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g_eff
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g_eff**2
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        f -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def sgd_step(model, grads, cfg):
    """W <- W - lr * (g + 2*lambda*W), in place."""
    factors = model.all_factors()
    _check_grads(factors, grads)
    for f, g in zip(factors, grads):
        f -= cfg.lr * (g + 2.0 * cfg.weight_decay * f)


def decay_penalty(model, weight_decay):
    """lambda * sum of squared Frobenius norms over every factor."""
    return weight_decay * sum(float(np.sum(f * f)) for f in model.all_factors())


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float  # mean over mini-batches
    train_accuracy: float
    objective: float  # full-batch data loss + decay penalty, at epoch end
    test_accuracy: float = None  # only when a test set is supplied


def _full_batch_loss(model, dataset, chunk=4096):
    total, correct = 0.0, 0
    n = dataset.features.shape[0]
    for start in range(0, n, chunk):
        x = dataset.features[start : start + chunk]
        y = dataset.labels[start : start + chunk]
        logits, _ = model.forward_cached(x)
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError(
                f"non-finite logits during evaluation at sample offset {start}"
            )
        loss, _ = nn.softmax_ce(logits, y)
        total += loss * x.shape[0]
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return total / n, correct / n


def train(model, dataset, cfg, test_dataset=None, log=None):
    """Shuffled mini-batch training; mutates the model in place.

    Returns one EpochMetrics per epoch. Aborts with a diagnostic on
    NaN loss.
    """
    n = dataset.features.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    state = AdamState.for_model(model) if cfg.optimizer == "adam" else None
    metrics = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        batch_losses = []
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = dataset.features[idx]
            y = dataset.labels[idx]
            logits, cache = model.forward_cached(x)
            if not np.all(np.isfinite(logits)):
                raise FloatingPointError(
                    f"non-finite logits at epoch {epoch}, sample offset {start} "
                    f"(lr={cfg.lr}, weight_decay={cfg.weight_decay})"
                )
            loss, dlogits = nn.softmax_ce(logits, y)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, sample offset {start} "
                    f"(lr={cfg.lr}, weight_decay={cfg.weight_decay})"
                )
            grads = model.backward_cached(cache, dlogits)
            if cfg.optimizer == "adam":
                adam_step(model, grads, state, cfg)
            else:
                sgd_step(model, grads, cfg)
            batch_losses.append(loss)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        if not all(np.all(np.isfinite(f)) for f in model.all_factors()):
            raise FloatingPointError(
                f"non-finite weights after epoch {epoch} "
                f"(lr={cfg.lr}, weight_decay={cfg.weight_decay})"
            )
        data_loss, _ = _full_batch_loss(model, dataset)
        test_accuracy = None
        if test_dataset is not None:
            _, test_accuracy = _full_batch_loss(model, test_dataset)
        em = EpochMetrics(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            train_accuracy=correct / n,
            objective=data_loss + decay_penalty(model, cfg.weight_decay),
            test_accuracy=test_accuracy,
        )
        metrics.append(em)
        if log is not None:
            log(em)
    return metrics
