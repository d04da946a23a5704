"""Training loop: epoch shuffling, weighted backprop, Adam, NLL scoring.

One epoch visits every training frame once in an epoch-seeded random order.
Runs are fully reproducible from (seed, config, initial parameters): the
shuffle for epoch e derives from (seed, e), batches reduce in a fixed order,
and all loss/weight math happens in float64 regardless of network dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .net import AdamState, PolicyNetwork
from .policy import (DiagonalGaussian, bc_loss, nll_head_gradients, nll_loss,
                     sigmoid, variance_from_raw)

WEIGHT_HIST_EDGES = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, np.inf]


@dataclass
class TrainConfig:
    q: float = 0.8
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    seed: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    use_nll_path: bool = False  # dedicated standard-BC path, bypasses q entirely


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    mean_weight: float
    weight_histogram: list[int] = field(default_factory=list)
    test_nll: float | None = None


def _gaussian_from_heads(mean: np.ndarray, raw_var: np.ndarray) -> tuple[DiagonalGaussian, np.ndarray]:
    raw64 = raw_var.astype(np.float64)
    g = DiagonalGaussian(mean.astype(np.float64), variance_from_raw(raw64))
    return g, raw64


def train_epoch(net: PolicyNetwork, images: np.ndarray, actions: np.ndarray,
                opt: AdamState, cfg: TrainConfig, epoch: int) -> EpochStats:
    """Shuffle with the epoch-derived seed, then one weighted-SGD pass."""
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng([cfg.seed, epoch])
    perm = rng.permutation(n)
    loss_sum = 0.0
    weight_sum = 0.0
    hist = np.zeros(len(WEIGHT_HIST_EDGES) - 1, dtype=np.int64)
    for start in range(0, n, cfg.batch_size):
        idx = perm[start:start + cfg.batch_size]
        batch_images = images[idx]
        batch_actions = actions[idx].astype(np.float64)
        mean, raw_var, tape = net.forward_train(batch_images)
        g, raw64 = _gaussian_from_heads(mean, raw_var)
        if cfg.use_nll_path:
            result = nll_loss(g, batch_actions)
        else:
            result = bc_loss(g, batch_actions, cfg.q)
        d_mean, d_var = nll_head_gradients(g, batch_actions)
        scale = 1.0 / len(idx)
        d_raw = d_var * sigmoid(raw64)
        grads = net.backward(tape, d_mean * scale, d_raw * scale, result.per_sample_weight)
        opt.step(net.params, grads)
        loss_sum += result.loss * len(idx)
        weight_sum += float(result.per_sample_weight.sum())
        hist += np.histogram(result.per_sample_weight, bins=WEIGHT_HIST_EDGES)[0]
    return EpochStats(
        epoch=epoch,
        train_loss=loss_sum / n,
        mean_weight=weight_sum / n,
        weight_histogram=hist.tolist(),
    )


def evaluate_nll(net: PolicyNetwork, images: np.ndarray, actions: np.ndarray,
                 batch_size: int = 256) -> float:
    """Mean plain NLL over the set, regardless of the training q; no updates."""
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty evaluation set")
    total = 0.0
    for start in range(0, n, batch_size):
        g = net.predict(images[start:start + batch_size])
        total += float(nll_loss(g, actions[start:start + batch_size].astype(np.float64)).loss) * g.mean.shape[0]
    return total / n


def fit(net: PolicyNetwork, train_images: np.ndarray, train_actions: np.ndarray,
        cfg: TrainConfig, test_images: np.ndarray | None = None,
        test_actions: np.ndarray | None = None, on_epoch=None) -> list[EpochStats]:
    """Train for cfg.epochs; evaluates test NLL per epoch when a test set is given."""
    opt = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        stats = train_epoch(net, train_images, train_actions, opt, cfg, epoch)
        if test_images is not None:
            stats.test_nll = evaluate_nll(net, test_images, test_actions)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return history
