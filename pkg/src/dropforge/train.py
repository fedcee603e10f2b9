"""Minibatch SGD trainer for the desk-scale models.

Dropout layers stay active during training (masks sampled per example, same
inverted scaling as MC execution), so trained models behave sensibly when
later run in MC mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError
from .network import Network
from .rng import RngStream

__all__ = ["TrainHistory", "sgd_train", "accuracy", "cross_entropy", "he_normal"]


def he_normal(shape, fan_in: int, generator: np.random.Generator) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (generator.normal(0.0, std, size=shape)).astype(np.float32)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy in nats, accumulated in 64-bit."""
    p = probs.astype(np.float64)
    picked = p[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))


def accuracy(net: Network, images: np.ndarray, labels: np.ndarray) -> float:
    pred = net.predict_label_batch(images)
    return float(np.mean(pred == labels))


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)
    final_train_accuracy: float = 0.0


def sgd_train(net: Network, images: np.ndarray, labels: np.ndarray, *,
              epochs: int, lr: float, rng: RngStream,
              batch_size: int = 32, momentum: float = 0.9,
              lr_decay: float = 1.0,
              weight_decay: float = 0.0,
              augment_noise: float = 0.0,
              adversarial_fraction: float = 0.0,
              adversarial_eps: float = 0.0) -> tuple[Network, TrainHistory]:
    """Train a copy of ``net``; returns the trained network and its history.

    ``weight_decay`` adds L2 shrinkage per step; ``augment_noise`` jitters each
    training batch with clipped uniform pixel noise of that amplitude;
    ``adversarial_fraction`` replaces that share of each batch with single-step
    gradient-sign examples of radius ``adversarial_eps`` (computed against the
    current weights), which smooths the decision landscape inside that radius.
    """
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise DatasetError("cannot train on an empty dataset")
    if len(images) != len(labels):
        raise DatasetError(f"{len(images)} images but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= net.class_count:
        raise DatasetError(f"labels must lie in [0, {net.class_count}), "
                           f"got range [{labels.min()}, {labels.max()}]")

    work = net.copy()
    gen = rng.generator()
    velocity = {i: [np.zeros_like(p) for p in layer.params()]
                for i, layer in enumerate(work.layers) if layer.params()}

    n = len(images)
    history = TrainHistory()
    step_lr = float(lr)
    for _ in range(int(epochs)):
        order = gen.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = images[idx], labels[idx]
            if augment_noise > 0.0:
                jitter = gen.uniform(-augment_noise, augment_noise, size=xb.shape)
                xb = np.clip(xb + jitter, 0.0, 1.0).astype(np.float32)
            if adversarial_fraction > 0.0 and adversarial_eps > 0.0:
                k = int(round(adversarial_fraction * len(idx)))
                if k:
                    ctxs_adv: list[dict] = []
                    probs_adv = work.run_batch(xb[:k], ctxs=ctxs_adv)
                    dlog = probs_adv.astype(np.float32)
                    dlog[np.arange(k), yb[:k]] -= 1.0
                    dx, _ = work.backprop_logits(dlog, ctxs_adv)
                    xb = xb.copy()
                    xb[:k] = np.clip(xb[:k] + np.float32(adversarial_eps) * np.sign(dx),
                                     0.0, 1.0)
            masks = work.sample_masks(gen, len(idx)) if work.has_dropout else None
            ctxs: list[dict] = []
            probs = work.run_batch(xb, masks=masks, ctxs=ctxs)
            epoch_loss += cross_entropy(probs, yb) * len(idx)

            dlogits = probs.astype(np.float32)
            dlogits[np.arange(len(idx)), yb] -= 1.0
            dlogits /= np.float32(len(idx))
            _, grads = work.backprop_logits(dlogits, ctxs)

            for i, layer_grads in grads.items():
                params = work.layers[i].params()
                for p, g, v in zip(params, layer_grads, velocity[i]):
                    if weight_decay > 0.0:
                        g = g + np.float32(weight_decay) * p
                    v *= momentum
                    v -= np.float32(step_lr) * g
                    p += v
        history.epoch_losses.append(epoch_loss / n)
        step_lr *= lr_decay

    history.final_train_accuracy = accuracy(work, images, labels)
    return work, history
