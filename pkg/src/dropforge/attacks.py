"""Gradient-sign attacks used to produce the baseline adversarial pool.

Both attacks are untargeted, work on the cross-entropy gradient w.r.t. the
input, and keep every output inside the epsilon L-infinity ball of the seed
and inside the [0, 1] pixel range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .network import Network

__all__ = ["AttackConfig", "AdversarialResult", "fgsm", "bim", "run_attack"]


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgsm"
    epsilon: float = 0.3
    bim_steps: int = 10
    bim_step_size: float | None = None  # defaults to epsilon / bim_steps

    def __post_init__(self):
        if self.method not in ("fgsm", "bim"):
            raise ConfigError(f"unknown attack method {self.method!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.bim_steps < 1:
            raise ConfigError(f"bim_steps must be >= 1, got {self.bim_steps}")
        if self.bim_step_size is not None and self.bim_step_size > self.epsilon:
            raise ConfigError("bim_step_size must not exceed epsilon")

    @property
    def step_size(self) -> float:
        return self.bim_step_size if self.bim_step_size is not None else self.epsilon / self.bim_steps


@dataclass
class AdversarialResult:
    image: np.ndarray
    seed_index: int
    original_label: int
    adversarial_label: int
    success: bool
    linf: float
    iterations: int


def _result(x_adv: np.ndarray, net: Network, x: np.ndarray, true_label: int,
            seed_index: int, iterations: int) -> AdversarialResult:
    adv_label = net.predict_label(x_adv)
    return AdversarialResult(
        image=x_adv,
        seed_index=seed_index,
        original_label=int(true_label),
        adversarial_label=adv_label,
        success=adv_label != int(true_label),
        linf=float(np.max(np.abs(x_adv - x))) if x_adv.size else 0.0,
        iterations=iterations,
    )


def fgsm(net: Network, x: np.ndarray, true_label: int, cfg: AttackConfig,
         seed_index: int = -1) -> AdversarialResult:
    """Single step of size epsilon along the gradient sign."""
    x = np.asarray(x, dtype=np.float32)
    grad = net.backward(x, true_label)
    x_adv = np.clip(x + np.float32(cfg.epsilon) * np.sign(grad), 0.0, 1.0).astype(np.float32)
    return _result(x_adv, net, x, true_label, seed_index, iterations=1)


def bim(net: Network, x: np.ndarray, true_label: int, cfg: AttackConfig,
        seed_index: int = -1) -> AdversarialResult:
    """Iterated small gradient-sign steps, re-projected to the epsilon ball
    each step; stops as soon as the label flips."""
    x = np.asarray(x, dtype=np.float32)
    lo = np.maximum(x - np.float32(cfg.epsilon), 0.0)
    hi = np.minimum(x + np.float32(cfg.epsilon), 1.0)
    step = np.float32(cfg.step_size)
    x_adv = x
    iterations = 0
    for _ in range(cfg.bim_steps):
        grad = net.backward(x_adv, true_label)
        x_adv = np.clip(x_adv + step * np.sign(grad), lo, hi).astype(np.float32)
        iterations += 1
        if net.predict_label(x_adv) != int(true_label):
            break
    return _result(x_adv, net, x, true_label, seed_index, iterations=iterations)


def run_attack(net: Network, x: np.ndarray, true_label: int, cfg: AttackConfig,
               seed_index: int = -1) -> AdversarialResult:
    fn = fgsm if cfg.method == "fgsm" else bim
    return fn(net, x, true_label, cfg, seed_index=seed_index)
