"""Detection-style defenses and the success-rate protocol.

Every detector reduces an input to a scalar score and flags it as adversarial
when the score exceeds the detector's threshold, so raising a threshold can
only shrink the flagged set.  Success counts a benign input when it is NOT
flagged and an adversarial input when it IS flagged.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetError
from .layers import Dense, Softmax
from .network import Network
from .rng import RngStream
from .train import sgd_train

__all__ = [
    "DetectorVerdict", "DefenseReport",
    "MutationDetector", "SqueezeDetector", "LogitDetector",
    "mutation_detector", "squeeze_detector", "logit_binary_detector",
    "squeeze_pixels", "calibrate_threshold", "evaluate_defense",
    "emit_defense_report",
]


@dataclass
class DetectorVerdict:
    sample_id: str
    score: float
    flagged_adversarial: bool
    detector: str
    threshold: float


@dataclass
class DefenseReport:
    detector: str
    dataset: str
    n_benign: int
    n_adversarial: int
    success_rate_benign: float
    success_rate_adversarial: float
    success_rate_combined: float
    threshold: float


class Detector:
    name = "detector"

    def __init__(self, threshold: float):
        self.threshold = float(threshold)

    def score(self, x: np.ndarray, stream: RngStream | None = None) -> float:
        raise NotImplementedError

    def verdict(self, x: np.ndarray, sample_id: str = "",
                stream: RngStream | None = None) -> DetectorVerdict:
        score = self.score(x, stream)
        return DetectorVerdict(sample_id=sample_id, score=score,
                               flagged_adversarial=score > self.threshold,
                               detector=self.name, threshold=self.threshold)


class MutationDetector(Detector):
    """Label-change ratio under random input noise (a dropout-free analog of
    the stochastic-disagreement metric)."""

    name = "mutation"

    def __init__(self, net: Network, n_mutations: int = 100, noise_eps: float = 0.05,
                 threshold: float = 0.5):
        super().__init__(threshold)
        if n_mutations < 1 or noise_eps <= 0:
            raise ConfigError("mutation detector needs n_mutations >= 1 and noise_eps > 0")
        self.net = net
        self.n_mutations = int(n_mutations)
        self.noise_eps = float(noise_eps)

    def score(self, x: np.ndarray, stream: RngStream | None = None) -> float:
        if stream is None:
            raise ConfigError("mutation detector needs an rng stream")
        x = np.asarray(x, dtype=np.float32)
        base = self.net.predict_label(x)
        gen = stream.generator()
        noise = gen.uniform(-self.noise_eps, self.noise_eps,
                            size=(self.n_mutations,) + x.shape)
        noised = np.clip(x[None] + noise, 0.0, 1.0).astype(np.float32)
        labels = self.net.predict_label_batch(noised)
        return float(np.mean(labels != base))


class SqueezeDetector(Detector):
    """L1 prediction shift after quantizing pixels to ``bit_depth`` bits."""

    name = "squeeze"

    def __init__(self, net: Network, bit_depth: int = 3, threshold: float = 0.5):
        super().__init__(threshold)
        if not 1 <= bit_depth <= 7:
            raise ConfigError(f"bit_depth must lie in [1, 7], got {bit_depth}")
        self.net = net
        self.bit_depth = int(bit_depth)

    def score(self, x: np.ndarray, stream: RngStream | None = None) -> float:
        x = np.asarray(x, dtype=np.float32)
        p = self.net.forward(x).astype(np.float64)
        p_squeezed = self.net.forward(squeeze_pixels(x, self.bit_depth)).astype(np.float64)
        return float(np.abs(p - p_squeezed).sum())


def squeeze_pixels(x: np.ndarray, bit_depth: int) -> np.ndarray:
    levels = np.float32(2 ** bit_depth - 1)
    return (np.round(np.asarray(x, dtype=np.float32) * levels) / levels).astype(np.float32)


class LogitDetector(Detector):
    """Logistic regression over final-layer logits, trained with the shared
    SGD trainer; flags when the predicted adversarial probability exceeds the
    decision threshold (0.5 by default)."""

    name = "logit"

    def __init__(self, net: Network, classifier: Network, heldout_accuracy: float,
                 threshold: float = 0.5):
        super().__init__(threshold)
        self.net = net
        self.classifier = classifier
        self.heldout_accuracy = heldout_accuracy

    @classmethod
    def fit(cls, net: Network, logit_features: np.ndarray, labels: np.ndarray,
            rng: RngStream, epochs: int = 200, lr: float = 0.05,
            heldout_fraction: float = 0.2, threshold: float = 0.5) -> "LogitDetector":
        features = np.asarray(logit_features, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or len(features) != len(labels):
            raise DatasetError("logit detector needs [n, n_classes] features with n labels")
        if len(np.unique(labels)) < 2:
            raise DatasetError("logit detector training set must contain both classes")

        order = rng.child(0).generator().permutation(len(features))
        n_holdout = max(1, int(round(heldout_fraction * len(features))))
        holdout, train = order[:n_holdout], order[n_holdout:]
        if len(np.unique(labels[train])) < 2:
            raise DatasetError("training split lost one class; provide more data")

        head = Dense(features.shape[1], 2)  # zero init keeps label swap symmetric
        model = Network([head, Softmax()], class_count=2, input_shape=(features.shape[1],))
        trained, _ = sgd_train(model, features[train], labels[train],
                               epochs=epochs, lr=lr, rng=rng.child(1))
        pred = trained.predict_label_batch(features[holdout])
        heldout_acc = float(np.mean(pred == labels[holdout]))
        return cls(net, trained, heldout_acc, threshold)

    def score(self, x: np.ndarray, stream: RngStream | None = None) -> float:
        logits = self.net.logits(np.asarray(x, dtype=np.float32))
        return float(self.classifier.forward(logits.astype(np.float32))[1])


# -------------------------------------------------- spec-shaped entry points

def mutation_detector(net: Network, x: np.ndarray, n_mutations: int, noise_eps: float,
                      threshold: float, rng: RngStream,
                      sample_id: str = "") -> DetectorVerdict:
    return MutationDetector(net, n_mutations, noise_eps, threshold).verdict(x, sample_id, rng)


def squeeze_detector(net: Network, x: np.ndarray, bit_depth: int, threshold: float,
                     sample_id: str = "") -> DetectorVerdict:
    return SqueezeDetector(net, bit_depth, threshold).verdict(x, sample_id)


def logit_binary_detector(net: Network, train_features: np.ndarray, train_labels: np.ndarray,
                          rng: RngStream, **kwargs) -> LogitDetector:
    return LogitDetector.fit(net, train_features, train_labels, rng, **kwargs)


# ------------------------------------------------------------------ protocol

def calibrate_threshold(benign_scores, adversarial_scores) -> float:
    """Sweep candidate thresholds (the observed scores) and return the one
    maximizing combined success; ties go to the lowest threshold."""
    ben = np.asarray(benign_scores, dtype=np.float64)
    adv = np.asarray(adversarial_scores, dtype=np.float64)
    if ben.size == 0 or adv.size == 0:
        raise DatasetError("calibration needs both benign and adversarial scores")
    candidates = np.unique(np.concatenate([ben, adv]))
    candidates = np.concatenate([[candidates[0] - 1.0], candidates])
    best_t, best_success = candidates[0], -1.0
    total = ben.size + adv.size
    for t in candidates:
        success = (np.sum(ben <= t) + np.sum(adv > t)) / total
        if success > best_success:
            best_t, best_success = t, success
    return float(best_t)


def _map_samples(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def score_set(detector: Detector, images: np.ndarray, rng: RngStream,
              jobs: int = 1) -> np.ndarray:
    """Per-sample scores with per-sample child streams (order independent)."""
    scores = _map_samples(lambda pair: detector.score(pair[1], rng.child(pair[0])),
                          list(enumerate(images)), jobs)
    return np.array(scores, dtype=np.float64)


def evaluate_defense(detector: Detector, benign_images: np.ndarray,
                     adversarial_images: np.ndarray, rng: RngStream,
                     dataset: str = "",
                     jobs: int = 1) -> tuple[DefenseReport, list[DetectorVerdict]]:
    if len(benign_images) == 0 or len(adversarial_images) == 0:
        raise DatasetError("evaluate_defense needs non-empty benign and adversarial sets")
    verdicts = _map_samples(
        lambda pair: detector.verdict(pair[1], f"benign-{pair[0]}", rng.child(0).child(pair[0])),
        list(enumerate(benign_images)), jobs)
    verdicts += _map_samples(
        lambda pair: detector.verdict(pair[1], f"adv-{pair[0]}", rng.child(1).child(pair[0])),
        list(enumerate(adversarial_images)), jobs)

    n_ben, n_adv = len(benign_images), len(adversarial_images)
    ok_ben = sum(1 for v in verdicts[:n_ben] if not v.flagged_adversarial)
    ok_adv = sum(1 for v in verdicts[n_ben:] if v.flagged_adversarial)
    report = DefenseReport(
        detector=detector.name, dataset=dataset,
        n_benign=n_ben, n_adversarial=n_adv,
        success_rate_benign=ok_ben / n_ben,
        success_rate_adversarial=ok_adv / n_adv,
        success_rate_combined=(ok_ben + ok_adv) / (n_ben + n_adv),
        threshold=detector.threshold,
    )
    return report, verdicts


DEFENSE_COLUMNS = ("detector", "dataset", "n_benign", "n_adv",
                   "success_benign", "success_adv", "success_combined", "threshold")


def emit_defense_report(reports: list[DefenseReport], path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DEFENSE_COLUMNS)
        for r in reports:
            writer.writerow([r.detector, r.dataset, r.n_benign, r.n_adversarial,
                             repr(float(r.success_rate_benign)),
                             repr(float(r.success_rate_adversarial)),
                             repr(float(r.success_rate_combined)),
                             repr(float(r.threshold))])
    os.replace(tmp, path)
