"""Uncertainty metrics from one deterministic pass plus N MC-dropout passes.

Five per-input quantities:

* ``pcs``  - gap between the top-two class probabilities of the deterministic
  pass (distance-to-boundary proxy).
* ``vr``   - 1 minus the frequency of the dominant label across the
  stochastic passes.
* ``vro``  - 1 minus the frequency with which stochastic passes agree with
  the deterministic prediction.
* ``pe``   - entropy of the mean stochastic distribution, in nats.
* ``mi``   - ``pe`` minus the mean per-pass entropy (epistemic proxy).

Inputs are then placed in the (pcs, vro) plane and categorized into the four
corner patterns HL / LH / LL / HH, with MID for the gap between thresholds.
All accumulation is in 64-bit regardless of activation precision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .network import Network
from .rng import RngStream

__all__ = [
    "McRecord", "UncertaintyProfile", "PatternThresholds", "PatternLabel",
    "pcs", "mc_execute", "vr", "vro", "pe", "mi", "profile",
    "categorize", "categorize_values", "PASS_COUNT_PRESETS",
]

# stochastic pass counts that give stable dispersion estimates per input scale
PASS_COUNT_PRESETS = {"low-res": 50, "mid-res": 100, "high-res": 100}


def _xlogx(p: np.ndarray) -> np.ndarray:
    # 0 * log(0) := 0 by continuity
    return np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)


def pcs(distribution: np.ndarray) -> float:
    """Top-1 minus top-2 probability of a single predictive distribution."""
    p = np.asarray(distribution, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ConfigError(f"pcs needs a probability vector over >= 2 classes, got shape {p.shape}")
    top2 = np.partition(p, -2)[-2:]
    return float(top2[1] - top2[0])


@dataclass
class McRecord:
    """Stochastic distributions and labels, plus the deterministic result."""

    distributions: np.ndarray  # [passes, n_classes]
    labels: np.ndarray  # [passes]
    original_label: int
    original_distribution: np.ndarray | None = None

    def __post_init__(self):
        self.distributions = np.asarray(self.distributions)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.distributions.ndim != 2 or len(self.distributions) != len(self.labels):
            raise ConfigError("record needs matching [passes, classes] distributions and labels")
        if self.passes < 1:
            raise ConfigError("record needs at least one stochastic pass")

    @property
    def passes(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return self.distributions.shape[1]

    @classmethod
    def from_distributions(cls, distributions, original_label: int,
                           original_distribution=None) -> "McRecord":
        distributions = np.asarray(distributions)
        return cls(distributions, np.argmax(distributions, axis=1), int(original_label),
                   original_distribution)

    @classmethod
    def from_labels(cls, labels, n_classes: int, original_label: int) -> "McRecord":
        """Build a record whose passes are one-hot at the given labels."""
        labels = np.asarray(labels, dtype=np.int64)
        dists = np.zeros((len(labels), n_classes), dtype=np.float64)
        dists[np.arange(len(labels)), labels] = 1.0
        return cls(dists, labels, int(original_label))


def mc_execute(net: Network, x: np.ndarray, passes: int, rng: RngStream,
               forced_masks: dict[int, np.ndarray] | None = None) -> McRecord:
    """Run the requested number of stochastic passes (mask draws are
    pass-major, so the record is a pure function of its arguments)."""
    if passes < 1:
        raise ConfigError(f"passes must be >= 1, got {passes}")
    x = np.asarray(x, dtype=np.float32)
    original_distribution = net.forward(x)
    masks = net.sample_masks(rng.generator(), passes, forced_masks)
    xs = np.broadcast_to(x, (passes,) + x.shape)
    dists = net.forward_mc_batch(xs, masks)
    return McRecord(
        distributions=dists,
        labels=np.argmax(dists, axis=1),
        original_label=int(np.argmax(original_distribution)),
        original_distribution=original_distribution,
    )


def dominant_label(rec: McRecord) -> int:
    """Most frequent MC label; frequency ties break to the lowest index."""
    counts = np.bincount(rec.labels, minlength=rec.n_classes)
    return int(np.argmax(counts))


def vr(rec: McRecord) -> float:
    counts = np.bincount(rec.labels, minlength=rec.n_classes)
    return 1.0 - float(counts[dominant_label(rec)]) / rec.passes


def vro(rec: McRecord) -> float:
    return 1.0 - float(np.sum(rec.labels == rec.original_label)) / rec.passes


def pe(rec: McRecord) -> float:
    mean_dist = rec.distributions.astype(np.float64).mean(axis=0)
    return float(-np.sum(_xlogx(mean_dist)))


def mi(rec: McRecord) -> float:
    per_pass = np.sum(_xlogx(rec.distributions.astype(np.float64))) / rec.passes
    value = pe(rec) + float(per_pass)
    # concavity guarantees >= 0; tolerate only rounding-sized negatives
    return max(value, 0.0) if value > -1e-9 else value


@dataclass
class UncertaintyProfile:
    pcs: float
    vr: float
    vro: float
    pe: float
    mi: float
    dominant_label: int
    original_label: int
    passes: int


def profile(net: Network, x: np.ndarray, passes: int, rng: RngStream,
            forced_masks: dict[int, np.ndarray] | None = None) -> UncertaintyProfile:
    """All five metrics for one input from 1 deterministic + N stochastic passes."""
    rec = mc_execute(net, x, passes, rng, forced_masks)
    return UncertaintyProfile(
        pcs=pcs(rec.original_distribution),
        vr=vr(rec),
        vro=vro(rec),
        pe=pe(rec),
        mi=mi(rec),
        dominant_label=dominant_label(rec),
        original_label=rec.original_label,
        passes=rec.passes,
    )


@dataclass(frozen=True)
class PatternThresholds:
    """Categorization bounds: low/high PCS and low/high VRO."""

    p_low: float = 0.3
    p_high: float = 0.7
    v_low: float = 0.4
    v_high: float = 0.6

    def __post_init__(self):
        if not (self.p_low < self.p_high and self.v_low < self.v_high):
            raise ConfigError(f"thresholds must satisfy p_low < p_high and v_low < v_high: {self}")


class PatternLabel(str, enum.Enum):
    HL = "HL"  # high confidence, stable under dropout (typical benign)
    LH = "LH"  # low confidence, unstable (typical attack output)
    LL = "LL"
    HH = "HH"
    MID = "MID"  # between thresholds on at least one axis


def categorize_values(pcs_value: float, vro_value: float,
                      thresholds: PatternThresholds = PatternThresholds()) -> PatternLabel:
    high_p = pcs_value > thresholds.p_high
    low_p = pcs_value < thresholds.p_low
    high_v = vro_value > thresholds.v_high
    low_v = vro_value < thresholds.v_low
    if high_p and low_v:
        return PatternLabel.HL
    if low_p and high_v:
        return PatternLabel.LH
    if low_p and low_v:
        return PatternLabel.LL
    if high_p and high_v:
        return PatternLabel.HH
    return PatternLabel.MID


def categorize(prof: UncertaintyProfile,
               thresholds: PatternThresholds = PatternThresholds()) -> PatternLabel:
    return categorize_values(prof.pcs, prof.vro, thresholds)
