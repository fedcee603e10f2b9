import numpy as np
import pytest

import dropforge as df
from dropforge.defenses import (LogitDetector, MutationDetector, SqueezeDetector,
                                calibrate_threshold, evaluate_defense, score_set,
                                squeeze_pixels, Detector)
from dropforge.errors import ConfigError, DatasetError
from dropforge.layers import Dense, Softmax
from dropforge.network import Network
from dropforge.rng import RngStream


def constant_classifier():
    """All inputs map to class 0 (strongly)."""
    layer = Dense(4, 2)
    layer.set_params([np.zeros((4, 2), dtype=np.float32),
                      np.array([5.0, -5.0], dtype=np.float32)])
    return Network([layer, Softmax()], 2, (4,))


class StubDetector(Detector):
    name = "stub"

    def __init__(self, scores, threshold=0.5):
        super().__init__(threshold)
        self.scores = dict(scores)

    def score(self, x, stream=None):
        return self.scores[float(x[0])]


# ------------------------------------------------------------------ mutation

def test_mutation_score_zero_for_constant_classifier():
    net = constant_classifier()
    det = MutationDetector(net, n_mutations=50, noise_eps=0.1, threshold=0.5)
    x = np.array([0.5, 0.5, 0.5, 0.5], dtype=np.float32)
    verdict = det.verdict(x, "c", RngStream(91))
    assert verdict.score == 0.0
    assert not verdict.flagged_adversarial


def test_mutation_threshold_one_never_flags(toy_model, digits_test):
    det = MutationDetector(toy_model, n_mutations=40, noise_eps=0.3, threshold=1.0)
    for i in range(10):
        verdict = det.verdict(digits_test.images[i], str(i), RngStream(92).child(i))
        assert verdict.score <= 1.0
        assert not verdict.flagged_adversarial


def test_mutation_score_deterministic_per_stream(toy_model, digits_test):
    det = MutationDetector(toy_model, n_mutations=30, noise_eps=0.1, threshold=0.5)
    x = digits_test.images[0]
    assert det.score(x, RngStream(93)) == det.score(x, RngStream(93))


def test_mutation_scores_separate_attacks_from_benign(toy_model, digits_train,
                                                      benign_train_pool, fgsm_successes):
    det = MutationDetector(toy_model, n_mutations=60, noise_eps=0.05, threshold=0.5)
    ben = score_set(det, digits_train.images[benign_train_pool[:40]], RngStream(94))
    adv = score_set(det, np.stack([r.image for r in fgsm_successes[:40]]), RngStream(95))
    assert adv.mean() > ben.mean()  # direction of the dispersion gap


def test_mutation_detector_requires_stream(toy_model, digits_test):
    det = MutationDetector(toy_model, threshold=0.5)
    with pytest.raises(ConfigError):
        det.score(digits_test.images[0], None)


# ------------------------------------------------------------------- squeeze

def test_squeeze_rounding_examples():
    assert squeeze_pixels(np.array([0.6], dtype=np.float32), 1)[0] == 1.0
    assert squeeze_pixels(np.array([0.4], dtype=np.float32), 1)[0] == 0.0
    x = np.array([0.0, 1.0, 0.5], dtype=np.float32)
    assert np.array_equal(squeeze_pixels(squeeze_pixels(x, 7), 7), squeeze_pixels(x, 7))


def test_squeeze_score_zero_for_already_quantized_input(toy_model):
    gen = RngStream(96).generator()
    x = squeeze_pixels(gen.random((8, 8, 1)).astype(np.float32), 3)
    det = SqueezeDetector(toy_model, bit_depth=3, threshold=0.5)
    assert det.score(x) == 0.0


def test_squeeze_bit_depth_validated(toy_model):
    with pytest.raises(ConfigError):
        SqueezeDetector(toy_model, bit_depth=0)
    with pytest.raises(ConfigError):
        SqueezeDetector(toy_model, bit_depth=8)


def test_squeeze_scores_separate_attacks_from_benign(toy_model, digits_train,
                                                     benign_train_pool, fgsm_successes):
    det = SqueezeDetector(toy_model, bit_depth=3, threshold=0.5)
    ben = score_set(det, digits_train.images[benign_train_pool[:40]], RngStream(97))
    adv = score_set(det, np.stack([r.image for r in fgsm_successes[:40]]), RngStream(98))
    assert adv.mean() > ben.mean()


# --------------------------------------------------------------------- logit

def separable_logits(n=120, seed=99):
    gen = RngStream(seed).generator()
    benign = gen.normal(0, 0.5, (n // 2, 4)) + np.array([4.0, 0, 0, 0])
    adv = gen.normal(0, 0.5, (n // 2, 4)) + np.array([-4.0, 0, 0, 0])
    feats = np.concatenate([benign, adv]).astype(np.float32)
    labels = np.array([0] * (n // 2) + [1] * (n // 2), dtype=np.int64)
    order = gen.permutation(n)
    return feats[order], labels[order]


def test_logit_detector_perfect_on_separable_data(toy_model):
    feats, labels = separable_logits()
    det = LogitDetector.fit(toy_model, feats, labels, RngStream(100))
    assert det.heldout_accuracy == 1.0


def test_logit_detector_no_signal_matches_majority(toy_model):
    gen = RngStream(101).generator()
    feats = np.ones((100, 4), dtype=np.float32)  # constant features
    labels = np.array([0] * 70 + [1] * 30, dtype=np.int64)
    det = LogitDetector.fit(toy_model, feats, labels, RngStream(102))
    # accuracy equals one class's share of the held-out split
    preds = det.classifier.predict_label_batch(feats)
    assert len(set(preds.tolist())) == 1
    assert 0.5 <= max(det.heldout_accuracy, 1 - det.heldout_accuracy) <= 1.0


def test_logit_detector_label_swap_flips_every_verdict(toy_model):
    feats, labels = separable_logits(seed=103)
    det_a = LogitDetector.fit(toy_model, feats, labels, RngStream(104))
    det_b = LogitDetector.fit(toy_model, feats, 1 - labels, RngStream(104))
    probe = feats[:30]
    pa = det_a.classifier.forward_batch(probe)[:, 1]
    pb = det_b.classifier.forward_batch(probe)[:, 1]
    assert np.all((pa > 0.5) == (pb < 0.5))


def test_logit_detector_rejects_single_class(toy_model):
    feats = np.zeros((10, 4), dtype=np.float32)
    with pytest.raises(DatasetError):
        LogitDetector.fit(toy_model, feats, np.zeros(10, dtype=np.int64), RngStream(105))


# ------------------------------------------------------------------ protocol

def test_threshold_monotonicity(toy_model, digits_test):
    det = SqueezeDetector(toy_model, bit_depth=3, threshold=0.0)
    images = digits_test.images[:30]
    scores = score_set(det, images, RngStream(106))
    flagged_sets = []
    for t in (0.0, 0.1, 0.3, 0.7, 1.5):
        flagged_sets.append({i for i, s in enumerate(scores) if s > t})
    for small, large in zip(flagged_sets[1:], flagged_sets):
        assert small <= large  # raising threshold never adds flags


def test_calibrate_threshold_maximizes_combined_success():
    ben = [0.0, 0.1, 0.2]
    adv = [0.3, 0.4, 0.5]
    t = calibrate_threshold(ben, adv)
    assert 0.2 <= t < 0.3
    # perfect split: all benign pass, all adversarial flagged
    assert all(b <= t for b in ben) and all(a > t for a in adv)


def test_calibrate_threshold_on_overlapping_scores():
    ben = [0.1, 0.2, 0.6]
    adv = [0.3, 0.7, 0.8]
    t = calibrate_threshold(ben, adv)
    success = (sum(b <= t for b in ben) + sum(a > t for a in adv)) / 6
    for other in np.linspace(-0.5, 1.5, 400):
        alt = (sum(b <= other for b in ben) + sum(a > other for a in adv)) / 6
        assert success >= alt - 1e-12


def test_evaluate_defense_with_perfect_stub():
    scores = {0.0: 0.0, 1.0: 1.0}
    det = StubDetector(scores, threshold=0.5)
    ben = np.zeros((6, 1), dtype=np.float32)
    adv = np.ones((4, 1), dtype=np.float32)
    report, verdicts = evaluate_defense(det, ben, adv, RngStream(107))
    assert report.success_rate_benign == 1.0
    assert report.success_rate_adversarial == 1.0
    assert report.success_rate_combined == 1.0
    assert len(verdicts) == 10


def test_evaluate_defense_rates_match_verdict_list():
    det = StubDetector({0.0: 0.9, 1.0: 0.2}, threshold=0.5)  # inverted detector
    ben = np.zeros((5, 1), dtype=np.float32)
    adv = np.ones((5, 1), dtype=np.float32)
    report, verdicts = evaluate_defense(det, ben, adv, RngStream(108))
    ok_ben = sum(1 for v in verdicts[:5] if not v.flagged_adversarial)
    ok_adv = sum(1 for v in verdicts[5:] if v.flagged_adversarial)
    assert report.success_rate_benign == ok_ben / 5
    assert report.success_rate_adversarial == ok_adv / 5
    assert report.success_rate_combined == (ok_ben + ok_adv) / 10


def test_evaluate_defense_rejects_empty_sets(toy_model):
    det = SqueezeDetector(toy_model, bit_depth=3, threshold=0.5)
    with pytest.raises(DatasetError):
        evaluate_defense(det, np.zeros((0, 8, 8, 1)), np.zeros((1, 8, 8, 1)), RngStream(0))
