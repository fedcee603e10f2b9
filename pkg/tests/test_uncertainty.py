import math

import numpy as np
import pytest

import dropforge as df
from dropforge.errors import ConfigError
from dropforge.rng import RngStream
from dropforge.uncertainty import (McRecord, PatternLabel, PatternThresholds, categorize,
                                   categorize_values, dominant_label, mc_execute, mi, pcs,
                                   pe, profile, vr, vro)


def random_record(gen, n_classes=3, passes=10):
    dists = gen.random((passes, n_classes)) + 1e-3
    dists /= dists.sum(axis=1, keepdims=True)
    return McRecord.from_distributions(dists, original_label=int(gen.integers(n_classes)))


# ------------------------------------------------------------------- pcs

def test_pcs_identities():
    assert pcs([1.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-9)
    assert pcs([0.5, 0.5]) == pytest.approx(0.0, abs=1e-9)
    assert pcs([0.6, 0.3, 0.1]) == pytest.approx(0.3, abs=1e-9)


def test_pcs_requires_two_classes():
    with pytest.raises(ConfigError):
        pcs([1.0])


def test_pcs_permutation_invariance():
    gen = RngStream(51).generator()
    for _ in range(200):
        p = gen.random(6)
        p /= p.sum()
        assert pcs(p) == pytest.approx(pcs(p[gen.permutation(6)]), abs=1e-12)


# ------------------------------------------------------------------- vr/vro

def test_vr_identities():
    rec = McRecord.from_labels([2, 2, 2, 2], n_classes=4, original_label=2)
    assert vr(rec) == pytest.approx(0.0, abs=1e-9)
    rec = McRecord.from_labels([0, 0, 0, 1], n_classes=2, original_label=0)
    assert vr(rec) == pytest.approx(0.25, abs=1e-9)


def test_vr_tie_goes_to_lowest_label():
    rec = McRecord.from_labels([3, 3, 1, 1], n_classes=5, original_label=1)
    assert dominant_label(rec) == 1
    assert vr(rec) == pytest.approx(0.5, abs=1e-9)


def test_vro_identities():
    rec = McRecord.from_labels([0, 0, 0, 0], n_classes=2, original_label=0)
    assert vro(rec) == pytest.approx(0.0, abs=1e-9)
    rec = McRecord.from_labels([0, 1, 0, 1], n_classes=2, original_label=0)
    assert vro(rec) == pytest.approx(0.5, abs=1e-9)


def test_vro_and_vr_disagree_when_original_was_wrong():
    # every stochastic pass picks class b while the deterministic pass said a
    rec = McRecord.from_labels([1, 1, 1, 1], n_classes=2, original_label=0)
    assert vr(rec) == pytest.approx(0.0, abs=1e-9)
    assert vro(rec) == pytest.approx(1.0, abs=1e-9)


def test_vro_zero_iff_all_labels_match_original():
    gen = RngStream(52).generator()
    for _ in range(300):
        labels = gen.integers(0, 3, size=8)
        rec = McRecord.from_labels(labels, n_classes=3, original_label=int(gen.integers(3)))
        assert (vro(rec) == 0.0) == bool(np.all(labels == rec.original_label))


# ------------------------------------------------------------------- pe/mi

def test_pe_identities():
    one_hot = McRecord.from_labels([1, 1, 1], n_classes=4, original_label=1)
    assert pe(one_hot) == pytest.approx(0.0, abs=1e-9)

    uniform = McRecord.from_distributions(np.full((5, 10), 0.1), original_label=0)
    assert pe(uniform) == pytest.approx(math.log(10), abs=1e-9)

    flip = McRecord.from_distributions([[1.0, 0.0], [0.0, 1.0]], original_label=0)
    assert pe(flip) == pytest.approx(math.log(2), abs=1e-9)


def test_mi_identities():
    same = McRecord.from_distributions([[0.2, 0.8]] * 6, original_label=1)
    assert mi(same) == pytest.approx(0.0, abs=1e-9)

    flip = McRecord.from_distributions([[1.0, 0.0], [0.0, 1.0]], original_label=0)
    assert mi(flip) == pytest.approx(math.log(2), abs=1e-9)


def test_mi_matches_direct_two_loop_oracle():
    gen = RngStream(53).generator()
    for _ in range(50):
        rec = random_record(gen, n_classes=3, passes=7)
        d = rec.distributions
        # oracle: H(mean) - mean(H), explicit loops
        mean = [sum(d[k][i] for k in range(7)) / 7 for i in range(3)]
        h_mean = -sum(p * math.log(p) for p in mean if p > 0)
        mean_h = sum(-sum(d[k][i] * math.log(d[k][i]) for i in range(3) if d[k][i] > 0)
                     for k in range(7)) / 7
        assert mi(rec) == pytest.approx(h_mean - mean_h, abs=1e-9)


def test_metric_inequalities_on_randomized_records():
    gen = RngStream(54).generator()
    for _ in range(1000):
        n_classes = int(gen.integers(2, 8))
        passes = int(gen.integers(1, 30))
        rec = random_record(gen, n_classes=n_classes, passes=passes)
        assert vr(rec) <= vro(rec) + 1e-12
        assert -1e-9 <= mi(rec) <= pe(rec) + 1e-9
        assert pe(rec) <= math.log(n_classes) + 1e-9


# --------------------------------------------------------------- mc_execute

def test_mc_execute_is_deterministic(toy_model, digits_test):
    x = digits_test.images[0]
    a = mc_execute(toy_model, x, 10, RngStream(55))
    b = mc_execute(toy_model, x, 10, RngStream(55))
    assert np.array_equal(a.distributions, b.distributions)
    assert np.array_equal(a.labels, b.labels)
    assert a.original_label == b.original_label


def test_mc_execute_single_pass():
    net = df.fixture_models()["mlp"]
    x = RngStream(56).generator().random(4).astype(np.float32)
    rec = mc_execute(net, x, 1, RngStream(57))
    assert rec.passes == 1
    assert rec.labels[0] == int(np.argmax(rec.distributions[0]))


def test_mc_execute_forced_all_keep_masks():
    net = df.fixture_models()["mlp"]
    idx = net.dropout_indices[0]
    keep = np.full(net.layer_in_shapes[idx], 1.0 / (1.0 - 0.5), dtype=np.float32)
    x = RngStream(58).generator().random(4).astype(np.float32)
    rec = mc_execute(net, x, 5, RngStream(59), forced_masks={idx: keep})
    # all passes identical and equal to the doubled-activation propagation
    expected = net.forward_mc(x, RngStream(0), forced_masks={idx: keep})
    for k in range(5):
        assert np.allclose(rec.distributions[k], expected, atol=1e-6)


def test_profile_bundles_consistent_metrics(toy_model, digits_test):
    x = digits_test.images[3]
    prof = profile(toy_model, x, 20, RngStream(60))
    rec = mc_execute(toy_model, x, 20, RngStream(60))
    assert prof.pcs == pytest.approx(pcs(rec.original_distribution), abs=1e-12)
    assert prof.vr == pytest.approx(vr(rec), abs=1e-12)
    assert prof.vro == pytest.approx(vro(rec), abs=1e-12)
    assert prof.pe == pytest.approx(pe(rec), abs=1e-12)
    assert prof.mi == pytest.approx(mi(rec), abs=1e-12)
    assert prof.passes == 20
    assert prof is not None and prof == profile(toy_model, x, 20, RngStream(60))


def test_profile_with_forced_keep_masks_has_zero_dispersion():
    net = df.fixture_models()["conv"]
    idx = net.dropout_indices[0]
    keep = np.full(net.layer_in_shapes[idx], 2.0, dtype=np.float32)
    x = RngStream(61).generator().random((8, 8, 1)).astype(np.float32)
    prof = profile(net, x, 8, RngStream(62), forced_masks={idx: keep})
    assert prof.vr == 0.0
    assert prof.mi == pytest.approx(0.0, abs=1e-9)


def test_vr_at_most_vro_over_mc_records(toy_model, digits_test):
    for i in range(20):
        rec = mc_execute(toy_model, digits_test.images[i], 15, RngStream(63).child(i))
        assert vr(rec) <= vro(rec) + 1e-12


# -------------------------------------------------------------- categorize

def test_categorize_examples():
    thr = PatternThresholds()
    assert categorize_values(0.990, 0.312, thr) == PatternLabel.HL
    assert categorize_values(0.5, 0.5, thr) == PatternLabel.MID
    assert categorize_values(0.2, 0.7, thr) == PatternLabel.LH
    assert categorize_values(0.2, 0.3, thr) == PatternLabel.LL
    assert categorize_values(0.9, 0.7, thr) == PatternLabel.HH


def test_categorize_boundaries_are_strict():
    thr = PatternThresholds()
    assert categorize_values(0.7, 0.3, thr) == PatternLabel.MID  # pcs not > 0.7
    assert categorize_values(0.8, 0.4, thr) == PatternLabel.MID  # vro not < 0.4
    assert categorize_values(0.3, 0.6, thr) == PatternLabel.MID


def test_four_regions_are_pairwise_disjoint_and_total():
    gen = RngStream(64).generator()
    thr = PatternThresholds()
    for _ in range(2000):
        label = categorize_values(float(gen.random()), float(gen.random()), thr)
        assert label in PatternLabel


def test_custom_thresholds_validated():
    with pytest.raises(ConfigError):
        PatternThresholds(p_low=0.8, p_high=0.7)


def test_categorize_uses_profile_fields(toy_model, digits_test):
    prof = profile(toy_model, digits_test.images[0], 10, RngStream(65))
    assert categorize(prof) == categorize_values(prof.pcs, prof.vro)
