import json

import numpy as np
import pytest

import dropforge as df
from dropforge.errors import ConfigError
from dropforge.ga import (GaConfig, PopulationStats, evolve, fitness_hh, fitness_hl_ae,
                          fitness_lh_be, fitness_ll, ga_config_to_dict, init_population,
                          load_ga_config, objective_met)
from dropforge.rng import RngStream
from dropforge.uncertainty import PatternThresholds, UncertaintyProfile

THR = PatternThresholds()


def prof(pcs, vro, vr=None):
    return UncertaintyProfile(pcs=pcs, vr=vr if vr is not None else vro, vro=vro,
                              pe=0.0, mi=0.0, dominant_label=0, original_label=0,
                              passes=10)


def stats(min_pcs, max_pcs, any_adv=False):
    return PopulationStats(min_pcs=min_pcs, max_pcs=max_pcs, any_adversarial=any_adv)


# ------------------------------------------------- piecewise fitness table
# every branch of every objective, hand-computed expected values

LL_CASES = [
    (prof(0.8, 0.5), False, stats(0.4, 0.9), -0.8),     # branch 1: min pcs > p_low
    (prof(0.2, 0.5), False, stats(0.1, 0.9), 0.5),      # branch 2, pcs below p_low
    (prof(0.4, 0.5), False, stats(0.1, 0.9), -0.5),     # branch 2, pcs above p_low
]

HH_CASES = [
    (prof(0.6, 0.5), False, stats(0.1, 0.65), 0.6),     # branch 1: max pcs < p_high
    (prof(0.9, 0.3), False, stats(0.1, 0.9), 1.3),      # branch 2, pcs above p_high
    (prof(0.5, 0.9), False, stats(0.1, 0.9), 0.9),      # branch 2, pcs below p_high
]

HL_CASES = [
    (prof(0.9, 0.5), False, stats(0.1, 0.9, any_adv=False), -0.9),  # branch 1: all benign
    (prof(0.5, 0.5), True, stats(0.1, 0.65, any_adv=True), 1.5),    # branch 2, adversarial
    (prof(0.6, 0.5), False, stats(0.1, 0.65, any_adv=True), 0.6),   # branch 2, benign
    (prof(0.8, 0.2), True, stats(0.1, 0.9, any_adv=True), 1.8),     # branch 3, adv + high pcs
    (prof(0.5, 0.4), True, stats(0.1, 0.9, any_adv=True), 0.6),     # branch 3, adv, mid pcs
    (prof(0.8, 0.2), False, stats(0.1, 0.9, any_adv=True), 0.8),    # branch 3, benign
]

LH_CASES = [
    (prof(0.9, 0.5), False, stats(0.4, 0.9), 0.1),      # branch 1, benign
    (prof(0.9, 0.5), True, stats(0.4, 0.9), -0.9),      # branch 1, adversarial
    (prof(0.2, 0.7), False, stats(0.1, 0.9), 2.7),      # branch 2, benign low pcs
    (prof(0.2, 0.7), True, stats(0.1, 0.9), 1.7),       # branch 2, adversarial
    (prof(0.5, 0.7), False, stats(0.1, 0.9), 1.7),      # branch 2, pcs not below p_low
]


@pytest.mark.parametrize("p,adv,st,expected", LL_CASES)
def test_fitness_ll_branches(p, adv, st, expected):
    assert fitness_ll(p, adv, st, THR) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("p,adv,st,expected", HH_CASES)
def test_fitness_hh_branches(p, adv, st, expected):
    assert fitness_hh(p, adv, st, THR) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("p,adv,st,expected", HL_CASES)
def test_fitness_hl_ae_branches(p, adv, st, expected):
    assert fitness_hl_ae(p, adv, st, THR) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("p,adv,st,expected", LH_CASES)
def test_fitness_lh_be_branches(p, adv, st, expected):
    assert fitness_lh_be(p, adv, st, THR) == pytest.approx(expected, abs=1e-12)


def test_lh_dispersion_switch_uses_vr():
    p = prof(0.2, 0.7, vr=0.4)
    st = stats(0.1, 0.9)
    assert fitness_lh_be(p, False, st, THR, dispersion="vro") == pytest.approx(2.7, abs=1e-12)
    assert fitness_lh_be(p, False, st, THR, dispersion="vr") == pytest.approx(2.4, abs=1e-12)


# ------------------------------------------------------------ objective_met

def test_objective_met_examples():
    assert objective_met(prof(0.2, 0.3), False, "LL", THR)
    assert not objective_met(prof(0.9, 0.2), False, "HL_AE", THR)  # benign
    assert objective_met(prof(0.9, 0.2), True, "HL_AE", THR)
    assert objective_met(prof(0.2, 0.7), False, "LH_BE", THR)
    assert not objective_met(prof(0.2, 0.7), True, "LH_BE", THR)
    assert objective_met(prof(0.8, 0.7), False, "HH", THR)
    assert not objective_met(prof(0.5, 0.5), False, "LL", THR)


# --------------------------------------------------------------- population

def test_init_population_respects_ball_and_range():
    cfg = GaConfig(population_size=30, linf_radius=0.3, seed=1)
    seed_image = np.zeros((8, 8, 1), dtype=np.float32)
    for run in range(5):
        images = init_population(seed_image, cfg, RngStream(run))
        assert len(images) == 30
        for img in images:
            assert img.min() >= 0.0 and img.max() <= 0.3 + 1e-7  # zero seed: clip to [0, r]
            assert np.max(np.abs(img - seed_image)) <= 0.3 + 1e-6


def test_init_population_deterministic():
    cfg = GaConfig(population_size=10, seed=5)
    seed_image = RngStream(70).generator().random((8, 8, 1)).astype(np.float32)
    a = init_population(seed_image, cfg, RngStream(9))
    b = init_population(seed_image, cfg, RngStream(9))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


# ------------------------------------------------------------------ configs

def test_ga_config_validation():
    with pytest.raises(ConfigError):
        GaConfig(population_size=1)
    with pytest.raises(ConfigError):
        GaConfig(crossover_rate=0.0)
    with pytest.raises(ConfigError):
        GaConfig(linf_radius=1.5)
    with pytest.raises(ConfigError):
        GaConfig(target_type="XX")
    with pytest.raises(ConfigError):
        GaConfig(elite_count=100, population_size=100)


def test_ga_config_json_round_trip(tmp_path):
    cfg = GaConfig(population_size=40, mc_passes=16, target_type="HH",
                   thresholds=PatternThresholds(0.2, 0.8, 0.3, 0.7), seed=11)
    path = tmp_path / "ga.json"
    path.write_text(json.dumps(ga_config_to_dict(cfg)))
    loaded = load_ga_config(str(path))
    assert loaded == cfg


def test_ga_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "ga.json"
    path.write_text('{"population_size": 10, "wat": 3}')
    with pytest.raises(ConfigError, match="wat"):
        load_ga_config(str(path))


# -------------------------------------------------------------------- evolve

SMALL = dict(population_size=16, max_iterations=8, mc_passes=8, tournament_size=3)


def _benign_seed(net, images, labels):
    pred = net.predict_label_batch(images)
    for i in range(len(images)):
        if pred[i] == labels[i]:
            return images[i], int(labels[i])
    raise AssertionError("no benign seed found")


def test_evolve_requires_benign_seed(toy_model, digits_test):
    pred = toy_model.predict_label_batch(digits_test.images)
    bad = next(i for i in range(len(digits_test)) if pred[i] != digits_test.labels[i])
    with pytest.raises(ConfigError, match="benign"):
        evolve(toy_model, digits_test.images[bad], int(digits_test.labels[bad]),
               GaConfig(target_type="LL", **SMALL))


def test_evolve_reports_trace_and_feasibility(toy_model, digits_test):
    x, y = _benign_seed(toy_model, digits_test.images, digits_test.labels)
    cfg = GaConfig(target_type="LL", seed=3, **SMALL)
    seen = []

    def check(generation, population):
        for ind in population.individuals:
            assert np.max(np.abs(ind.image - x)) <= cfg.linf_radius + 1e-6
            assert ind.image.min() >= 0.0 and ind.image.max() <= 1.0
            assert ind.profile is not None
        seen.append(generation)

    report = evolve(toy_model, x, y, cfg, on_generation=check)
    assert seen == list(range(report.generations_run))
    assert len(report.best_fitness_trace) == report.generations_run
    assert report.returned()
    for ind in report.returned():
        assert np.max(np.abs(ind.image - x)) <= cfg.linf_radius + 1e-6


def test_evolve_monotone_best_fitness_with_elitism(toy_model, digits_test):
    # elitism guarantees a non-decreasing best fitness while the piecewise
    # fitness stays in one branch; branch switches change the value function
    x, y = _benign_seed(toy_model, digits_test.images, digits_test.labels)
    for target in ("LL", "HH", "HL_AE", "LH_BE"):
        cfg = GaConfig(target_type=target, seed=4, elite_count=1, **SMALL)
        report = evolve(toy_model, x, y, cfg)
        trace, regimes = report.best_fitness_trace, report.regime_trace
        assert len(trace) == len(regimes)
        for (a, ra), (b, rb) in zip(zip(trace, regimes), zip(trace[1:], regimes[1:])):
            if ra == rb:
                assert b >= a - 1e-12


def test_evolve_bit_exact_reproducibility(toy_model, digits_test):
    x, y = _benign_seed(toy_model, digits_test.images, digits_test.labels)
    cfg = GaConfig(target_type="LH_BE", seed=12, **SMALL)
    a = evolve(toy_model, x, y, cfg)
    b = evolve(toy_model, x, y, cfg)
    assert a.best_fitness_trace == b.best_fitness_trace
    assert a.generations_run == b.generations_run
    assert len(a.satisfied) == len(b.satisfied)
    for i, j in zip(a.returned(), b.returned()):
        assert np.array_equal(i.image, j.image)
        assert i.profile == j.profile


def test_evolve_jobs_do_not_change_results(toy_model, digits_test):
    x, y = _benign_seed(toy_model, digits_test.images, digits_test.labels)
    cfg = GaConfig(target_type="LL", seed=13, **SMALL)
    a = evolve(toy_model, x, y, cfg, n_jobs=1)
    b = evolve(toy_model, x, y, cfg, n_jobs=4)
    assert a.best_fitness_trace == b.best_fitness_trace
    for i, j in zip(a.returned(), b.returned()):
        assert np.array_equal(i.image, j.image)


def test_returned_satisfied_individuals_meet_objective(toy_model, digits_test):
    x, y = _benign_seed(toy_model, digits_test.images, digits_test.labels)
    cfg = GaConfig(target_type="LL", seed=14, population_size=40, max_iterations=25,
                   mc_passes=16)
    report = evolve(toy_model, x, y, cfg)
    if report.objective_satisfied:
        for ind in report.satisfied:
            assert objective_met(ind.profile, ind.is_adversarial, "LL", cfg.thresholds)
        assert report.generations_run <= cfg.max_iterations
