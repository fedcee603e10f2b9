"""Genetic search that forges inputs with targeted uncertainty patterns.

Starting from a benign seed image, the search explores its L-infinity ball
with tournament selection, per-pixel uniform crossover, and sparse white-noise
mutation.  Four piecewise fitness functions drive the population toward the
four uncommon corners of the (pcs, vro) plane:

* ``LL``    - low confidence gap and low dropout disagreement,
* ``HH``    - high confidence gap yet high dropout disagreement,
* ``HL_AE`` - misclassified inputs that look maximally benign,
* ``LH_BE`` - correctly classified inputs that look maximally adversarial.

Fitness branches switch on population aggregates (min/max pcs, presence of a
misclassified member), so each generation first refreshes those aggregates
and then scores every member against them.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DropforgeError
from .network import Network
from .rng import RngStream
from .uncertainty import PatternThresholds, UncertaintyProfile, profile

__all__ = [
    "GaConfig", "Individual", "Population", "PopulationStats", "GenerationReport",
    "fitness_ll", "fitness_hh", "fitness_hl_ae", "fitness_lh_be", "fitness_regime",
    "objective_met", "init_population", "evolve",
    "load_ga_config", "ga_config_to_dict",
]

TARGET_TYPES = ("LL", "HH", "LH_BE", "HL_AE")


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 100
    crossover_rate: float = 0.5
    mutation_rate: float = 0.005
    linf_radius: float = 0.3
    max_iterations: int = 50
    tournament_size: int = 5
    elite_count: int = 1
    mc_passes: int = 50
    target_type: str = "LL"
    thresholds: PatternThresholds = field(default_factory=PatternThresholds)
    lh_dispersion: str = "vro"  # dispersion term of the LH_BE fitness: "vro" or "vr"
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        for name in ("crossover_rate", "mutation_rate"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if not 0.0 < self.linf_radius <= 1.0:
            raise ConfigError(f"linf_radius must lie in (0, 1], got {self.linf_radius}")
        if self.max_iterations < 1 or self.tournament_size < 1 or self.mc_passes < 1:
            raise ConfigError("max_iterations, tournament_size and mc_passes must be >= 1")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigError("elite_count must be >= 0 and below population_size")
        if self.target_type not in TARGET_TYPES:
            raise ConfigError(f"target_type must be one of {TARGET_TYPES}")
        if self.lh_dispersion not in ("vro", "vr"):
            raise ConfigError("lh_dispersion must be 'vro' or 'vr'")


def load_ga_config(path: str) -> GaConfig:
    """Read the flat key=value JSON config (threshold fields inline)."""
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    thr_keys = {"p_low", "p_high", "v_low", "v_high"}
    thr_kwargs = {k: raw[k] for k in thr_keys if k in raw}
    kwargs = {k: v for k, v in raw.items() if k not in thr_keys}
    unknown = set(kwargs) - set(GaConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    if thr_kwargs:
        kwargs["thresholds"] = PatternThresholds(**thr_kwargs)
    return GaConfig(**kwargs)


def ga_config_to_dict(cfg: GaConfig) -> dict:
    out = {k: getattr(cfg, k) for k in GaConfig.__dataclass_fields__ if k != "thresholds"}
    out.update({k: getattr(cfg.thresholds, k) for k in ("p_low", "p_high", "v_low", "v_high")})
    return out


@dataclass
class Individual:
    image: np.ndarray
    profile: UncertaintyProfile
    is_adversarial: bool
    fitness: float = 0.0
    generation: int = 0


@dataclass(frozen=True)
class PopulationStats:
    min_pcs: float
    max_pcs: float
    any_adversarial: bool


@dataclass
class Population:
    individuals: list[Individual]
    seed_image: np.ndarray
    seed_label: int

    def stats(self) -> PopulationStats:
        values = [ind.profile.pcs for ind in self.individuals]
        return PopulationStats(
            min_pcs=min(values),
            max_pcs=max(values),
            any_adversarial=any(ind.is_adversarial for ind in self.individuals),
        )


# ----------------------------------------------------------------- fitnesses

def fitness_ll(prof: UncertaintyProfile, is_adversarial: bool,
               stats: PopulationStats, thr: PatternThresholds) -> float:
    if stats.min_pcs > thr.p_low:
        return -prof.pcs
    return float(prof.pcs < thr.p_low) - prof.vro


def fitness_hh(prof: UncertaintyProfile, is_adversarial: bool,
               stats: PopulationStats, thr: PatternThresholds) -> float:
    if stats.max_pcs < thr.p_high:
        return prof.pcs
    return float(prof.pcs > thr.p_high) + prof.vro


def fitness_hl_ae(prof: UncertaintyProfile, is_adversarial: bool,
                  stats: PopulationStats, thr: PatternThresholds) -> float:
    if not stats.any_adversarial:
        return -prof.pcs
    if stats.max_pcs < thr.p_high:
        return float(is_adversarial) + prof.pcs
    return float(is_adversarial) + float(prof.pcs > thr.p_high) - prof.vro


def fitness_lh_be(prof: UncertaintyProfile, is_adversarial: bool,
                  stats: PopulationStats, thr: PatternThresholds,
                  dispersion: str = "vro") -> float:
    benign = float(not is_adversarial)
    if stats.min_pcs > thr.p_low:
        return benign - prof.pcs
    disp = prof.vro if dispersion == "vro" else prof.vr
    return benign + float(prof.pcs < thr.p_low) + disp


def objective_met(prof: UncertaintyProfile, is_adversarial: bool, target_type: str,
                  thr: PatternThresholds) -> bool:
    low_p, high_p = prof.pcs < thr.p_low, prof.pcs > thr.p_high
    low_v, high_v = prof.vro < thr.v_low, prof.vro > thr.v_high
    if target_type == "LL":
        return low_p and low_v
    if target_type == "HH":
        return high_p and high_v
    if target_type == "HL_AE":
        return high_p and low_v and is_adversarial
    if target_type == "LH_BE":
        return low_p and high_v and not is_adversarial
    raise ConfigError(f"unknown target type {target_type!r}")


def _fitness(ind: Individual, target_type: str, stats: PopulationStats,
             thr: PatternThresholds, lh_dispersion: str) -> float:
    if target_type == "LL":
        return fitness_ll(ind.profile, ind.is_adversarial, stats, thr)
    if target_type == "HH":
        return fitness_hh(ind.profile, ind.is_adversarial, stats, thr)
    if target_type == "HL_AE":
        return fitness_hl_ae(ind.profile, ind.is_adversarial, stats, thr)
    return fitness_lh_be(ind.profile, ind.is_adversarial, stats, thr, lh_dispersion)


def fitness_regime(target_type: str, stats: PopulationStats, thr: PatternThresholds) -> int:
    """Which branch of the piecewise fitness the population aggregates select.

    Branch switches change the value function itself, so best-fitness
    monotonicity under elitism is only meaningful within one regime.
    """
    if target_type == "LL" or target_type == "LH_BE":
        return 1 if stats.min_pcs > thr.p_low else 2
    if target_type == "HH":
        return 1 if stats.max_pcs < thr.p_high else 2
    if target_type == "HL_AE":
        if not stats.any_adversarial:
            return 1
        return 2 if stats.max_pcs < thr.p_high else 3
    raise ConfigError(f"unknown target type {target_type!r}")


# -------------------------------------------------------------------- search

@dataclass
class GenerationReport:
    target_type: str
    seed_label: int
    satisfied: list[Individual]
    best: Individual
    best_fitness_trace: list[float]
    regime_trace: list[int]  # fitness branch in force at each generation
    generations_run: int
    evaluations: int

    @property
    def objective_satisfied(self) -> bool:
        return bool(self.satisfied)

    def returned(self) -> list[Individual]:
        """Satisfied individuals, or the best-by-fitness one when none are."""
        return self.satisfied if self.satisfied else [self.best]


class _Evaluator:
    """Profiles new individuals; each gets its own child stream so results do
    not depend on evaluation order or thread count."""

    def __init__(self, net: Network, seed_image: np.ndarray, seed_label: int,
                 cfg: GaConfig, stream: RngStream, n_jobs: int = 1):
        self.net = net
        self.seed_image = seed_image
        self.seed_label = seed_label
        self.cfg = cfg
        self.stream = stream
        self.n_jobs = n_jobs
        self.counter = 0
        self.lo = np.maximum(seed_image - np.float32(cfg.linf_radius), 0.0)
        self.hi = np.minimum(seed_image + np.float32(cfg.linf_radius), 1.0)

    def _check_feasible(self, image: np.ndarray) -> None:
        if image.min() < 0.0 or image.max() > 1.0 or \
                np.max(np.abs(image - self.seed_image)) > self.cfg.linf_radius + 1e-6:
            raise DropforgeError("candidate escaped the search ball")

    def _profile_one(self, image: np.ndarray, stream: RngStream, generation: int) -> Individual:
        self._check_feasible(image)
        prof = profile(self.net, image, self.cfg.mc_passes, stream)
        return Individual(
            image=image,
            profile=prof,
            is_adversarial=prof.original_label != self.seed_label,
            generation=generation,
        )

    def evaluate(self, images: list[np.ndarray], generation: int) -> list[Individual]:
        streams = [self.stream.child(self.counter + i) for i in range(len(images))]
        self.counter += len(images)
        if self.n_jobs > 1 and len(images) > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                return list(pool.map(lambda args: self._profile_one(args[0], args[1], generation),
                                     zip(images, streams)))
        return [self._profile_one(img, st, generation) for img, st in zip(images, streams)]


def init_population(seed_image: np.ndarray, cfg: GaConfig, rng: RngStream) -> list[np.ndarray]:
    """Seed plus independent per-pixel uniform noise in [-radius, +radius]."""
    seed_image = np.asarray(seed_image, dtype=np.float32)
    images = []
    for i in range(cfg.population_size):
        gen = rng.child(i).generator()
        noise = gen.uniform(-cfg.linf_radius, cfg.linf_radius, size=seed_image.shape)
        images.append(np.clip(seed_image + noise, 0.0, 1.0).astype(np.float32))
    return images


def _tournament(individuals: list[Individual], gen: np.random.Generator,
                size: int) -> Individual:
    idx = gen.integers(0, len(individuals), size=size)
    best = individuals[idx[0]]
    for i in idx[1:]:
        if individuals[i].fitness > best.fitness:  # ties keep the earlier draw
            best = individuals[i]
    return best


def evolve(net: Network, seed_image: np.ndarray, seed_label: int, cfg: GaConfig,
           n_jobs: int = 1, on_generation=None, log=None) -> GenerationReport:
    """Run the search for one benign seed.

    Stops at the first generation containing an objective-satisfying
    individual (all satisfying members of that generation are returned) or
    after ``max_iterations`` generations, whichever comes first.
    """
    seed_image = np.asarray(seed_image, dtype=np.float32)
    seed_label = int(seed_label)
    if net.predict_label(seed_image) != seed_label:
        raise ConfigError("seed must be benign: model prediction disagrees with its label")

    root = RngStream(cfg.seed)
    evaluator = _Evaluator(net, seed_image, seed_label, cfg, root.child(1), n_jobs)
    ops_gen = root.child(2).generator()

    images = init_population(seed_image, cfg, root.child(0))
    population = Population(evaluator.evaluate(images, generation=0), seed_image, seed_label)

    trace: list[float] = []
    regimes: list[int] = []
    generations_run = 0
    best_overall: Individual | None = None
    for generation in range(cfg.max_iterations):
        generations_run = generation + 1
        stats = population.stats()
        regimes.append(fitness_regime(cfg.target_type, stats, cfg.thresholds))
        for ind in population.individuals:
            ind.fitness = _fitness(ind, cfg.target_type, stats, cfg.thresholds,
                                   cfg.lh_dispersion)
        ranked = sorted(population.individuals, key=lambda ind: ind.fitness, reverse=True)
        trace.append(ranked[0].fitness)
        best_overall = ranked[0]
        if log is not None:
            log(f"generation {generation}: best fitness {ranked[0].fitness:.6f}")

        satisfied = [ind for ind in population.individuals
                     if objective_met(ind.profile, ind.is_adversarial, cfg.target_type,
                                      cfg.thresholds)]
        if on_generation is not None:
            on_generation(generation, population)
        if satisfied or generation == cfg.max_iterations - 1:
            return GenerationReport(
                target_type=cfg.target_type, seed_label=seed_label,
                satisfied=satisfied, best=best_overall,
                best_fitness_trace=trace, regime_trace=regimes,
                generations_run=generations_run,
                evaluations=evaluator.counter,
            )

        # next generation: elites survive with their cached profiles
        next_members = list(ranked[:cfg.elite_count])
        child_images: list[np.ndarray] = []
        need = cfg.population_size - cfg.elite_count
        while len(child_images) < need:
            parent_a = _tournament(population.individuals, ops_gen, cfg.tournament_size)
            parent_b = _tournament(population.individuals, ops_gen, cfg.tournament_size)
            if ops_gen.random() < cfg.crossover_rate:
                swap = ops_gen.random(seed_image.shape) < 0.5
                child_a = np.where(swap, parent_b.image, parent_a.image)
                child_b = np.where(swap, parent_a.image, parent_b.image)
            else:
                child_a, child_b = parent_a.image.copy(), parent_b.image.copy()
            for child in (child_a, child_b):
                noise = ops_gen.normal(0.0, cfg.linf_radius / 3.0, size=seed_image.shape)
                mutate = ops_gen.random(seed_image.shape) < cfg.mutation_rate
                mutated = child + noise * mutate
                clipped = np.clip(mutated, evaluator.lo, evaluator.hi).astype(np.float32)
                if len(child_images) < need:
                    child_images.append(clipped)
        next_members.extend(evaluator.evaluate(child_images, generation + 1))
        population = Population(next_members, seed_image, seed_label)

    raise DropforgeError("unreachable: search loop must return a report")  # pragma: no cover


def describe_report(report: GenerationReport) -> dict:
    """JSON-friendly summary (images excluded; they travel in the CSV)."""
    def _ind(ind: Individual) -> dict:
        prof = ind.profile
        return {
            "pcs": prof.pcs, "vr": prof.vr, "vro": prof.vro,
            "pe": prof.pe, "mi": prof.mi,
            "original_label": prof.original_label,
            "dominant_label": prof.dominant_label,
            "is_adversarial": ind.is_adversarial,
            "fitness": ind.fitness,
            "generation": ind.generation,
        }

    return {
        "target_type": report.target_type,
        "seed_label": report.seed_label,
        "objective_satisfied": report.objective_satisfied,
        "generations_run": report.generations_run,
        "evaluations": report.evaluations,
        "best_fitness_trace": report.best_fitness_trace,
        "regime_trace": report.regime_trace,
        "satisfied": [_ind(i) for i in report.satisfied],
        "best": _ind(report.best),
    }
