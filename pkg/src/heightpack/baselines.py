"""Conventional ordering methods: random, largest-first, and a biased
random-key genetic algorithm searching over orders."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .instance import Instance
from .metrics import RewardConfig, penalty
from .placement import pack_sequence


def random_order(instance: Instance, seed) -> list[int]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [int(i) for i in rng.permutation(instance.n)]


def bbox_seq_order(instance: Instance) -> list[int]:
    """Largest area/volume first; equal sizes keep their input order."""
    sizes = instance.sizes()
    return sorted(range(instance.n), key=lambda i: (-sizes[i], i))


def decode_keys(keys) -> list[int]:
    """Random keys to an order: ascending key, ties by index."""
    return [int(i) for i in np.argsort(np.asarray(keys), kind="stable")]


@dataclass(frozen=True)
class BrkgaConfig:
    population_size: int | None = None  # None: 10 * n capped at 500
    elite_fraction: float = 0.2
    mutant_fraction: float = 0.15
    elite_inherit_prob: float = 0.7
    generations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.population_size is not None and self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not (0 < self.elite_fraction and 0 <= self.mutant_fraction
                and self.elite_fraction + self.mutant_fraction < 1):
            raise ValueError("need elite_fraction > 0 and elite_fraction + mutant_fraction < 1")
        if not 0.5 <= self.elite_inherit_prob < 1:
            raise ValueError("elite_inherit_prob must lie in [0.5, 1)")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")

    def resolved_population(self, n: int) -> int:
        if self.population_size is not None:
            return self.population_size
        return max(2, min(10 * n, 500))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BrkgaRun:
    order: list[int]
    fitness: float
    history: list[float]  # best-so-far penalty after each generation (index 0 = initial population)
    evaluations: int


def brkga_search(instance: Instance, cfg: BrkgaConfig = BrkgaConfig(),
                 reward_cfg: RewardConfig = RewardConfig(),
                 fitness: Callable[[list[int]], float] | None = None) -> BrkgaRun:
    n = instance.n
    if fitness is None:
        def fitness(order):
            return penalty(pack_sequence(instance, order), reward_cfg)
    if n == 1:
        return BrkgaRun([0], fitness([0]), [fitness([0])], 1)

    rng = np.random.default_rng(cfg.seed)
    pop_size = cfg.resolved_population(n)
    n_elite = max(1, int(round(cfg.elite_fraction * pop_size)))
    n_mutant = int(round(cfg.mutant_fraction * pop_size))
    n_mutant = min(n_mutant, pop_size - n_elite)
    n_cross = pop_size - n_elite - n_mutant

    cache: dict[tuple[int, ...], float] = {}

    def score(keys) -> float:
        order = tuple(decode_keys(keys))
        if order not in cache:
            cache[order] = fitness(list(order))
        return cache[order]

    population = rng.random((pop_size, n))
    scores = np.array([score(k) for k in population])
    best_i = int(np.argmin(scores))
    best_keys, best_fit = population[best_i].copy(), float(scores[best_i])
    history = [best_fit]

    for _ in range(cfg.generations):
        rank = np.argsort(scores, kind="stable")
        elites, elite_scores = population[rank[:n_elite]], scores[rank[:n_elite]]
        others = population[rank[n_elite:]]
        mutants = rng.random((n_mutant, n))
        if n_cross:
            a = elites[rng.integers(0, n_elite, n_cross)]
            pool = others if len(others) else elites
            b = pool[rng.integers(0, len(pool), n_cross)]
            take_elite = rng.random((n_cross, n)) < cfg.elite_inherit_prob
            children = np.where(take_elite, a, b)
        else:
            children = np.empty((0, n))
        fresh = np.vstack([mutants, children])
        population = np.vstack([elites, fresh])
        scores = np.concatenate([elite_scores, [score(k) for k in fresh]])
        i = int(np.argmin(scores))
        if scores[i] < best_fit:
            best_keys, best_fit = population[i].copy(), float(scores[i])
        history.append(best_fit)

    return BrkgaRun(decode_keys(best_keys), best_fit, history, len(cache))


def brkga_order(instance: Instance, cfg: BrkgaConfig = BrkgaConfig(),
                reward_cfg: RewardConfig = RewardConfig()) -> list[int]:
    return brkga_search(instance, cfg, reward_cfg).order

