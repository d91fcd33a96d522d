"""Run any ordering method over a dataset and time it per instance."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .baselines import BrkgaConfig, bbox_seq_order, brkga_order, random_order
from .instance import Instance
from .metrics import RewardConfig, Summary, evaluate
from .placement import PackingResult, pack_sequence
from .policy import decode

METHODS = ("random", "bbox", "brkga", "drl")
TABLE_NAMES = {"random": "Random", "bbox": "B-Box Seq", "brkga": "BRKGA", "drl": "DRL"}


def run_method(instances: Sequence[Instance], method: str, seed: int = 0, params=None,
               brkga_cfg: BrkgaConfig | None = None,
               reward_cfg: RewardConfig = RewardConfig()) -> tuple[list[PackingResult], list[float]]:
    """Order and pack every instance; return results and per-instance latency in ms.

    Latency covers order generation plus placement for one instance on the
    calling thread.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "drl" and params is None:
        raise ValueError("method 'drl' needs trained parameters")
    brkga_cfg = brkga_cfg or BrkgaConfig(seed=seed)
    results, latencies = [], []
    for i, inst in enumerate(instances):
        start = time.perf_counter()
        if method == "random":
            order = random_order(inst, np.random.default_rng([seed, i]))
        elif method == "bbox":
            order = bbox_seq_order(inst)
        elif method == "brkga":
            order = brkga_order(inst, BrkgaConfig(**{**brkga_cfg.to_dict(), "seed": brkga_cfg.seed + i}),
                                reward_cfg)
        else:
            order = decode(inst, params, mode="greedy").order
        result = pack_sequence(inst, order)
        latencies.append((time.perf_counter() - start) * 1000.0)
        results.append(result)
    return results, latencies


def summarize(instances: Sequence[Instance], method: str, seed: int = 0, params=None,
              brkga_cfg: BrkgaConfig | None = None,
              reward_cfg: RewardConfig = RewardConfig()) -> tuple[Summary, list[PackingResult]]:
    results, lat = run_method(instances, method, seed, params, brkga_cfg, reward_cfg)
    return evaluate(results, lat, method=TABLE_NAMES[method], cfg=reward_cfg), results
