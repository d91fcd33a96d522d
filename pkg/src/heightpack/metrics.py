"""Compactness, pyramid and the packing penalty, plus dataset-level summaries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .placement import PackingResult


@dataclass(frozen=True)
class BoxMetrics:
    compactness: float
    pyramid: float
    max_height: int
    object_area_sum: int


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.5
    beta: float = 0.5
    scale: float = 5.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")


def box_metrics(result: PackingResult, box_index: int) -> BoxMetrics:
    heights = result.heightmaps[box_index].heights
    volume = sum(math.prod(p.dims) for p in result.placements if p.box_index == box_index)
    if volume == 0:
        raise ValueError(f"box {box_index} is empty")
    top = int(heights.max())
    return BoxMetrics(compactness=volume / (heights.size * top),
                      pyramid=volume / int(heights.sum()),
                      max_height=top, object_area_sum=volume)


def all_box_metrics(result: PackingResult) -> list[BoxMetrics]:
    """Metrics of every non-empty box, in opening order."""
    volumes = [0] * result.boxes_used
    for p in result.placements:
        volumes[p.box_index] += math.prod(p.dims)
    out = []
    for hmap, volume in zip(result.heightmaps, volumes):
        if volume == 0:
            continue
        heights = hmap.heights
        top = int(heights.max())
        out.append(BoxMetrics(volume / (heights.size * top), volume / int(heights.sum()), top, volume))
    return out


def compactness(result: PackingResult, box_index: int = 0) -> float:
    """Object area/volume over floor extent times the tallest column."""
    return box_metrics(result, box_index).compactness


def pyramid(result: PackingResult, box_index: int = 0) -> float:
    """Object area/volume over the summed height map."""
    return box_metrics(result, box_index).pyramid


def mean_metrics(result: PackingResult) -> tuple[float, float]:
    """(average compactness, average pyramid) over the non-empty boxes."""
    boxes = all_box_metrics(result)
    k = len(boxes)
    return sum(b.compactness for b in boxes) / k, sum(b.pyramid for b in boxes) / k


def penalty_from_means(avg_c: float, avg_p: float, cfg: RewardConfig = RewardConfig()) -> float:
    return cfg.scale * (cfg.alpha * (1.0 - avg_c) + cfg.beta * (1.0 - avg_p))


def penalty(result: PackingResult, cfg: RewardConfig = RewardConfig()) -> float:
    """Packing cost: zero for perfect boxes, ``scale * (alpha + beta)`` at worst."""
    return penalty_from_means(*mean_metrics(result), cfg)


def reward(result: PackingResult, cfg: RewardConfig = RewardConfig()) -> float:
    return -penalty(result, cfg)


@dataclass(frozen=True)
class Summary:
    method: str
    avg_c: float
    avg_p: float
    avg_boxes: float
    avg_latency_ms: float
    avg_penalty: float
    count: int

    def to_record(self) -> dict:
        return {"method": self.method, "C": self.avg_c, "P": self.avg_p, "Num.": self.avg_boxes,
                "Lat.(ms)": None if math.isnan(self.avg_latency_ms) else self.avg_latency_ms, "penalty": self.avg_penalty, "count": self.count}


def evaluate(results: Sequence[PackingResult], latencies_ms: Iterable[float] | None = None,
             method: str = "", cfg: RewardConfig = RewardConfig()) -> Summary:
    """Average per-instance box means over a dataset."""
    if not results:
        raise ValueError("evaluate needs at least one result")
    means = np.array([mean_metrics(r) for r in results])
    lat = list(latencies_ms) if latencies_ms is not None else []
    return Summary(
        method=method,
        avg_c=float(means[:, 0].mean()),
        avg_p=float(means[:, 1].mean()),
        avg_boxes=float(np.mean([r.boxes_used for r in results])),
        avg_latency_ms=float(np.mean(lat)) if lat else float("nan"),
        avg_penalty=float(np.mean([penalty_from_means(c, p, cfg) for c, p in means])),
        count=len(results),
    )


def format_table(rows: Sequence[Summary]) -> str:
    lines = ["Methods\tC\tP\tNum.\tLat.(ms)"]
    for r in rows:
        lines.append(f"{r.method}\t{r.avg_c:.3f}\t{r.avg_p:.3f}\t{r.avg_boxes:.3f}\t{r.avg_latency_ms:.3f}")
    return "\n".join(lines)


def table_record(rows: Sequence[Summary]) -> str:
    return json.dumps({"rows": [r.to_record() for r in rows]}, sort_keys=True)
