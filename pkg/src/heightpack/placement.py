"""Height-map placement: where an object may rest, which spot to take, and
first-fit packing of an ordered sequence over as many boxes as needed.

Coordinates: x runs along the box length, y along the width (3D only) and z
up. A 2D position is ``(x, z)`` for the bottom-left corner of the object; a
3D position is ``(x, y, z)`` for its front-bottom-left corner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .instance import (DatasetParseError, Instance, InstanceError, atomic_write_text,
                       check_object_fits, loads_record, validate_order)


class ContractError(RuntimeError):
    """A caller broke an operation's precondition."""


class HeightMap:
    """Column heights over a box floor: shape (L,) in 2D, (L, W) in 3D."""

    def __init__(self, box: Sequence[int], heights=None):
        self.box = tuple(int(b) for b in box)
        if len(self.box) not in (2, 3):
            raise ValueError(f"box must be 2D or 3D, got {self.box}")
        floor = self.box[:-1]
        if heights is None:
            self.heights = np.zeros(floor, dtype=np.int64)
        else:
            self.heights = np.array(heights, dtype=np.int64)
            if self.heights.shape != floor:
                raise ValueError(f"height map shape {self.heights.shape} does not match floor {floor}")
            if self.heights.min() < 0 or self.heights.max() > self.box[-1]:
                raise ValueError("height map entries must lie in [0, box height]")

    @property
    def ndim(self) -> int:
        return len(self.box)

    @property
    def box_height(self) -> int:
        return self.box[-1]

    def copy(self) -> "HeightMap":
        return HeightMap(self.box, self.heights.copy())

    def __eq__(self, other):
        return (isinstance(other, HeightMap) and self.box == other.box
                and np.array_equal(self.heights, other.heights))

    def __repr__(self):
        return f"HeightMap(box={self.box}, heights={self.heights.tolist()})"

    def footprint(self, obj: Sequence[int], pos: Sequence[int]) -> np.ndarray:
        """View of the cells under an object whose corner sits at ``pos``."""
        if self.ndim == 2:
            return self.heights[pos[0]:pos[0] + obj[0]]
        return self.heights[pos[0]:pos[0] + obj[0], pos[1]:pos[1] + obj[1]]

    def place(self, obj: Sequence[int], pos: Sequence[int]) -> "HeightMap":
        """Drop ``obj`` at ``pos`` (which must be allowable) and raise its footprint."""
        if tuple(pos) not in set(allowable_positions(self, obj)):
            raise ContractError(f"position {tuple(pos)} is not allowable for object {tuple(obj)}")
        self.footprint(obj, pos)[...] = pos[-1] + obj[-1]
        return self


def _feasibility(heights: np.ndarray, obj: Sequence[int], box_height: int):
    """Resting height and allowability for every corner position.

    Returns ``(z, ok)`` arrays indexed like the floor, restricted to corners
    whose footprint is in bounds.
    """
    if heights.ndim == 1:
        length = obj[0]
        if length > heights.shape[0]:
            return np.empty(0, np.int64), np.empty(0, bool)
        windows = sliding_window_view(heights, length)
        z = windows.max(axis=1)
        support = (windows == z[:, None]).sum(axis=1)
        cells = length
    else:
        length, width = obj[0], obj[1]
        if length > heights.shape[0] or width > heights.shape[1]:
            return np.empty((0, 0), np.int64), np.empty((0, 0), bool)
        windows = sliding_window_view(heights, (length, width))
        z = windows.max(axis=(2, 3))
        support = (windows == z[:, :, None, None]).sum(axis=(2, 3))
        cells = length * width
    # strictly more than half of the bottom must be supported
    ok = (z + obj[-1] <= box_height) & (2 * support > cells)
    return z, ok


def allowable_positions(hmap: HeightMap, obj: Sequence[int]) -> list[tuple[int, ...]]:
    """Every in-bounds, collision-free, >50%-supported corner, with its resting z."""
    if len(obj) != hmap.ndim:
        raise InstanceError(f"object {tuple(obj)} does not match a {hmap.ndim}D box")
    z, ok = _feasibility(hmap.heights, obj, hmap.box_height)
    if hmap.ndim == 2:
        return [(int(x), int(z[x])) for x in np.flatnonzero(ok)]
    xs, ys = np.nonzero(ok)
    return [(int(x), int(y), int(z[x, y])) for x, y in zip(xs, ys)]


def select_target(positions) -> tuple[int, ...] | None:
    """Lowest z, then lowest y (3D), then lowest x."""
    positions = list(positions)
    if not positions:
        return None
    return min(positions, key=lambda p: tuple(reversed(p)))


def find_target(hmap: HeightMap, obj: Sequence[int]) -> tuple[int, ...] | None:
    """``select_target(allowable_positions(hmap, obj))`` without building the set."""
    z, ok = _feasibility(hmap.heights, obj, hmap.box_height)
    if not ok.any():
        return None
    zmin = z[ok].min()
    best = ok & (z == zmin)
    if hmap.ndim == 2:
        return (int(np.argmax(best)), int(zmin))
    # argmax over the (y, x) layout picks lowest y first, then lowest x
    flat = int(np.argmax(best.T))
    y, x = divmod(flat, best.shape[0])
    return (x, y, int(zmin))


@dataclass(frozen=True)
class Placement:
    object_index: int
    box_index: int
    position: tuple[int, ...]
    dims: tuple[int, ...]

    def to_record(self) -> dict:
        return {"box": self.box_index, "dims": list(self.dims),
                "index": self.object_index, "position": list(self.position)}


@dataclass
class PackingResult:
    box: tuple[int, ...]
    placements: list[Placement]
    heightmaps: list[HeightMap]
    id: str = ""
    order: list[int] = field(default_factory=list)

    @property
    def boxes_used(self) -> int:
        return len(self.heightmaps)

    def box_contents(self, box_index: int) -> list[Placement]:
        return [p for p in self.placements if p.box_index == box_index]

    def to_record(self) -> dict:
        return {
            "box": list(self.box),
            "boxes_used": self.boxes_used,
            "heightmaps": [h.heights.tolist() for h in self.heightmaps],
            "id": self.id,
            "order": list(self.order),
            "placements": [p.to_record() for p in self.placements],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_record(cls, record: dict) -> "PackingResult":
        box = tuple(int(b) for b in record["box"])
        placements = [Placement(int(p["index"]), int(p["box"]), tuple(int(v) for v in p["position"]),
                                tuple(int(v) for v in p["dims"]))
                      for p in record["placements"]]
        if "heightmaps" in record:
            maps = [HeightMap(box, h) for h in record["heightmaps"]]
        else:
            maps = _rebuild_heightmaps(box, placements)
        result = cls(box=box, placements=placements, heightmaps=maps,
                     id=str(record.get("id", "")), order=[int(i) for i in record.get("order", [])])
        if "boxes_used" in record and int(record["boxes_used"]) != result.boxes_used:
            raise ValueError("boxes_used disagrees with the height maps")
        return result


def _rebuild_heightmaps(box, placements) -> list[HeightMap]:
    count = max((p.box_index for p in placements), default=-1) + 1
    maps = [HeightMap(box) for _ in range(count)]
    for p in placements:
        cells = maps[p.box_index].footprint(p.dims, p.position)
        cells[...] = np.maximum(cells, p.position[-1] + p.dims[-1])
    return maps


def _target_1d(heights: list, length: int, height: int, box_height: int):
    # pure-Python scan; far cheaper than numpy for floors of ~10 cells
    best = None
    for x in range(len(heights) - length + 1):
        window = heights[x:x + length]
        z = max(window)
        if z + height > box_height or (best is not None and z >= best[1]):
            continue
        if 2 * window.count(z) > length:
            best = (x, z)
    return best


def pack_sequence(instance: Instance, order: Sequence[int]) -> PackingResult:
    """Pack objects in ``order`` (0-based indices), first-fit over open boxes.

    Each object goes to the target position of the first open box that has
    any allowable position; a fresh box is opened when none does.
    """
    order = validate_order(order, instance.n)
    box = instance.box
    flat = len(box) == 2
    floors: list = []
    placements = []
    for idx in order:
        obj = instance.objects[idx]
        check_object_fits(obj, box)
        target = None
        for b, floor in enumerate(floors):
            target = _target_1d(floor, obj[0], obj[1], box[1]) if flat else find_target(floor, obj)
            if target is not None:
                break
        if target is None:
            floor = [0] * box[0] if flat else HeightMap(box)
            floors.append(floor)
            b = len(floors) - 1
            target = _target_1d(floor, obj[0], obj[1], box[1]) if flat else find_target(floor, obj)
            if target is None:
                raise InstanceError(f"object {obj} does not fit an empty box {box}")
        top = target[-1] + obj[-1]
        if flat:
            floor[target[0]:target[0] + obj[0]] = [top] * obj[0]
        else:
            floor.footprint(obj, target)[...] = top
        placements.append(Placement(idx, b, target, obj))
    maps = [HeightMap(box, f) for f in floors] if flat else floors
    return PackingResult(box=box, placements=placements, heightmaps=maps, id=instance.id, order=order)


def write_results(results, path) -> None:
    atomic_write_text(path, "".join(r.dumps() + "\n" for r in results))


def read_results(path) -> list[PackingResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = loads_record(line, lineno, ("box", "placements"))
            try:
                results.append(PackingResult.from_record(record))
            except (KeyError, TypeError, ValueError) as exc:
                raise DatasetParseError(lineno, f"bad packing result: {exc}") from None
    return results
