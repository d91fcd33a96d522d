"""Objects, boxes and problem instances, plus the JSONL dataset format."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class InstanceError(ValueError):
    """An object or box violates the size rules."""


class DatasetParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _as_dims(values: Iterable[int], what: str) -> tuple[int, ...]:
    dims = tuple(values)
    if len(dims) not in (2, 3):
        raise InstanceError(f"{what} must have 2 or 3 dimensions, got {len(dims)}")
    for d in dims:
        if isinstance(d, bool) or not isinstance(d, (int, np.integer)):
            raise InstanceError(f"{what} dimensions must be integers, got {d!r}")
        if d < 1:
            raise InstanceError(f"{what} dimensions must be >= 1, got {dims}")
    return tuple(int(d) for d in dims)


def check_object_fits(obj: Sequence[int], box: Sequence[int]) -> None:
    """Raise InstanceError unless every object side is at most half the box side."""
    if len(obj) != len(box):
        raise InstanceError(f"object {tuple(obj)} and box {tuple(box)} differ in dimension")
    for o, b in zip(obj, box):
        if 2 * o > b:
            raise InstanceError(f"object {tuple(obj)} exceeds half of box {tuple(box)}")


@dataclass(frozen=True)
class Instance:
    """n objects plus the box size shared by every box they go into.

    Dimensions are (length, height) in 2D and (length, width, height) in 3D.
    """

    objects: tuple[tuple[int, ...], ...]
    box: tuple[int, ...]
    id: str = ""

    def __post_init__(self):
        box = _as_dims(self.box, "box")
        objects = tuple(_as_dims(o, "object") for o in self.objects)
        if not objects:
            raise InstanceError("an instance needs at least one object")
        for o in objects:
            check_object_fits(o, box)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "objects", objects)
        object.__setattr__(self, "id", str(self.id))

    @property
    def n(self) -> int:
        return len(self.objects)

    @property
    def ndim(self) -> int:
        return len(self.box)

    def as_array(self) -> np.ndarray:
        """Object dimensions as an (n, M) float64 array."""
        return np.asarray(self.objects, dtype=np.float64)

    def sizes(self) -> list[int]:
        """Area (2D) or volume (3D) of each object."""
        return [int(np.prod(o)) for o in self.objects]

    def to_record(self) -> dict:
        return {"box": list(self.box), "id": self.id, "objects": [list(o) for o in self.objects]}

    @classmethod
    def from_record(cls, record: dict) -> "Instance":
        return cls(objects=tuple(tuple(o) for o in record["objects"]),
                   box=tuple(record["box"]), id=record["id"])


def validate_order(order: Sequence[int], n: int) -> list[int]:
    """Return ``order`` as a list of ints; raise ValueError unless it permutes range(n)."""
    order = [int(i) for i in order]
    if sorted(order) != list(range(n)):
        raise ValueError(f"order {order} is not a permutation of 0..{n - 1}")
    return order


@dataclass(frozen=True)
class GenConfig:
    M: int = 2
    n: int = 40
    dim_low: int = 1
    dim_high: int = 5
    box_dims: tuple[int, ...] = (10, 10)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "box_dims", tuple(int(b) for b in self.box_dims))
        if self.M not in (2, 3):
            raise InstanceError(f"M must be 2 or 3, got {self.M}")
        if len(self.box_dims) != self.M:
            raise InstanceError(f"box {self.box_dims} does not have {self.M} dimensions")
        if min(self.box_dims) < 1:
            raise InstanceError(f"box dimensions must be >= 1, got {self.box_dims}")
        if self.n < 1:
            raise InstanceError("n must be >= 1")
        if self.dim_low < 1 or self.dim_high < self.dim_low:
            raise InstanceError(f"bad dimension range [{self.dim_low}, {self.dim_high}]")
        if 2 * self.dim_high > min(self.box_dims):
            raise InstanceError(
                f"dim_high={self.dim_high} exceeds half of the smallest box side {min(self.box_dims)}")

    @classmethod
    def preset(cls, mode: str, **overrides) -> "GenConfig":
        """Dataset settings for the standard 2D (n=40, sides 1-5) and 3D (n=70, sides 2-5) benchmarks."""
        if mode == "2d":
            base = dict(M=2, n=40, dim_low=1, dim_high=5, box_dims=(10, 10))
        elif mode == "3d":
            base = dict(M=3, n=70, dim_low=2, dim_high=5, box_dims=(10, 10, 10))
        else:
            raise InstanceError(f"unknown mode {mode!r}")
        base.update({k: v for k, v in overrides.items() if v is not None})
        if "box_dims" in overrides and overrides["box_dims"] is not None:
            base["M"] = len(base["box_dims"])
        return cls(**base)


def generate_instance(config: GenConfig, index: int = 0, id: str | None = None) -> Instance:
    """Draw one instance. ``(config.seed, index)`` fully determines the result."""
    rng = np.random.default_rng([config.seed, index])
    dims = rng.integers(config.dim_low, config.dim_high + 1, size=(config.n, config.M))
    return Instance(objects=tuple(tuple(int(d) for d in row) for row in dims),
                    box=config.box_dims,
                    id=id if id is not None else f"{config.seed}-{index}")


def generate_dataset(config: GenConfig, count: int, start: int = 0) -> list[Instance]:
    return [generate_instance(config, i) for i in range(start, start + count)]


def dumps_instance(instance: Instance) -> str:
    return json.dumps(instance.to_record(), sort_keys=True, separators=(",", ":"))


def _no_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise ValueError(f"duplicate field {key!r}")
        out[key] = value
    return out


def loads_record(text: str, lineno: int, required: Iterable[str]) -> dict:
    """Parse one JSON object line, rejecting duplicate or missing keys."""
    try:
        record = json.loads(text, object_pairs_hook=_no_duplicates)
    except ValueError as exc:
        raise DatasetParseError(lineno, str(exc)) from None
    if not isinstance(record, dict):
        raise DatasetParseError(lineno, "record is not an object")
    missing = [k for k in required if k not in record]
    if missing:
        raise DatasetParseError(lineno, f"missing field(s) {missing}")
    return record


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_dataset(instances: Iterable[Instance], path: str | os.PathLike) -> None:
    atomic_write_text(path, "".join(dumps_instance(inst) + "\n" for inst in instances))


def read_dataset(path: str | os.PathLike) -> list[Instance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = loads_record(line, lineno, ("id", "box", "objects"))
            extra = set(record) - {"id", "box", "objects"}
            if extra:
                raise DatasetParseError(lineno, f"unexpected field(s) {sorted(extra)}")
            try:
                instances.append(Instance.from_record(record))
            except (InstanceError, TypeError) as exc:
                raise DatasetParseError(lineno, str(exc)) from None
    return instances
