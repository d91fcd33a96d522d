"""Independent oracles shared by the test modules.

Nothing here calls into the placement engine's search code: allowable
positions are found by literal loops, and packings are re-checked by
replaying them on a voxel grid.
"""

import itertools
import math

import numpy as np
import pytest

from heightpack.metrics import RewardConfig, penalty
from heightpack.placement import pack_sequence
from heightpack.policy import ACTOR_NAMES, CRITIC_NAMES, actor_backward, decode_batch
from heightpack.trainer import critic_backward, critic_forward


def brute_allowable(heights, obj, box):
    """Literal scan of every corner applying the four placement rules."""
    heights = np.asarray(heights)
    H = box[-1]
    out = set()
    if len(box) == 2:
        L = box[0]
        for x in range(L):
            if x + obj[0] > L:
                continue
            cells = [int(heights[i]) for i in range(x, x + obj[0])]
            z = max(cells)
            if z + obj[1] > H:
                continue
            if sum(1 for c in cells if c == z) / len(cells) > 0.5:
                out.add((x, z))
        return out
    L, W = box[0], box[1]
    for x in range(L):
        for y in range(W):
            if x + obj[0] > L or y + obj[1] > W:
                continue
            cells = [int(heights[i, j]) for i in range(x, x + obj[0]) for j in range(y, y + obj[1])]
            z = max(cells)
            if z + obj[2] > H:
                continue
            if sum(1 for c in cells if c == z) / len(cells) > 0.5:
                out.add((x, y, z))
    return out


def brute_target(positions):
    """Smallest z; among those smallest y (3D); among those smallest x."""
    positions = list(positions)
    if not positions:
        return None
    zmin = min(p[-1] for p in positions)
    tied = [p for p in positions if p[-1] == zmin]
    if len(tied[0]) == 3:
        ymin = min(p[1] for p in tied)
        tied = [p for p in tied if p[1] == ymin]
    xmin = min(p[0] for p in tied)
    return next(p for p in tied if p[0] == xmin)


def replay_check(instance, result):
    """Re-run a packing on voxel grids and return a list of violated properties."""
    problems = []
    box = instance.box
    grids = {}
    tops = {}
    seen = set()
    if len(result.placements) != instance.n:
        problems.append("placement count")
    for p in result.placements:
        if p.object_index in seen:
            problems.append(f"object {p.object_index} placed twice")
        seen.add(p.object_index)
        dims = instance.objects[p.object_index]
        if tuple(p.dims) != tuple(dims):
            problems.append(f"object {p.object_index}: dims changed")
        grid = grids.setdefault(p.box_index, np.zeros(box, dtype=bool))
        top = tops.setdefault(p.box_index, np.zeros(box[:-1], dtype=np.int64))
        lo = tuple(p.position[:-1])
        z = p.position[-1]
        floor_slice = tuple(slice(a, a + d) for a, d in zip(lo, dims[:-1]))
        if any(a < 0 or a + d > B for a, d, B in zip(p.position, dims, box)):
            problems.append(f"object {p.object_index}: outside box")
            continue
        body = grid[floor_slice + (slice(z, z + dims[-1]),)]
        if body.any():
            problems.append(f"object {p.object_index}: overlaps")
        # nothing may sit anywhere above the footprint when the object is lowered in
        if grid[floor_slice + (slice(z, box[-1]),)].any():
            problems.append(f"object {p.object_index}: blocked from above")
        col = top[floor_slice]
        if z != col.max():
            problems.append(f"object {p.object_index}: not resting on the highest cell")
        if z == 0:
            supported = col.size
        else:
            supported = int(grid[floor_slice + (z - 1,)].sum())
        if not supported / col.size > 0.5:
            problems.append(f"object {p.object_index}: support {supported}/{col.size}")
        body[...] = True
        new_top = np.maximum(col, z + dims[-1])
        if (new_top < col).any():
            problems.append("height map decreased")
        col[...] = new_top
    if seen != set(range(instance.n)):
        problems.append("not every object placed")
    for b, hmap in enumerate(result.heightmaps):
        if b not in grids:
            problems.append(f"box {b} empty")
            continue
        if not np.array_equal(hmap.heights, tops[b]):
            problems.append(f"box {b}: height map mismatch")
    return problems


def exhaustive_best(instance, cfg=RewardConfig()):
    assert math.factorial(instance.n) <= 50_000
    return min(penalty(pack_sequence(instance, p), cfg)
               for p in itertools.permutations(range(instance.n)))


def numeric_grad(f, params, names, eps=1e-6):
    """Central differences of the scalar ``f(params)`` over every entry of ``names``."""
    out = {}
    for k in names:
        g = np.zeros_like(params[k])
        flat, gflat = params[k].reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f(params)
            flat[i] = old - eps
            down = f(params)
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        out[k] = g
    return out


def relative_error(a, b, names):
    diff = np.sqrt(sum(float(np.sum((a[k] - b[k]) ** 2)) for k in names))
    scale = np.sqrt(sum(float(np.sum(a[k] ** 2)) for k in names)) + \
        np.sqrt(sum(float(np.sum(b[k] ** 2)) for k in names))
    return diff / max(scale, 1e-12)


def actor_gradient_error(params, X, actions, coef):
    """Relative error between actor_backward and finite differences of sum_b coef_b log P_b."""
    batch = decode_batch(params, X, actions=actions, keep_cache=True)
    analytic = actor_backward(params, batch, coef)
    f = lambda p: float(coef @ decode_batch(p, X, actions=actions).log_probs.sum(axis=1))
    return relative_error(analytic, numeric_grad(f, params, ACTOR_NAMES), ACTOR_NAMES)


def critic_gradient_error(params, X, R):
    """Relative error between critic_backward and finite differences of mean((R - V)^2)."""
    V, cache = critic_forward(params, X)
    analytic = critic_backward(params, cache, -2.0 * (R - V) / len(R))
    f = lambda p: float(np.mean((R - critic_forward(p, X)[0]) ** 2))
    return relative_error(analytic, numeric_grad(f, params, CRITIC_NAMES), CRITIC_NAMES)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion, shown in the terminal summary."""
    def _report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE].append((number, line))
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
