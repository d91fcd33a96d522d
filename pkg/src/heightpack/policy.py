"""Pointer-network ordering policy in plain numpy.

Encoder: a width-1 convolution (an affine map shared by every object).
Decoder: a GRU whose input is the embedding of the previously chosen object
(zeros at the first step). Attention scores every object with
``v . tanh(W1 e_j + W2 h)``; already-chosen objects are masked out.

Everything is batched over instances that share the same object count, and
the forward pass keeps what the hand-written backward pass needs.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .instance import Instance, atomic_write_bytes

ACTOR_NAMES = ("enc_W", "enc_b", "gru_Wx", "gru_Wh", "gru_bx", "gru_bh",
               "att_W1", "att_W2", "att_v", "h0")
CRITIC_NAMES = ("enc_W", "enc_b", "crit_W2", "crit_b2", "crit_W3", "crit_b3", "crit_W4", "crit_b4")
SHARED_NAMES = ("enc_W", "enc_b")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    M: int = 2
    d_h: int = 128
    init_seed: int = 0

    def __post_init__(self):
        if self.M not in (2, 3):
            raise ConfigError(f"M must be 2 or 3, got {self.M}")
        if self.d_h < 1:
            raise ConfigError("d_h must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Actor and critic parameters in one table.

    The critic's first layer *is* the encoder (``enc_W``/``enc_b``); there is
    no separate copy. Weights are U(-1/sqrt(d_h), 1/sqrt(d_h)); biases and
    the initial hidden state start at zero.
    """
    d, M = cfg.d_h, cfg.M
    rng = np.random.default_rng(cfg.init_seed)
    bound = 1.0 / np.sqrt(d)

    def w(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return {
        "enc_W": w(d, M), "enc_b": np.zeros(d),
        "gru_Wx": w(3 * d, d), "gru_Wh": w(3 * d, d),
        "gru_bx": np.zeros(3 * d), "gru_bh": np.zeros(3 * d),
        "att_W1": w(d, d), "att_W2": w(d, d), "att_v": w(d),
        "h0": np.zeros(d),
        "crit_W2": w(d, d), "crit_b2": np.zeros(d),
        "crit_W3": w(d, d), "crit_b3": np.zeros(d),
        "crit_W4": w(1, d), "crit_b4": np.zeros(1),
    }


def param_count(params: dict[str, np.ndarray], names: Sequence[str] = ACTOR_NAMES) -> int:
    return int(sum(params[k].size for k in names))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def encode(X: np.ndarray, params) -> np.ndarray:
    """Object embeddings: (..., n, M) -> (..., n, d_h)."""
    return X @ params["enc_W"].T + params["enc_b"]


def attention_logits(e: np.ndarray, h: np.ndarray, params) -> np.ndarray:
    """Scores ``v . tanh(W1 e_j + W2 h)`` for every object: (B, n, d), (B, d) -> (B, n)."""
    pre = e @ params["att_W1"].T + (h @ params["att_W2"].T)[..., None, :]
    return np.tanh(pre) @ params["att_v"]


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities over unmasked entries; masked entries get -inf.

    ``mask`` is True where an object is already taken.
    """
    z = np.where(mask, -np.inf, logits)
    top = z.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise RuntimeError("every position is masked")
    shifted = z - top
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def gru_cell(x, h, params):
    """One GRU step. Returns the new state and the gate values for backprop."""
    d = h.shape[-1]
    gx = x @ params["gru_Wx"].T + params["gru_bx"]
    gh = h @ params["gru_Wh"].T + params["gru_bh"]
    r = _sigmoid(gx[:, :d] + gh[:, :d])
    z = _sigmoid(gx[:, d:2 * d] + gh[:, d:2 * d])
    cand = np.tanh(gx[:, 2 * d:] + r * gh[:, 2 * d:])
    h_new = (1.0 - z) * cand + z * h
    return h_new, (r, z, cand, gh[:, 2 * d:])


def _choose(logp: np.ndarray, mode: str, rng) -> np.ndarray:
    if mode == "greedy":
        return np.argmax(logp, axis=1)  # first maximum wins ties
    probs = np.exp(logp)
    cdf = np.cumsum(probs, axis=1)
    draws = rng.random(len(probs)) * cdf[:, -1]
    picks = (cdf <= draws[:, None]).sum(axis=1)
    # float round-off can push a draw past the last open slot; clamp back
    last_open = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    picks = np.minimum(picks, last_open)
    return picks


@dataclass
class DecodeBatch:
    actions: np.ndarray   # (B, n) chosen object per step
    log_probs: np.ndarray  # (B, n) log-probability of each choice
    cache: dict | None = None


def decode_batch(params, X: np.ndarray, mode: str = "sample", rng=None,
                 actions: np.ndarray | None = None, keep_cache: bool = False) -> DecodeBatch:
    """Roll the decoder for a batch of same-size instances.

    ``mode`` is "sample" or "greedy"; passing ``actions`` replays a fixed
    order instead and only scores it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ConfigError("X must have shape (batch, n, M)")
    if X.shape[2] != params["enc_W"].shape[1]:
        raise ConfigError(f"instances have {X.shape[2]} dims, model expects {params['enc_W'].shape[1]}")
    if mode not in ("sample", "greedy"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample" and actions is None and rng is None:
        raise ValueError("sampling needs an rng")
    B, n, _ = X.shape
    d = params["h0"].shape[0]
    rows = np.arange(B)

    e = encode(X, params)
    We = e @ params["att_W1"].T
    h = np.broadcast_to(params["h0"], (B, d)).copy()
    x = np.zeros((B, d))
    mask = np.zeros((B, n), dtype=bool)
    chosen = np.empty((B, n), dtype=np.int64)
    log_probs = np.empty((B, n))
    steps = []
    for t in range(n):
        h_prev = h
        h, gates = gru_cell(x, h_prev, params)
        a = np.tanh(We + (h @ params["att_W2"].T)[:, None, :])
        u = a @ params["att_v"]
        logp = masked_log_softmax(u, mask)
        pick = actions[:, t] if actions is not None else _choose(logp, mode, rng)
        if mask[rows, pick].any():
            raise RuntimeError("decoder selected an object twice")
        chosen[:, t] = pick
        log_probs[:, t] = logp[rows, pick]
        if keep_cache:
            steps.append({"x": x, "h_prev": h_prev, "h": h, "gates": gates, "a": a, "logp": logp})
        mask[rows, pick] = True
        x = e[rows, pick]
    cache = {"X": X, "e": e, "steps": steps} if keep_cache else None
    return DecodeBatch(chosen, log_probs, cache)


def actor_backward(params, batch: DecodeBatch, coef: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of ``sum_b coef[b] * sum_t log_probs[b, t]`` w.r.t. the actor parameters."""
    cache = batch.cache
    if cache is None:
        raise ValueError("decode_batch was run without keep_cache=True")
    X, e, steps = cache["X"], cache["e"], cache["steps"]
    B, n, _ = X.shape
    d = params["h0"].shape[0]
    rows = np.arange(B)
    W1, W2, v = params["att_W1"], params["att_W2"], params["att_v"]
    Wx, Wh = params["gru_Wx"], params["gru_Wh"]
    coef = np.asarray(coef, dtype=np.float64).reshape(B)

    g = {k: np.zeros_like(params[k]) for k in ACTOR_NAMES}
    de = np.zeros_like(e)
    dWe = np.zeros_like(e)
    dh = np.zeros((B, d))
    for t in range(n - 1, -1, -1):
        s = steps[t]
        probs = np.exp(s["logp"])
        du = -coef[:, None] * probs
        du[rows, batch.actions[:, t]] += coef
        a = s["a"]
        g["att_v"] += np.einsum("bn,bnd->d", du, a)
        dpre = du[:, :, None] * v * (1.0 - a * a)
        dWe += dpre
        dq = dpre.sum(axis=1)
        g["att_W2"] += dq.T @ s["h"]
        dh = dh + dq @ W2

        r, z, cand, gh_n = s["gates"]
        h_prev, x = s["h_prev"], s["x"]
        dcand = dh * (1.0 - z)
        dz = dh * (h_prev - cand)
        dh_prev = dh * z
        dn = dcand * (1.0 - cand * cand)
        dr = dn * gh_n
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgx = np.concatenate([dr_pre, dz_pre, dn], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn * r], axis=1)
        g["gru_Wx"] += dgx.T @ x
        g["gru_bx"] += dgx.sum(axis=0)
        g["gru_Wh"] += dgh.T @ h_prev
        g["gru_bh"] += dgh.sum(axis=0)
        dh = dh_prev + dgh @ Wh
        if t > 0:
            # this step's input was the embedding of the previous choice
            de[rows, batch.actions[:, t - 1]] += dgx @ Wx
    g["h0"] += dh.sum(axis=0)
    g["att_W1"] += np.einsum("bnd,bnk->dk", dWe, e)
    de += dWe @ W1
    g["enc_W"] += np.einsum("bnd,bnm->dm", de, X)
    g["enc_b"] += de.sum(axis=(0, 1))
    return g


@dataclass
class DecodeTrace:
    order: list[int]
    step_log_probs: list[float]
    mode: str

    @property
    def log_prob(self) -> float:
        return float(sum(self.step_log_probs))


def decode(instance: Instance, params, mode: str = "greedy", rng=None) -> DecodeTrace:
    """Order one instance: sampled from the policy or greedy (highest probability)."""
    batch = decode_batch(params, instance.as_array()[None], mode=mode, rng=rng)
    return DecodeTrace([int(i) for i in batch.actions[0]], [float(v) for v in batch.log_probs[0]], mode)


def group_by_size(instances: Sequence[Instance]) -> dict[int, list[int]]:
    """Indices of instances bucketed by object count, for batching."""
    groups: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault(inst.n, []).append(i)
    return groups


def decode_many(instances: Sequence[Instance], params, mode: str = "greedy", rng=None,
                chunk: int = 256) -> list[DecodeTrace]:
    traces: list[DecodeTrace | None] = [None] * len(instances)
    for _, idx in sorted(group_by_size(instances).items()):
        for start in range(0, len(idx), chunk):
            part = idx[start:start + chunk]
            X = np.stack([instances[i].as_array() for i in part])
            batch = decode_batch(params, X, mode=mode, rng=rng)
            for row, i in enumerate(part):
                traces[i] = DecodeTrace([int(v) for v in batch.actions[row]],
                                        [float(v) for v in batch.log_probs[row]], mode)
    return traces


CHECKPOINT_VERSION = 1


def save_checkpoint(path, cfg: ModelConfig, params: dict[str, np.ndarray],
                    extra_arrays: dict[str, np.ndarray] | None = None,
                    extra_meta: dict | None = None) -> None:
    """Write config, parameters and optional training state to one .npz file."""
    meta = {"version": CHECKPOINT_VERSION, "model": cfg.to_dict(), "extra": extra_meta or {}}
    arrays = {f"param/{k}": v for k, v in params.items()}
    for k, v in (extra_arrays or {}).items():
        arrays[f"extra/{k}"] = v
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Return ``(ModelConfig, params, extra_arrays, extra_meta)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
        extra = {k[len("extra/"):]: data[k].copy() for k in data.files if k.startswith("extra/")}
    cfg = ModelConfig(**meta["model"])
    missing = set(ACTOR_NAMES + CRITIC_NAMES) - set(params)
    if missing:
        raise ValueError(f"checkpoint is missing parameters {sorted(missing)}")
    return cfg, params, extra, meta["extra"]
