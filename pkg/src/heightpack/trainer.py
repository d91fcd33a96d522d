"""On-policy actor-critic training of the pointer-network policy.

Per batch: sample orders with the current actor, pack them, score the
packings with the penalty, then take one Adam step for the actor on
``mean((R - V) * sum log p)`` and one for the critic on ``mean((R - V)^2)``.
The advantage is a constant inside the actor loss. Both losses are
descended, so orders that cost more than the critic expected become less
likely.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .instance import GenConfig, Instance, atomic_write_text, generate_dataset
from .metrics import RewardConfig, penalty
from .placement import PackingResult, pack_sequence
from .policy import (ACTOR_NAMES, CRITIC_NAMES, DecodeTrace, ModelConfig, actor_backward,
                     decode_batch, decode_many, encode, group_by_size, init_params,
                     load_checkpoint, save_checkpoint)

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message if dump_path is None else f"{message} (batch dumped to {dump_path})")
        self.dump_path = dump_path


# -- critic -----------------------------------------------------------------

def critic_forward(params, X: np.ndarray):
    """Value estimate per instance: shared encoder, three more width-1 convs, mean over objects."""
    e = encode(X, params)
    c1 = np.maximum(e, 0.0)
    p2 = c1 @ params["crit_W2"].T + params["crit_b2"]
    c2 = np.maximum(p2, 0.0)
    p3 = c2 @ params["crit_W3"].T + params["crit_b3"]
    c3 = np.maximum(p3, 0.0)
    out = (c3 @ params["crit_W4"].T + params["crit_b4"])[..., 0]
    V = out.mean(axis=-1)
    return V, {"X": X, "e": e, "c1": c1, "c2": c2, "c3": c3}


def critic_backward(params, cache, dV: np.ndarray) -> dict[str, np.ndarray]:
    X, e, c1, c2, c3 = (cache[k] for k in ("X", "e", "c1", "c2", "c3"))
    n = X.shape[1]
    dout = np.broadcast_to((np.asarray(dV) / n)[:, None], X.shape[:2])
    g = {}
    g["crit_W4"] = np.einsum("bn,bnd->d", dout, c3)[None, :]
    g["crit_b4"] = np.array([dout.sum()])
    dp3 = dout[..., None] * params["crit_W4"][0] * (c3 > 0)
    g["crit_W3"] = np.einsum("bnd,bnk->dk", dp3, c2)
    g["crit_b3"] = dp3.sum(axis=(0, 1))
    dp2 = (dp3 @ params["crit_W3"]) * (c2 > 0)
    g["crit_W2"] = np.einsum("bnd,bnk->dk", dp2, c1)
    g["crit_b2"] = dp2.sum(axis=(0, 1))
    de = (dp2 @ params["crit_W2"]) * (e > 0)
    g["enc_W"] = np.einsum("bnd,bnm->dm", de, X)
    g["enc_b"] = de.sum(axis=(0, 1))
    return g


def critic_value(instance: Instance, params) -> float:
    V, _ = critic_forward(params, instance.as_array()[None])
    return float(V[0])


def losses(log_prob_sum: float, R: float, V: float) -> tuple[float, float]:
    """Single-trajectory actor and critic losses."""
    adv = R - V
    return adv * log_prob_sum, adv * adv


# -- optimiser ----------------------------------------------------------------

class Adam:
    def __init__(self, names: Sequence[str], params, lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.names = tuple(names)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k]) for k in self.names}
        self.v = {k: np.zeros_like(params[k]) for k in self.names}

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in self.names:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            # in-place so arrays shared between actor and critic stay shared
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array(self.t, dtype=np.int64)}
        for k in self.names:
            out[f"{prefix}/m/{k}"] = self.m[k]
            out[f"{prefix}/v/{k}"] = self.v[k]
        return out

    def load_state(self, arrays, prefix: str) -> None:
        self.t = int(arrays[f"{prefix}/t"])
        for k in self.names:
            self.m[k] = arrays[f"{prefix}/m/{k}"].copy()
            self.v[k] = arrays[f"{prefix}/v/{k}"].copy()


def grad_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grads(grads, max_norm: float):
    norm = grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


# -- rollouts ---------------------------------------------------------------

@dataclass
class Rollout:
    trace: DecodeTrace
    result: PackingResult
    penalty: float


def _rollout_group(instances, params, rng, reward_cfg, keep_cache):
    X = np.stack([inst.as_array() for inst in instances])
    batch = decode_batch(params, X, mode="sample", rng=rng, keep_cache=keep_cache)
    results = [pack_sequence(inst, order) for inst, order in zip(instances, batch.actions)]
    R = np.array([penalty(r, reward_cfg) for r in results])
    return batch, results, R


def rollout(instances: Sequence[Instance], params, rng,
            reward_cfg: RewardConfig = RewardConfig()) -> list[Rollout]:
    """Sample an order per instance from the current policy, pack it and score it."""
    out: list[Rollout | None] = [None] * len(instances)
    for _, idx in sorted(group_by_size(instances).items()):
        batch, results, R = _rollout_group([instances[i] for i in idx], params, rng, reward_cfg, False)
        for row, i in enumerate(idx):
            trace = DecodeTrace([int(v) for v in batch.actions[row]],
                                [float(v) for v in batch.log_probs[row]], "sample")
            out[i] = Rollout(trace, results[row], float(R[row]))
    return out


def greedy_penalties(instances: Sequence[Instance], params,
                     reward_cfg: RewardConfig = RewardConfig()) -> np.ndarray:
    traces = decode_many(instances, params, mode="greedy")
    return np.array([penalty(pack_sequence(inst, tr.order), reward_cfg)
                     for inst, tr in zip(instances, traces)])


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    mode: str = "2d"
    n: int | None = None            # objects per generated instance; None keeps the mode default
    learning_rate: float = 5e-4
    batch_size: int = 50
    epochs: int = 5
    train_size: int = 100_000
    val_size: int = 10_000
    alpha: float = 0.5
    beta: float = 0.5
    seed: int = 0
    d_h: int = 128
    clip_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1 or self.train_size < 1 or self.val_size < 1:
            raise ValueError("batch_size, epochs, train_size and val_size must be positive")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("need alpha, beta >= 0 with alpha + beta > 0")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Reduced setting that trains in minutes on one core (gradients clipped at norm 2)."""
        base = dict(mode="2d", n=10, train_size=10_000, val_size=1_000, epochs=3, clip_norm=2.0)
        base.update(overrides)
        return cls(**base)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(alpha=self.alpha, beta=self.beta)

    def gen_config(self, seed: int) -> GenConfig:
        return GenConfig.preset(self.mode, n=self.n, seed=seed)

    def updates_per_network(self) -> int:
        return self.epochs * math.ceil(self.train_size / self.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)


def make_datasets(cfg: TrainConfig) -> tuple[list[Instance], list[Instance]]:
    """Training and validation sets drawn from disjoint generator streams."""
    train = generate_dataset(cfg.gen_config(seed=2 * cfg.seed + 1), cfg.train_size)
    val = generate_dataset(cfg.gen_config(seed=2 * cfg.seed + 2), cfg.val_size)
    return train, val


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def updates(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "update"]

    def epochs(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "epoch"]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        atomic_write_text(path, self.dumps())


@dataclass
class TrainState:
    model_cfg: ModelConfig
    params: dict
    actor_opt: Adam
    critic_opt: Adam
    rng: np.random.Generator
    epochs_done: int = 0
    log: TrainLog = field(default_factory=TrainLog)


def new_state(cfg: TrainConfig, M: int) -> TrainState:
    model_cfg = ModelConfig(M=M, d_h=cfg.d_h, init_seed=cfg.seed)
    params = init_params(model_cfg)
    return TrainState(model_cfg, params,
                      Adam(ACTOR_NAMES, params, lr=cfg.learning_rate),
                      Adam(CRITIC_NAMES, params, lr=cfg.learning_rate),
                      np.random.default_rng([cfg.seed, 7]))


def save_state(path, state: TrainState, cfg: TrainConfig) -> None:
    arrays = {**state.actor_opt.state_arrays("adam_actor"), **state.critic_opt.state_arrays("adam_critic")}
    meta = {"train_config": cfg.to_dict(), "epochs_done": state.epochs_done,
            "rng_state": state.rng.bit_generator.state, "log": state.log.records}
    save_checkpoint(path, state.model_cfg, state.params, extra_arrays=arrays, extra_meta=meta)


def load_state(path) -> tuple[TrainState, TrainConfig]:
    model_cfg, params, arrays, meta = load_checkpoint(path)
    if "train_config" not in meta:
        raise ValueError(f"{path} holds a model but no training state")
    cfg = TrainConfig(**meta["train_config"])
    actor_opt = Adam(ACTOR_NAMES, params, lr=cfg.learning_rate)
    critic_opt = Adam(CRITIC_NAMES, params, lr=cfg.learning_rate)
    actor_opt.load_state(arrays, "adam_actor")
    critic_opt.load_state(arrays, "adam_critic")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return TrainState(model_cfg, params, actor_opt, critic_opt, rng,
                      meta["epochs_done"], TrainLog(list(meta["log"]))), cfg


def _dump_batch(path: Path, instances, details: dict) -> str:
    payload = {"instances": [inst.to_record() for inst in instances], **details}
    atomic_write_text(path, json.dumps(payload, sort_keys=True, default=lambda o: np.asarray(o).tolist()))
    return str(path)


def train_step(state: TrainState, instances: Sequence[Instance], cfg: TrainConfig,
               dump_dir: Path | None = None) -> dict:
    """One rollout plus one actor update and one critic update on a batch."""
    params = state.params
    reward_cfg = cfg.reward_config()
    B = len(instances)
    grads_a = {k: np.zeros_like(params[k]) for k in ACTOR_NAMES}
    grads_c = {k: np.zeros_like(params[k]) for k in CRITIC_NAMES}
    R_all, V_all, lp_all = [], [], []
    for _, idx in sorted(group_by_size(instances).items()):
        group = [instances[i] for i in idx]
        batch, _, R = _rollout_group(group, params, state.rng, reward_cfg, keep_cache=True)
        V, ccache = critic_forward(params, batch.cache["X"])
        adv = R - V
        for k, g in actor_backward(params, batch, adv / B).items():
            grads_a[k] += g
        for k, g in critic_backward(params, ccache, -2.0 * adv / B).items():
            grads_c[k] += g
        R_all.append(R)
        V_all.append(V)
        lp_all.append(batch.log_probs.sum(axis=1))
    R, V, lp = (np.concatenate(a) for a in (R_all, V_all, lp_all))
    adv = R - V
    record = {
        "kind": "update",
        "penalty": float(R.mean()),
        "value": float(V.mean()),
        "actor_loss": float(np.mean(adv * lp)),
        "critic_loss": float(np.mean(adv * adv)),
        "actor_grad_norm": grad_norm(grads_a),
        "critic_grad_norm": grad_norm(grads_c),
    }
    if not all(math.isfinite(v) for v in record.values() if isinstance(v, float)):
        dump = None
        if dump_dir is not None:
            dump = _dump_batch(Path(dump_dir) / "divergent_batch.json", instances,
                               {"record": record, "penalty": R, "value": V, "log_prob": lp})
        raise TrainingDivergence(f"non-finite loss or gradient: {record}", dump)
    if cfg.clip_norm is not None:
        grads_a = clip_grads(grads_a, cfg.clip_norm)
        grads_c = clip_grads(grads_c, cfg.clip_norm)
    state.actor_opt.step(params, grads_a)
    state.critic_opt.step(params, grads_c)
    return record


def train(cfg: TrainConfig, train_set: Sequence[Instance] | None = None,
          val_set: Sequence[Instance] | None = None, out_dir=None,
          state: TrainState | None = None, stop_after_epoch: int | None = None,
          progress=None) -> tuple[TrainState, TrainLog]:
    """Train (or continue training) and return the final state and its log.

    With ``out_dir`` set, a checkpoint is written after every epoch as
    ``epoch_<k>.npz`` plus ``last.npz``, and the log as ``train_log.jsonl``.
    """
    if train_set is None or val_set is None:
        gen_train, gen_val = make_datasets(cfg)
        train_set = gen_train if train_set is None else train_set
        val_set = gen_val if val_set is None else val_set
    if not train_set or not val_set:
        raise ValueError("training and validation sets must be non-empty")
    M = train_set[0].ndim
    if state is None:
        state = new_state(cfg, M)
    elif state.model_cfg.M != M:
        raise ValueError("checkpoint and dataset disagree on dimensionality")
    out = Path(out_dir) if out_dir is not None else None
    reward_cfg = cfg.reward_config()
    last_epoch = cfg.epochs if stop_after_epoch is None else min(cfg.epochs, stop_after_epoch)

    for epoch in range(state.epochs_done, last_epoch):
        order = state.rng.permutation(len(train_set))
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            record = train_step(state, batch, cfg, dump_dir=out)
            state.log.records.append({"epoch": epoch, "step": step, **record})
        val = float(greedy_penalties(val_set, state.params, reward_cfg).mean())
        state.log.records.append({"kind": "epoch", "epoch": epoch, "val_penalty": val})
        state.epochs_done = epoch + 1
        if progress is not None:
            progress(epoch, val)
        log.info("epoch %d: validation penalty %.6f", epoch, val)
        if out is not None:
            save_state(out / f"epoch_{epoch + 1}.npz", state, cfg)
            save_state(out / "last.npz", state, cfg)
            state.log.write(out / "train_log.jsonl")
    return state, state.log


def resume(path, train_set=None, val_set=None, out_dir=None, **overrides) -> tuple[TrainState, TrainLog]:
    """Continue a run from a checkpoint written by ``train``."""
    state, cfg = load_state(path)
    if overrides:
        cfg = replace(cfg, **overrides)
    return train(cfg, train_set, val_set, out_dir=out_dir, state=state)
