import json

import numpy as np
import pytest

from conftest import actor_gradient_error, critic_gradient_error
from heightpack.instance import GenConfig, Instance, generate_dataset
from heightpack.policy import ACTOR_NAMES, CRITIC_NAMES, ModelConfig, init_params
from heightpack.trainer import (Adam, TrainConfig, TrainingDivergence, clip_grads,
                                critic_forward, critic_value, grad_norm, load_state, losses,
                                make_datasets, new_state, resume, rollout, train, train_step)


def _small_params(M=2, d_h=4, seed=0, rng=None):
    params = init_params(ModelConfig(M=M, d_h=d_h, init_seed=seed))
    if rng is not None:
        # biases start at zero; perturb them so their gradients are exercised too
        for k in params:
            params[k] = params[k] + rng.normal(scale=0.3, size=params[k].shape)
    return params


def test_critic_zero_layers_give_zero():
    p = _small_params()
    for k in CRITIC_NAMES:
        if k.startswith("crit"):
            p[k] = np.zeros_like(p[k])
    V, _ = critic_forward(p, np.ones((3, 5, 2)))
    assert not V.any()


def test_critic_hand_example():
    p = _small_params(d_h=2)
    p.update(enc_W=np.eye(2), enc_b=np.zeros(2), crit_W2=np.eye(2), crit_b2=np.zeros(2),
             crit_W3=np.eye(2), crit_b3=np.zeros(2), crit_W4=np.array([[1.0, 1.0]]), crit_b4=np.array([-1.0]))
    # relu(e) = [[1, 2], [3, 0]] -> per-object outputs 2 and 2
    V, _ = critic_forward(p, np.array([[[1.0, 2.0], [3.0, -1.0]]]))
    assert V.tolist() == [2.0]


def test_critic_permutation_invariant(rng):
    p = _small_params(d_h=8, rng=rng)
    X = rng.integers(1, 6, (1, 9, 2)).astype(float)
    V1, _ = critic_forward(p, X)
    V2, _ = critic_forward(p, X[:, rng.permutation(9)])
    assert V1[0] == pytest.approx(V2[0], rel=1e-13)
    inst = Instance(objects=tuple(map(tuple, X[0].astype(int))), box=(10, 10))
    assert critic_value(inst, p) == pytest.approx(V1[0], rel=1e-13)


def test_loss_examples():
    assert losses(-3.0, 0.5, 0.5) == (0.0, 0.0)
    a, c = losses(-3.0, 0.75, 0.5)
    assert a == pytest.approx(-0.75) and c == pytest.approx(0.0625)


def test_shifting_reward_and_value_leaves_actor_loss():
    for shift in (-3.0, 0.25, 10.0):
        assert losses(-2.0, 0.8 + shift, 0.3 + shift)[0] == pytest.approx(losses(-2.0, 0.8, 0.3)[0])


@pytest.mark.parametrize("seed", range(5))
def test_actor_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = _small_params(d_h=4, seed=seed, rng=rng)
    X = rng.integers(1, 6, (3, 3, 2)).astype(float)
    actions = np.stack([rng.permutation(3) for _ in range(3)])
    assert actor_gradient_error(p, X, actions, rng.normal(size=3)) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_critic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = _small_params(M=3, d_h=4, seed=seed, rng=rng)
    X = rng.integers(2, 6, (4, 3, 3)).astype(float)
    assert critic_gradient_error(p, X, rng.uniform(0, 5, size=4)) < 1e-6


def test_adam_first_step_is_lr_sign():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    Adam(["w"], p, lr=0.1).step(p, {"w": np.array([3.0, -0.2, 0.0])})
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 0.5], atol=1e-9)


def test_clip_grads():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped = clip_grads(g, 1.0)
    assert grad_norm(clipped) == pytest.approx(1.0)
    assert clip_grads(g, 10.0) is g


def _tiny_cfg(**kw):
    base = dict(mode="2d", n=5, batch_size=4, epochs=2, train_size=12, val_size=4, d_h=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_critic_step_moves_shared_encoder():
    cfg = _tiny_cfg()
    state = new_state(cfg, 2)
    before = {k: v.copy() for k, v in state.params.items()}
    grads = {k: np.ones_like(state.params[k]) for k in CRITIC_NAMES}
    state.critic_opt.step(state.params, grads)
    assert not np.array_equal(state.params["enc_W"], before["enc_W"])
    for k in set(ACTOR_NAMES) - set(CRITIC_NAMES):
        assert np.array_equal(state.params[k], before[k])


def test_zero_learning_rate_keeps_params_bit_identical():
    cfg = _tiny_cfg(learning_rate=0.0)
    state = new_state(cfg, 2)
    before = {k: v.tobytes() for k, v in state.params.items()}
    train_step(state, make_datasets(cfg)[0][:4], cfg)
    assert {k: v.tobytes() for k, v in state.params.items()} == before


def test_update_count_of_full_setting():
    cfg = TrainConfig()
    assert cfg.updates_per_network() == 10_000
    assert 2 * cfg.updates_per_network() == 20_000
    assert TrainConfig.desk().updates_per_network() == 600


def test_rollout_deterministic_and_single_object():
    cfg = _tiny_cfg()
    params = new_state(cfg, 2).params
    insts = generate_dataset(GenConfig.preset("2d", n=6, seed=1), 5) + [Instance(objects=((2, 2),), box=(10, 10))]
    a = rollout(insts, params, np.random.default_rng(0))
    b = rollout(insts, params, np.random.default_rng(0))
    assert [r.trace for r in a] == [r.trace for r in b]
    assert [r.penalty for r in a] == [r.penalty for r in b]
    single = a[-1]
    assert single.trace.order == [0] and single.trace.log_prob == 0.0
    assert single.penalty == pytest.approx(5 * 0.5 * (1 - 4 / 20))


def test_train_step_record_fields():
    cfg = _tiny_cfg()
    state = new_state(cfg, 2)
    rec = train_step(state, make_datasets(cfg)[0][:4], cfg)
    assert set(rec) == {"kind", "penalty", "value", "actor_loss", "critic_loss",
                        "actor_grad_norm", "critic_grad_norm"}
    assert state.actor_opt.t == 1 and state.critic_opt.t == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_dumps_batch(tmp_path):
    cfg = _tiny_cfg()
    state = new_state(cfg, 2)
    state.params["crit_b4"][...] = np.inf
    batch = make_datasets(cfg)[0][:4]
    with pytest.raises(TrainingDivergence) as err:
        train_step(state, batch, cfg, dump_dir=tmp_path)
    dump = json.loads((tmp_path / "divergent_batch.json").read_text())
    assert err.value.dump_path == str(tmp_path / "divergent_batch.json")
    assert [Instance.from_record(r) for r in dump["instances"]] == batch


def test_train_writes_checkpoints_and_log(tmp_path):
    cfg = _tiny_cfg()
    state, tlog = train(cfg, out_dir=tmp_path)
    assert state.epochs_done == 2
    assert len(tlog.updates()) == 2 * 3 and len(tlog.epochs()) == 2
    for name in ("epoch_1.npz", "epoch_2.npz", "last.npz", "train_log.jsonl"):
        assert (tmp_path / name).exists()
    loaded, cfg2 = load_state(tmp_path / "last.npz")
    assert cfg2 == cfg
    assert loaded.log.records == tlog.records


def test_resume_is_bit_exact(tmp_path):
    cfg = _tiny_cfg(epochs=3)
    full, full_log = train(cfg, out_dir=tmp_path / "full")
    train(cfg, out_dir=tmp_path / "part", stop_after_epoch=1)
    resumed, resumed_log = resume(tmp_path / "part" / "epoch_1.npz", out_dir=tmp_path / "part")
    assert resumed_log.dumps() == full_log.dumps()
    for k in full.params:
        assert resumed.params[k].tobytes() == full.params[k].tobytes()
    assert (tmp_path / "part" / "train_log.jsonl").read_bytes() == (tmp_path / "full" / "train_log.jsonl").read_bytes()
