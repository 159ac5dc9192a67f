"""Dynamics models, neighbor weighting and intrinsic-reward formulas."""

import logging

import numpy as np
import pytest

from cohet.intrinsic import (
    DISTANCE_FLOOR,
    DynamicsModel,
    RewardRecord,
    intrinsic_reward_self,
    intrinsic_reward_team,
    mix_rewards,
    neighbor_weights,
    predict_next,
    train_dynamics_step,
    train_from_replay,
)


def _model(obs_dim=4, action_dim=2, hidden=8, owner=0, seed=0, capacity=100):
    return DynamicsModel(obs_dim, action_dim, hidden, owner_id=owner,
                         init_rng=np.random.default_rng(seed), lr=1e-2,
                         replay_capacity=capacity)


# --- prediction ------------------------------------------------------------------

def test_predict_zero_model_gives_zero():
    m = _model()
    for w in m.f.weights:
        w[:] = 0.0
    assert np.array_equal(predict_next(m.f, np.ones(4), np.ones(2)), np.zeros(4))


def test_self_prediction_is_plain_forward():
    m = _model(seed=3)
    o, a = np.ones(4) * 0.3, np.array([0.1, -0.2])
    from cohet.nn import mlp_forward
    expect, _ = mlp_forward(m.f, np.concatenate([o, a]))
    assert np.array_equal(predict_next(m.f, o, a), expect)


def test_predict_rejects_bad_dims():
    m = _model()
    with pytest.raises(ValueError):
        predict_next(m.f, np.ones(5), np.ones(2))


# --- replay ownership --------------------------------------------------------------

def test_replay_rejects_foreign_transitions():
    m = _model(owner=2)
    with pytest.raises(ValueError, match="agent 2"):
        m.replay.push(np.zeros(4), np.zeros(2), np.zeros(4), owner_id=1)


def test_replay_fifo_overwrites_oldest():
    m = _model(capacity=3)
    for k in range(5):
        m.replay.push(np.full(4, float(k)), np.zeros(2), np.zeros(4), owner_id=0)
    assert m.replay.size == 3
    stored = {m.replay.obs[i][0] for i in range(3)}
    assert stored == {2.0, 3.0, 4.0}


def test_empty_replay_training_is_noop_with_warning(caplog):
    m = _model()
    with caplog.at_level(logging.WARNING):
        out = train_from_replay(m, np.random.default_rng(0), 8)
    assert out is None
    assert "replay empty" in caplog.text


# --- dynamics training ---------------------------------------------------------------

def test_perfect_predictions_zero_loss_fixed_params():
    m = _model(seed=5)
    rng = np.random.default_rng(1)
    obs = rng.standard_normal((16, 4))
    act = rng.standard_normal((16, 2))
    next_obs = predict_next(m.f, obs, act)  # targets already satisfied exactly
    before = [w.copy() for w in m.f.arrays()]
    loss = train_dynamics_step(m, (obs, act, next_obs))
    assert loss == 0.0
    for a, b in zip(m.f.arrays(), before):
        assert np.array_equal(a, b)  # zero gradient with zero moments is a fixed point


def test_loss_declines_on_linear_dynamics():
    # o' = A o + B a reachable by the MLP; 500 steps should cut loss by >10x
    rng = np.random.default_rng(9)
    A = rng.uniform(-0.5, 0.5, size=(4, 4))
    B = rng.uniform(-0.5, 0.5, size=(4, 2))
    m = _model(seed=6, capacity=2000)
    for _ in range(2000):
        o = rng.uniform(-1, 1, 4)
        a = rng.uniform(-1, 1, 2)
        m.replay.push(o, a, A @ o + B @ a, owner_id=0)
    sample_rng = np.random.default_rng(2)
    first = train_from_replay(m, sample_rng, 64)
    last = None
    for _ in range(500):
        last = train_from_replay(m, sample_rng, 64)
    assert last < 0.1 * first


def test_training_deterministic_given_seed():
    def run():
        m = _model(seed=7, capacity=50)
        rng = np.random.default_rng(3)
        for _ in range(50):
            m.replay.push(rng.standard_normal(4), rng.standard_normal(2),
                          rng.standard_normal(4), owner_id=0)
        s = np.random.default_rng(4)
        return [train_from_replay(m, s, 16) for _ in range(10)]

    assert run() == run()


# --- neighbor weights ----------------------------------------------------------------

def test_single_neighbor_weight_is_one():
    w = neighbor_weights(np.zeros(2), np.array([[3.0, 4.0]]))
    assert np.array_equal(w, np.array([1.0]))


def test_weights_hand_computed_two_neighbors():
    # distances 5 and 1 -> inverse (0.2, 1.0) -> weights (1/6, 5/6)
    w = neighbor_weights(np.zeros(2), np.array([[3.0, 4.0], [1.0, 0.0]]))
    assert np.allclose(w, [1.0 / 6.0, 5.0 / 6.0], rtol=1e-14)


def test_weights_match_direct_formula_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        k = int(rng.integers(1, 5))
        p = rng.uniform(-1, 1, 2)
        neigh = rng.uniform(-1, 1, (k, 2))
        w = neighbor_weights(p, neigh)
        d = [1.0 / max(np.hypot(*(p - q)), DISTANCE_FLOOR) for q in neigh]
        assert np.allclose(w, np.array(d) / sum(d), rtol=1e-14)
        assert abs(w.sum() - 1.0) < 1e-12


def test_weight_monotonicity_nearer_is_larger():
    w = neighbor_weights(np.zeros(2), np.array([[0.2, 0.0], [0.5, 0.0], [1.5, 0.0]]))
    assert w[0] > w[1] > w[2]


def test_coincident_neighbor_uses_distance_floor():
    w = neighbor_weights(np.zeros(2), np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert np.isfinite(w).all() and abs(w.sum() - 1.0) < 1e-12
    assert w[0] > w[1]


def test_empty_neighbor_set_rejected():
    with pytest.raises(ValueError):
        neighbor_weights(np.zeros(2), np.zeros((0, 2)))


# --- intrinsic rewards ------------------------------------------------------------------

def test_team_exact_predictions_give_zero():
    o = np.array([1.0, 2.0])
    preds = np.stack([o, o])
    assert intrinsic_reward_team(o, preds, np.array([0.3, 0.7])) == 0.0


def test_team_single_neighbor_l2():
    o = np.zeros(2)
    preds = np.array([[3.0, 4.0]])
    assert intrinsic_reward_team(o, preds, np.array([1.0])) == -5.0


def test_team_weighted_sum_hand_case():
    # errors of norms 4 and 8 with weights (0.25, 0.75) -> -7
    o = np.zeros(1)
    preds = np.array([[4.0], [-8.0]])
    got = intrinsic_reward_team(o, preds, np.array([0.25, 0.75]))
    assert np.isclose(got, -7.0, rtol=1e-14)


def test_team_empty_set_gives_zero():
    assert intrinsic_reward_team(np.zeros(3), np.zeros((0, 3)), np.zeros(0)) == 0.0


def test_team_matches_double_loop_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        k = int(rng.integers(1, 6))
        dim = int(rng.integers(1, 9))
        o = rng.standard_normal(dim)
        preds = rng.standard_normal((k, dim))
        w = rng.random(k)
        w /= w.sum()
        got = intrinsic_reward_team(o, preds, w)
        total = 0.0
        for j in range(k):
            err = 0.0
            for d in range(dim):
                err += (o[d] - preds[j, d]) ** 2
            total += w[j] * np.sqrt(err)
        assert abs(got + total) < 1e-12
        assert got <= 0.0


def test_l1_norm_option():
    o = np.zeros(2)
    pred = np.array([[0.6, -0.8]])
    assert np.isclose(intrinsic_reward_team(o, pred, np.array([1.0]), norm="l1"), -1.4)
    assert np.isclose(intrinsic_reward_self(o, pred[0], norm="l1"), -1.4)


def test_self_reward_formula():
    assert np.isclose(intrinsic_reward_self(np.zeros(2), np.array([0.6, 0.8])), -1.0)
    assert intrinsic_reward_self(np.ones(3), np.ones(3)) == 0.0


def test_self_equals_team_with_singleton():
    rng = np.random.default_rng(13)
    o = rng.standard_normal(4)
    pred = rng.standard_normal(4)
    a = intrinsic_reward_self(o, pred)
    b = intrinsic_reward_team(o, pred[None, :], np.array([1.0]))
    assert np.isclose(a, b, rtol=1e-15)


# --- reward mixing -------------------------------------------------------------------------

def test_mix_rewards_values():
    assert mix_rewards(1.0, -0.5, 0.0) == 1.0
    assert np.isclose(mix_rewards(1.0, -0.5, 0.01), 0.995)
    with pytest.raises(ValueError):
        mix_rewards(0.0, 0.0, -1.0)


def test_mix_linear_in_beta():
    r_ext, r_int = 0.7, -0.3
    betas = np.linspace(0, 1, 11)
    vals = np.array([mix_rewards(r_ext, r_int, b) for b in betas])
    assert np.allclose(vals, r_ext + betas * r_int, rtol=1e-15)


def test_reward_record_invariant():
    rec = RewardRecord(r_ext=1.0, r_int=-0.25, beta=0.1)
    assert rec.r_total == 1.0 + 0.1 * -0.25
    with pytest.raises(ValueError):
        RewardRecord(r_ext=0.0, r_int=0.0, beta=-0.1)
