"""Per-agent world-dynamics models and neighbor-alignment intrinsic rewards.

Each agent owns a dynamics model f mapping (observation, action) to the
predicted next observation, trained by MSE on the agent's OWN transitions
only (a FIFO replay enforces ownership).  The intrinsic reward penalizes
misalignment between an agent's realized next observation and what its
neighbors' dynamics models forecast for it:

    team: r_int = -sum_j w_j * ||o' - f_j(o, a)||   over j in N^t & N^{t+1}
    self: r_int = -||o' - f_i(o, a)||

with inverse-distance weights w_j normalized over the surviving neighbor
set.  r_int is always <= 0 and exactly 0 on perfect predictions or an
empty neighbor intersection; the total reward is r_ext + beta * r_int.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import (AdamState, MLPParams, MLPSpec, adam_init, adam_step, mlp_backward,
                 mlp_forward, mlp_forward_nograd, mlp_init, mse_loss)

log = logging.getLogger(__name__)

DISTANCE_FLOOR = 1e-6  # metres; avoids division by zero for coincident agents


@dataclass
class RewardRecord:
    """Reward decomposition for one agent at one step; r_total is derived."""

    r_ext: float
    r_int: float
    beta: float
    r_total: float = None

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        self.r_total = self.r_ext + self.beta * self.r_int


def mix_rewards(r_ext: float, r_int: float, beta: float) -> float:
    if beta < 0.0:
        raise ValueError("beta must be >= 0")
    return r_ext + beta * r_int


class Replay:
    """Fixed-capacity FIFO of (obs, action, next_obs) transitions, single owner."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, owner_id: int):
        self.capacity = int(capacity)
        self.owner_id = owner_id
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, action_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.size = 0
        self._head = 0

    def push(self, obs, act, next_obs, owner_id: int):
        if owner_id != self.owner_id:
            raise ValueError(
                f"replay of agent {self.owner_id} rejected transition from agent {owner_id}"
            )
        self.obs[self._head] = obs
        self.act[self._head] = act
        self.next_obs[self._head] = next_obs
        self._head = (self._head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int):
        idx = rng.integers(0, self.size, size=batch)
        return self.obs[idx], self.act[idx], self.next_obs[idx]


class DynamicsModel:
    """One agent's learned transition model plus its optimizer and replay."""

    def __init__(self, obs_dim: int, action_dim: int, hidden: int, owner_id: int,
                 init_rng, lr: float = 3e-4, replay_capacity: int = 20000):
        # three affine layers (two ReLU hidden) from (obs || action) to next obs
        spec = MLPSpec((obs_dim + action_dim, hidden, hidden, obs_dim), activation="relu")
        self.f: MLPParams = mlp_init(spec, init_rng)
        self.adam: AdamState = adam_init(self.f.arrays(), lr=lr)
        self.replay = Replay(replay_capacity, obs_dim, action_dim, owner_id)
        self.owner_id = owner_id


def predict_next(f: MLPParams, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    """One forward pass of a dynamics model; obs/action may be batched."""
    x = np.concatenate([obs, action], axis=-1)
    return mlp_forward_nograd(f, x)


def train_dynamics_step(model: DynamicsModel, minibatch) -> float:
    """One Adam step on minibatch MSE; returns the pre-step loss."""
    obs, act, next_obs = minibatch
    x = np.concatenate([obs, act], axis=-1)
    pred, cache = mlp_forward(model.f, x)
    loss, grad_pred = mse_loss(pred, next_obs)
    grads, _ = mlp_backward(model.f, cache, grad_pred)
    adam_step(model.f.arrays(), grads.arrays(), model.adam)
    return loss


def train_from_replay(model: DynamicsModel, rng: np.random.Generator, batch: int):
    """Sample the agent's own replay and take one training step.

    Returns the pre-step loss, or None (with a warning) on an empty replay.
    """
    if model.replay.size == 0:
        log.warning("agent %d: dynamics training skipped, replay empty", model.owner_id)
        return None
    return train_dynamics_step(model, model.replay.sample(rng, batch))


def neighbor_weights(p_i: np.ndarray, neighbor_positions: np.ndarray) -> np.ndarray:
    """Inverse-distance weights over the neighbor set, normalized to sum 1."""
    neighbor_positions = np.asarray(neighbor_positions, dtype=np.float64)
    if neighbor_positions.shape[0] == 0:
        raise ValueError("neighbor_weights: empty neighbor set (handle upstream)")
    d = np.sqrt(np.sum((neighbor_positions - np.asarray(p_i)) ** 2, axis=1))
    inv = 1.0 / np.maximum(d, DISTANCE_FLOOR)
    return inv / inv.sum()


def _norm(v: np.ndarray, kind: str) -> float:
    if kind == "l2":
        return float(np.sqrt(np.sum(v * v)))
    if kind == "l1":
        return float(np.sum(np.abs(v)))
    raise ValueError(f"unknown norm {kind!r}")


def intrinsic_reward_team(next_obs: np.ndarray, predictions: np.ndarray,
                          weights: np.ndarray, norm: str = "l2") -> float:
    """Weighted misalignment penalty against neighbor predictions (<= 0).

    predictions has one row per surviving neighbor; an empty set gives 0.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape[0] == 0:
        return 0.0
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != predictions.shape[0]:
        raise ValueError("intrinsic_reward_team: weights/predictions length mismatch")
    total = 0.0
    for w, pred in zip(weights, predictions):
        total += float(w) * _norm(np.asarray(next_obs) - pred, norm)
    return -total


def intrinsic_reward_self(next_obs: np.ndarray, prediction: np.ndarray, norm: str = "l2") -> float:
    """Misalignment penalty against the agent's own prediction (<= 0)."""
    return -_norm(np.asarray(next_obs) - np.asarray(prediction), norm)
