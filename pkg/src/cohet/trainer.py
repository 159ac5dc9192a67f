"""Rollout collection, GAE, per-agent clipped PPO, and the training loop.

Algorithm modes:

* ``cohet_team``       - graph policy + neighbor-prediction intrinsic reward
* ``cohet_self``       - graph policy + own-prediction intrinsic reward
* ``baseline_hetgppo`` - graph policy, no intrinsic reward (beta forced 0)
* ``ippo``             - independent policy, no graph, no intrinsic reward

The modes form a lattice: ippo is the graph pipeline with all neighbor
terms removed, and baseline_hetgppo is bit-identical to a cohet run with
beta = 0 under the same seed.  To keep that equivalence exact, randomness
is split into named streams (traits, init, dynamics, ppo, and per-lane
env/policy streams) so that disabling one consumer never shifts another.

Each agent is optimized independently on the shared rollouts: gradients of
its clipped-surrogate + value + entropy loss touch only its own parameters
(communicated embeddings are treated as data).  The optional
``backprop_through_comm`` setting instead routes gradients across the
communication channel into sender encoders, trading strict decentralization
for the joint-training reading.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .envs import ParticleWorld, ScenarioSpec, draw_agent_specs
from .graph import CommGraph, build_comm_graph, neighbor_sets, trim_observation
from .intrinsic import (
    intrinsic_reward_self,
    intrinsic_reward_team,
    neighbor_weights,
    predict_next,
    train_from_replay,
)
from .nn import adam_step, gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grads, mlp_forward
from .policy import (
    AgentModels,
    ModelDims,
    clamp_agent_log_std,
    decode_action_value,
    encode_batch,
    encode_node,
    gnn_forward,
    head_backward_batch,
    head_forward_batch,
    init_agent_models,
    mlp_backward,
)

log = logging.getLogger(__name__)

ALGO_MODES = ("cohet_team", "cohet_self", "baseline_hetgppo", "ippo")


class TrainingDiverged(RuntimeError):
    """Raised when a NaN/Inf is detected during collection or updates."""


@dataclass
class PPOConfig:
    """Clipped-PPO hyperparameters."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    train_batch_size: int = 6000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if not self.clip_epsilon > 0.0:
            raise ValueError("clip_epsilon must be > 0")
        if self.epochs < 1 or self.minibatch_size < 1 or self.train_batch_size < 1:
            raise ValueError("epochs, minibatch_size, train_batch_size must be >= 1")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class AlgoSettings:
    """Algorithm-mode block: intrinsic reward and dynamics-model training."""

    mode: str = "cohet_team"
    beta: float = 0.01
    intrinsic_norm: str = "l2"
    backprop_through_comm: bool = False
    aggregation: str = "sum"
    dynamics_minibatch: int = 256
    dynamics_updates_per_step: float = 1.0
    dynamics_replay_capacity: int = 20000
    dynamics_lr: float = 3e-4

    def __post_init__(self):
        if self.mode not in ALGO_MODES:
            raise ValueError(f"unknown algo mode {self.mode!r} (choose from {ALGO_MODES})")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.intrinsic_norm not in ("l2", "l1"):
            raise ValueError("intrinsic_norm must be 'l2' or 'l1'")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError("aggregation must be 'sum' or 'mean'")
        if self.dynamics_updates_per_step < 0.0:
            raise ValueError("dynamics_updates_per_step must be >= 0")

    @property
    def effective_beta(self) -> float:
        """Baseline modes force beta to 0."""
        return self.beta if self.mode in ("cohet_team", "cohet_self") else 0.0

    @property
    def intrinsic_enabled(self) -> bool:
        return self.mode in ("cohet_team", "cohet_self") and self.effective_beta > 0.0


@dataclass
class Streams:
    """Per-purpose RNG streams derived from one root seed."""

    traits: np.random.Generator
    init: np.random.Generator
    dynamics: np.random.Generator
    ppo: np.random.Generator
    lane_env: list[np.random.Generator]
    lane_policy: list[np.random.Generator]


def make_streams(seed: int, n_envs: int) -> Streams:
    root = np.random.SeedSequence(seed)
    traits_ss, init_ss, dyn_ss, ppo_ss, lanes_ss = root.spawn(5)
    lane_env, lane_policy = [], []
    for lane_ss in lanes_ss.spawn(n_envs):
        env_ss, pol_ss = lane_ss.spawn(2)
        lane_env.append(np.random.default_rng(env_ss))
        lane_policy.append(np.random.default_rng(pol_ss))
    return Streams(
        traits=np.random.default_rng(traits_ss),
        init=np.random.default_rng(init_ss),
        dynamics=np.random.default_rng(dyn_ss),
        ppo=np.random.default_rng(ppo_ss),
        lane_env=lane_env,
        lane_policy=lane_policy,
    )


@dataclass
class TrajectoryBatch:
    """Time-aligned rollout data; lanes concatenated in fixed order."""

    obs: np.ndarray        # (S, N, obs_dim)
    next_obs: np.ndarray   # (S, N, obs_dim)
    x: np.ndarray          # (S, N, x_dim) non-absolute features
    z: np.ndarray          # (S, N, dz) communicated embeddings at time t
    actions: np.ndarray    # (S, N, 2)
    log_probs: np.ndarray  # (S, N)
    values: np.ndarray     # (S, N)
    r_ext: np.ndarray      # (S, N)
    r_int: np.ndarray      # (S, N)
    r_total: np.ndarray    # (S, N)
    beta: float
    dones: np.ndarray      # (S,) uint8
    lane_slices: list[tuple[int, int]]
    bootstrap_values: np.ndarray  # (n_lanes, N) V of the truncated tail state
    # communication graph snapshots, flattened over steps: at time t ...
    edge_step: np.ndarray  # (E,) global step index, ascending
    edge_recv: np.ndarray  # (E,)
    edge_send: np.ndarray  # (E,)
    edge_feat: np.ndarray  # (E, 4)
    # ... and at time t+1 (consumed by the intrinsic stage, kept for tests)
    edge2_step: np.ndarray
    edge2_recv: np.ndarray
    edge2_send: np.ndarray
    edge2_feat: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]


@dataclass
class _LaneData:
    arrays: dict
    edges_t: list
    edges_t1: list
    bootstrap: np.ndarray
    episode_returns: list  # per completed episode: (N,) extrinsic returns


def _obs_matrix(obs_list) -> np.ndarray:
    return np.stack([o.vector() for o in obs_list])


def _x_matrix(obs_list) -> np.ndarray:
    return np.stack([trim_observation(o) for o in obs_list])


def _lane_graph(env: ParticleWorld) -> CommGraph:
    radii = np.array([a.obs_radius for a in env.agents])
    return build_comm_graph(env.state.positions, env.state.velocities, radii, env.observations())


def _collect_lane(env: ParticleWorld, models: list[AgentModels], algo: AlgoSettings,
                  steps: int, policy_rng: np.random.Generator) -> _LaneData:
    n = env.spec.n_agents
    use_graph = algo.mode != "ippo"
    beta = algo.effective_beta
    dz = models[0].dims.embed_dim

    rec: dict[str, list] = {k: [] for k in
                            ("obs", "next_obs", "x", "z", "actions", "log_probs",
                             "values", "r_ext", "r_int", "r_total", "dones")}
    edges_t, edges_t1 = [], []
    episode_returns = []
    ep_ret = np.zeros(n)

    obs_list = env.observations()
    obs_vec = _obs_matrix(obs_list)
    graph = _lane_graph(env) if use_graph else None

    for _ in range(steps):
        x = graph.node_feats if use_graph else _x_matrix(obs_list)
        z = np.stack([encode_node(models[i], x[i]) for i in range(n)])
        actions = np.zeros((n, 2))
        log_probs = np.zeros(n)
        values = np.zeros(n)
        for i in range(n):
            if use_graph:
                rows = graph.edge_rows(i)
                senders = graph.edges[rows, 1]
                h = gnn_forward(models[i], z[i], senders, z[senders],
                                graph.edge_feats[rows], algo.aggregation)
            else:
                h = gnn_forward(models[i], z[i], np.zeros(0, dtype=np.int64), [], [])
            a, lp, v = decode_action_value(models[i], h, policy_rng)
            actions[i] = a
            log_probs[i] = lp
            values[i] = v

        positions_t = env.state.positions.copy()
        next_obs_list, r_ext, done = env.step(actions)
        next_obs_vec = _obs_matrix(next_obs_list)
        next_graph = _lane_graph(env) if use_graph else None

        r_int = np.zeros(n)
        if algo.intrinsic_enabled:
            if algo.mode == "cohet_self":
                for i in range(n):
                    pred = predict_next(models[i].dynamics.f, obs_vec[i], actions[i])
                    r_int[i] = intrinsic_reward_self(next_obs_vec[i], pred, algo.intrinsic_norm)
            else:  # cohet_team
                for i in range(n):
                    _, _, both = neighbor_sets(graph, next_graph, i)
                    if not both:
                        continue
                    surviving = np.array(sorted(both), dtype=np.int64)
                    preds = np.stack([
                        predict_next(models[j].dynamics.f, obs_vec[i], actions[i])
                        for j in surviving
                    ])
                    w = neighbor_weights(positions_t[i], positions_t[surviving])
                    r_int[i] = intrinsic_reward_team(next_obs_vec[i], preds, w, algo.intrinsic_norm)

        rec["obs"].append(obs_vec)
        rec["next_obs"].append(next_obs_vec)
        rec["x"].append(x)
        rec["z"].append(z)
        rec["actions"].append(actions)
        rec["log_probs"].append(log_probs)
        rec["values"].append(values)
        rec["r_ext"].append(r_ext)
        rec["r_int"].append(r_int)
        rec["r_total"].append(r_ext + beta * r_int)
        rec["dones"].append(1 if done else 0)
        if use_graph:
            edges_t.append((graph.edges, graph.edge_feats))
            edges_t1.append((next_graph.edges, next_graph.edge_feats))
        ep_ret += r_ext

        if done:
            episode_returns.append(ep_ret.copy())
            ep_ret = np.zeros(n)
            obs_list = env.reset()
            obs_vec = _obs_matrix(obs_list)
            graph = _lane_graph(env) if use_graph else None
        else:
            obs_list = next_obs_list
            obs_vec = next_obs_vec
            graph = next_graph

    # value of the tail state for GAE bootstrap (zero if the lane ended on a done)
    bootstrap = np.zeros(n)
    if steps > 0 and rec["dones"][-1] == 0:
        x_tail = graph.node_feats if use_graph else _x_matrix(obs_list)
        for i in range(n):
            z_i = encode_node(models[i], x_tail[i])
            if use_graph:
                rows = graph.edge_rows(i)
                senders = graph.edges[rows, 1]
                z_tail = np.stack([encode_node(models[j], x_tail[j]) for j in senders]) \
                    if senders.size else np.zeros((0, dz))
                h = gnn_forward(models[i], z_i, senders, z_tail,
                                graph.edge_feats[rows], algo.aggregation)
            else:
                h = gnn_forward(models[i], z_i, np.zeros(0, dtype=np.int64), [], [])
            v, _ = mlp_forward(models[i].value_decoder, h)
            bootstrap[i] = float(v[0])

    arrays = {k: (np.stack(v) if len(v) else np.zeros((0,))) for k, v in rec.items()}
    return _LaneData(arrays, edges_t, edges_t1, bootstrap, episode_returns)


def collect_rollout(envs: list[ParticleWorld], models: list[AgentModels],
                    algo: AlgoSettings, steps_per_env: int,
                    lane_policy_rngs: list[np.random.Generator],
                    threads: int = 1) -> tuple[TrajectoryBatch, dict]:
    """Run all lanes, merge in fixed lane order, fill replays.

    Lane results are independent of thread scheduling because every lane
    owns its RNG streams; the merge order is fixed, so the batch is
    deterministic for any ``threads``.
    """
    n = envs[0].spec.n_agents
    obs_dim = envs[0].spec.obs_dim()

    if threads > 1 and len(envs) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(envs))) as pool:
            lanes = list(pool.map(
                lambda args: _collect_lane(*args),
                [(env, models, algo, steps_per_env, rng)
                 for env, rng in zip(envs, lane_policy_rngs)],
            ))
    else:
        lanes = [_collect_lane(env, models, algo, steps_per_env, rng)
                 for env, rng in zip(envs, lane_policy_rngs)]

    # merge
    def cat(key, empty_shape):
        parts = [ln.arrays[key] for ln in lanes if ln.arrays[key].size]
        return np.concatenate(parts) if parts else np.zeros(empty_shape)

    x_dim = models[0].x_dim
    dz = models[0].dims.embed_dim
    batch = TrajectoryBatch(
        obs=cat("obs", (0, n, obs_dim)),
        next_obs=cat("next_obs", (0, n, obs_dim)),
        x=cat("x", (0, n, x_dim)),
        z=cat("z", (0, n, dz)),
        actions=cat("actions", (0, n, 2)),
        log_probs=cat("log_probs", (0, n)),
        values=cat("values", (0, n)),
        r_ext=cat("r_ext", (0, n)),
        r_int=cat("r_int", (0, n)),
        r_total=cat("r_total", (0, n)),
        beta=algo.effective_beta,
        dones=cat("dones", (0,)).astype(np.uint8),
        lane_slices=[],
        bootstrap_values=np.stack([ln.bootstrap for ln in lanes]),
        edge_step=np.zeros(0, dtype=np.int64), edge_recv=np.zeros(0, dtype=np.int64),
        edge_send=np.zeros(0, dtype=np.int64), edge_feat=np.zeros((0, 4)),
        edge2_step=np.zeros(0, dtype=np.int64), edge2_recv=np.zeros(0, dtype=np.int64),
        edge2_send=np.zeros(0, dtype=np.int64), edge2_feat=np.zeros((0, 4)),
    )
    # lane slices and flattened edges with global step offsets
    offset = 0
    e_step, e_recv, e_send, e_feat = [], [], [], []
    e2 = ([], [], [], [])
    for ln in lanes:
        steps = ln.arrays["dones"].shape[0]
        batch.lane_slices.append((offset, offset + steps))
        for local_t, (edges, feats) in enumerate(ln.edges_t):
            if edges.shape[0]:
                e_step.append(np.full(edges.shape[0], offset + local_t, dtype=np.int64))
                e_recv.append(edges[:, 0])
                e_send.append(edges[:, 1])
                e_feat.append(feats)
        for local_t, (edges, feats) in enumerate(ln.edges_t1):
            if edges.shape[0]:
                e2[0].append(np.full(edges.shape[0], offset + local_t, dtype=np.int64))
                e2[1].append(edges[:, 0])
                e2[2].append(edges[:, 1])
                e2[3].append(feats)
        offset += steps
    if e_step:
        batch.edge_step = np.concatenate(e_step)
        batch.edge_recv = np.concatenate(e_recv)
        batch.edge_send = np.concatenate(e_send)
        batch.edge_feat = np.concatenate(e_feat)
    if e2[0]:
        batch.edge2_step = np.concatenate(e2[0])
        batch.edge2_recv = np.concatenate(e2[1])
        batch.edge2_send = np.concatenate(e2[2])
        batch.edge2_feat = np.concatenate(e2[3])

    # replays: single-owner writes, fixed lane -> time -> agent order
    for ln in lanes:
        obs_a, act_a, next_a = ln.arrays["obs"], ln.arrays["actions"], ln.arrays["next_obs"]
        for t in range(obs_a.shape[0]):
            for i in range(n):
                models[i].dynamics.replay.push(obs_a[t, i], act_a[t, i], next_a[t, i], owner_id=i)

    episode_returns = [r for ln in lanes for r in ln.episode_returns]
    info = {
        "episodes": len(episode_returns),
        "episode_returns": episode_returns,  # list of (N,) extrinsic returns
        "r_int_mean": batch.r_int.mean(axis=0) if batch.n_steps else np.zeros(n),
    }
    if batch.n_steps and not (
        np.isfinite(batch.actions).all() and np.isfinite(batch.values).all()
        and np.isfinite(batch.r_total).all()
    ):
        raise TrainingDiverged("non-finite values in rollout batch")
    return batch, info


def train_dynamics_models(models: list[AgentModels], algo: AlgoSettings,
                          steps_collected: int, rng: np.random.Generator) -> np.ndarray:
    """Per-agent dynamics-model training at the configured per-step rate.

    Returns the mean pre-step loss per agent (nan if no updates ran).
    """
    n_updates = int(round(algo.dynamics_updates_per_step * steps_collected))
    n = len(models)
    sums = np.zeros(n)
    counts = np.zeros(n)
    for _ in range(n_updates):
        for i, m in enumerate(models):
            loss = train_from_replay(m.dynamics, rng, algo.dynamics_minibatch)
            if loss is not None:
                sums[i] += loss
                counts[i] += 1
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def compute_gae(batch: TrajectoryBatch, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) advantages and value targets per agent, per lane."""
    s, n = batch.n_steps, batch.n_agents
    adv = np.zeros((s, n))
    for lane_idx, (a, b) in enumerate(batch.lane_slices):
        dones = batch.dones[a:b]
        for i in range(n):
            _kernels.gae_scan(
                np.ascontiguousarray(batch.r_total[a:b, i]),
                np.ascontiguousarray(batch.values[a:b, i]),
                dones, float(batch.bootstrap_values[lane_idx, i]),
                gamma, lam, adv[a:b, i],
            )
    targets = adv + batch.values
    return adv, targets


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Per-agent normalization to mean 0, std 1 (std floored at 1e-8)."""
    mean = adv.mean(axis=0, keepdims=True)
    std = adv.std(axis=0, keepdims=True)
    return (adv - mean) / np.maximum(std, 1e-8)


def _gather_ranges(starts: np.ndarray, msel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows of a step-sorted edge table for the selected steps.

    Returns (row indices, per-row local sample index into msel).
    """
    counts = starts[msel + 1] - starts[msel]
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    base = np.repeat(starts[msel], counts)
    cum = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(total, dtype=np.int64) - np.repeat(cum, counts)
    return base + within, np.repeat(np.arange(len(msel), dtype=np.int64), counts)


@dataclass
class _AgentEdges:
    """Step-sorted CSR view of one agent's incoming edges."""

    starts: np.ndarray  # (S+1,)
    step: np.ndarray
    send: np.ndarray
    feat: np.ndarray


def _agent_edge_tables(batch: TrajectoryBatch) -> list[_AgentEdges]:
    tables = []
    s = batch.n_steps
    for i in range(batch.n_agents):
        rows = np.nonzero(batch.edge_recv == i)[0]
        step = batch.edge_step[rows]
        starts = np.searchsorted(step, np.arange(s + 1))
        tables.append(_AgentEdges(starts, step, batch.edge_send[rows], batch.edge_feat[rows]))
    return tables


def _surrogate_grads(models_i: AgentModels, mean: np.ndarray, value: np.ndarray,
                     actions: np.ndarray, old_log_probs: np.ndarray,
                     adv: np.ndarray, targets: np.ndarray, ppo: PPOConfig):
    """Clipped-PPO loss pieces and gradients w.r.t. mean, value, log_std."""
    b = actions.shape[0]
    log_std = models_i.log_std
    lp_new = gaussian_log_prob(mean, log_std, actions)
    ratio = np.exp(lp_new - old_log_probs)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - ppo.clip_epsilon, 1.0 + ppo.clip_epsilon) * adv
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))
    vdiff = value - targets
    value_loss = float(np.mean(vdiff * vdiff))
    entropy = gaussian_entropy(log_std)
    total = policy_loss + ppo.value_coef * value_loss - ppo.entropy_coef * entropy
    if not np.isfinite(total):
        raise TrainingDiverged(
            f"agent {models_i.agent_id}: non-finite loss "
            f"(policy={policy_loss}, value={value_loss}, entropy={entropy})"
        )
    # gradient of the unclipped branch only where it is the active min
    active = ~(((ratio > 1.0 + ppo.clip_epsilon) & (adv > 0))
               | ((ratio < 1.0 - ppo.clip_epsilon) & (adv < 0)))
    d_lp = -(ratio * adv * active) / b
    dlp_dmean, dlp_dlogstd = gaussian_log_prob_grads(mean, log_std, actions)
    d_mean = d_lp[:, None] * dlp_dmean
    d_log_std = (d_lp[:, None] * dlp_dlogstd).sum(axis=0) - ppo.entropy_coef
    d_value = ppo.value_coef * 2.0 * vdiff / b
    return policy_loss, value_loss, entropy, d_mean, d_value, d_log_std


def ppo_update(models: list[AgentModels], batch: TrajectoryBatch,
               advantages: np.ndarray, value_targets: np.ndarray,
               ppo: PPOConfig, rng: np.random.Generator,
               aggregation: str = "sum", backprop_through_comm: bool = False) -> dict:
    """Independent clipped-PPO epochs for every agent over the shared batch.

    Advantages are normalized per agent over the full batch first.  With
    ``backprop_through_comm`` the per-minibatch computation becomes joint:
    receiver losses contribute gradients to sender encoders through the
    communicated embeddings.
    """
    s, n = batch.n_steps, batch.n_agents
    if s == 0:
        return {"policy_loss": np.full(n, np.nan), "value_loss": np.full(n, np.nan),
                "entropy": np.full(n, np.nan)}
    adv = normalize_advantages(advantages)
    tables = _agent_edge_tables(batch)
    sums = {k: np.zeros(n) for k in ("policy_loss", "value_loss", "entropy")}
    updates = 0

    for _ in range(ppo.epochs):
        perm = rng.permutation(s)
        for lo in range(0, s, ppo.minibatch_size):
            msel = perm[lo: lo + ppo.minibatch_size]
            updates += 1
            if backprop_through_comm:
                _joint_minibatch_update(models, batch, adv, value_targets, ppo,
                                        tables, msel, aggregation, sums)
            else:
                for i in range(n):
                    _independent_minibatch_update(models[i], i, batch, adv, value_targets,
                                                  ppo, tables[i], msel, aggregation, sums)
    for k in sums:
        sums[k] /= max(updates, 1)
    return sums


def _independent_minibatch_update(mi: AgentModels, i: int, batch: TrajectoryBatch,
                                  adv: np.ndarray, targets: np.ndarray, ppo: PPOConfig,
                                  table: _AgentEdges, msel: np.ndarray,
                                  aggregation: str, sums: dict) -> None:
    rows, edge_sample = _gather_ranges(table.starts, msel)
    senders = table.send[rows]
    z_send = batch.z[table.step[rows], senders]  # frozen communicated messages
    z_own, c_om = encode_batch(mi, batch.x[msel, i])
    mean, value, cache = head_forward_batch(mi, z_own, edge_sample, z_send,
                                            table.feat[rows], aggregation)
    p_loss, v_loss, ent, d_mean, d_value, d_log_std = _surrogate_grads(
        mi, mean, value, batch.actions[msel, i], batch.log_probs[msel, i],
        adv[msel, i], targets[msel, i], ppo)
    head_grads, d_z_own, _ = head_backward_batch(mi, cache, d_mean, d_value)
    g_om, _ = mlp_backward(mi.omega, c_om, d_z_own)
    grads = g_om.arrays() + head_grads + [d_log_std]
    adam_step(mi.policy_arrays(), grads, mi.policy_adam)
    clamp_agent_log_std(mi)
    sums["policy_loss"][i] += p_loss
    sums["value_loss"][i] += v_loss
    sums["entropy"][i] += ent


def _joint_minibatch_update(models: list[AgentModels], batch: TrajectoryBatch,
                            adv: np.ndarray, targets: np.ndarray, ppo: PPOConfig,
                            tables: list[_AgentEdges], msel: np.ndarray,
                            aggregation: str, sums: dict) -> None:
    n = batch.n_agents
    b = len(msel)
    dz = models[0].dims.embed_dim
    z_all = np.zeros((b, n, dz))
    caches_om = []
    for j in range(n):
        z_j, c = encode_batch(models[j], batch.x[msel, j])
        z_all[:, j] = z_j
        caches_om.append(c)
    d_z_all = np.zeros_like(z_all)
    pending = []
    for i in range(n):
        rows, edge_sample = _gather_ranges(tables[i].starts, msel)
        senders = tables[i].send[rows]
        z_send = z_all[edge_sample, senders]  # fresh sender embeddings
        mean, value, cache = head_forward_batch(models[i], z_all[:, i], edge_sample,
                                                z_send, tables[i].feat[rows], aggregation)
        p_loss, v_loss, ent, d_mean, d_value, d_log_std = _surrogate_grads(
            models[i], mean, value, batch.actions[msel, i], batch.log_probs[msel, i],
            adv[msel, i], targets[msel, i], ppo)
        head_grads, d_z_own, d_z_send = head_backward_batch(models[i], cache, d_mean, d_value)
        d_z_all[:, i] += d_z_own
        if rows.size:
            np.add.at(d_z_all, (edge_sample, senders), d_z_send)
        pending.append((head_grads, d_log_std))
        sums["policy_loss"][i] += p_loss
        sums["value_loss"][i] += v_loss
        sums["entropy"][i] += ent
    for j in range(n):
        g_om, _ = mlp_backward(models[j].omega, caches_om[j], d_z_all[:, j])
        head_grads, d_log_std = pending[j]
        grads = g_om.arrays() + head_grads + [d_log_std]
        adam_step(models[j].policy_arrays(), grads, models[j].policy_adam)
        clamp_agent_log_std(models[j])


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    rows: list
    models: list
    agents: list
    iterations: int
    env_steps: int
    wall_time_s: float
    iter_times_s: list = field(default_factory=list)

    @property
    def steps_per_second(self) -> float:
        return self.env_steps / self.wall_time_s if self.wall_time_s > 0 else float("nan")


def rollout_threads() -> int:
    raw = os.environ.get("COHET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring invalid COHET_THREADS=%r", raw)
        return 1


def train(scenario: ScenarioSpec, algo: AlgoSettings, ppo: PPOConfig, dims: ModelDims,
          iterations: int, n_envs: int, seed: int, out_dir: Path | None = None,
          checkpoint_interval: int = 50, progress=None) -> TrainResult:
    """Full training loop; writes metrics.csv and checkpoints when out_dir is set.

    Metrics are flushed per iteration, so partial results survive aborts.
    """
    from .checkpoint import save_checkpoint
    from .metrics import MetricsWriter

    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if ppo.train_batch_size % n_envs != 0:
        raise ValueError(
            f"train_batch_size {ppo.train_batch_size} not divisible by n_envs {n_envs}"
        )
    steps_per_env = ppo.train_batch_size // n_envs
    streams = make_streams(seed, n_envs)
    agents = draw_agent_specs(scenario, streams.traits)
    envs = [ParticleWorld(scenario, rng, agents=agents) for rng in streams.lane_env]
    models = init_agent_models(
        scenario.n_agents, scenario.task_dim(), scenario.obs_dim(), scenario.action_dim,
        dims, streams.init, lr=ppo.learning_rate, dynamics_lr=algo.dynamics_lr,
        replay_capacity=algo.dynamics_replay_capacity, init_log_std=dims.init_log_std,
    )
    threads = rollout_threads()

    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        writer = MetricsWriter(out_dir / "metrics.csv", scenario.n_agents)

    rows = []
    iter_times = []
    env_steps = 0
    t_start = time.perf_counter()
    try:
        for k in range(1, iterations + 1):
            t0 = time.perf_counter()
            batch, info = collect_rollout(envs, models, algo, steps_per_env,
                                          streams.lane_policy, threads=threads)
            dyn_losses = train_dynamics_models(models, algo, batch.n_steps, streams.dynamics)
            advantages, targets = compute_gae(batch, ppo.gamma, ppo.gae_lambda)
            losses = ppo_update(models, batch, advantages, targets, ppo, streams.ppo,
                                aggregation=algo.aggregation,
                                backprop_through_comm=algo.backprop_through_comm)
            env_steps += batch.n_steps

            ep = info["episode_returns"]
            ep_means = np.array([float(np.mean(r)) for r in ep]) if ep else np.zeros(0)
            row = {
                "iteration": k,
                "env_steps": env_steps,
                "episodic_reward_mean": float(np.mean(ep_means)) if ep_means.size else float("nan"),
                "episodic_reward_min": float(np.min(ep_means)) if ep_means.size else float("nan"),
                "episodic_reward_max": float(np.max(ep_means)) if ep_means.size else float("nan"),
            }
            for i in range(scenario.n_agents):
                row[f"intrinsic_reward_mean_{i}"] = float(info["r_int_mean"][i])
                row[f"dynamics_loss_{i}"] = float(dyn_losses[i])
                row[f"policy_loss_{i}"] = float(losses["policy_loss"][i])
                row[f"value_loss_{i}"] = float(losses["value_loss"][i])
            rows.append(row)
            if writer is not None:
                writer.write_row(row)
                if k % checkpoint_interval == 0 or k == iterations:
                    save_checkpoint(out_dir / "checkpoints" / f"iter_{k:04d}.ckpt",
                                    models, agents, scenario, dims)
            iter_times.append(time.perf_counter() - t0)
            if progress is not None:
                progress(k, row)
    finally:
        if writer is not None:
            writer.close()

    wall = time.perf_counter() - t_start
    return TrainResult(rows=rows, models=models, agents=agents, iterations=iterations,
                       env_steps=env_steps, wall_time_s=wall, iter_times_s=iter_times)


def evaluate(models: list[AgentModels], agents, scenario: ScenarioSpec, algo_mode: str,
             episodes: int, seed: int, aggregation: str = "sum") -> dict:
    """Deterministic-policy evaluation: no exploration, no learning, no intrinsic reward."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if algo_mode not in ALGO_MODES:
        raise ValueError(f"unknown algo mode {algo_mode!r}")
    use_graph = algo_mode != "ippo"
    n = scenario.n_agents
    env_rng = np.random.default_rng(np.random.SeedSequence(seed))
    env = ParticleWorld(scenario, env_rng, agents=agents)
    returns = np.zeros((episodes, n))
    for e in range(episodes):
        obs_list = env.reset()
        done = False
        while not done:
            graph = _lane_graph(env) if use_graph else None
            x = graph.node_feats if use_graph else _x_matrix(obs_list)
            z = np.stack([encode_node(models[i], x[i]) for i in range(n)])
            actions = np.zeros((n, 2))
            for i in range(n):
                if use_graph:
                    rows = graph.edge_rows(i)
                    senders = graph.edges[rows, 1]
                    h = gnn_forward(models[i], z[i], senders, z[senders],
                                    graph.edge_feats[rows], aggregation)
                else:
                    h = gnn_forward(models[i], z[i], np.zeros(0, dtype=np.int64), [], [])
                a, _, _ = decode_action_value(models[i], h, None, deterministic=True)
                actions[i] = a
            obs_list, r_ext, done = env.step(actions)
            returns[e] += r_ext
    per_agent = returns.mean(axis=0)
    per_episode = returns.mean(axis=1)
    return {
        "episodes": episodes,
        "mean_episodic_reward": float(per_episode.mean()),
        "min_episodic_reward": float(per_episode.min()),
        "max_episodic_reward": float(per_episode.max()),
        "per_agent_mean": [float(v) for v in per_agent],
    }
