"""Per-agent graph actor-critic with strictly unshared parameters.

Each agent i owns an encoder (x_i -> z_i), two message MLPs (psi for the
self term, phi for incoming messages), an action decoder, a value decoder,
a learned log_std vector, and a dynamics model.  The graph kernel is a
single hop:

    h_i = psi_i(z_i) + sum_{j in N_i} phi_i(z_j || e_ij)

where z_j is computed by the SENDER's own encoder and communicated over
the graph.  Neighbor contributions are summed in ascending sender order,
making the aggregation exactly permutation-invariant.  The IPPO baseline
is the same pipeline with the neighbor sum omitted.

Batched forward/backward helpers at the bottom serve the PPO trainer; by
default gradients arriving at communicated embeddings are dropped at the
agent boundary (decentralized training), with ``backprop_through_comm``
routing them to sender encoders instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .intrinsic import DynamicsModel
from .nn import (
    AdamState,
    GaussianHead,
    MLPCache,
    MLPParams,
    MLPSpec,
    adam_init,
    clamp_log_std,
    gaussian_log_prob,
    mlp_backward,
    mlp_forward,
    mlp_forward_nograd,
    mlp_init,
    mlp_zeros_like,
)


@dataclass
class ModelDims:
    """Network dimensions; defaults are the workbench-wide defaults."""

    embed_dim: int = 32    # z dimension
    hidden_dim: int = 64
    hidden_layers: int = 2
    gnn_dim: int = 64      # h dimension
    init_log_std: float = 0.0

    def __post_init__(self):
        for name in ("embed_dim", "hidden_dim", "gnn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")


def _hidden(spec_in: int, dims: ModelDims, out: int) -> tuple[int, ...]:
    return (spec_in, *([dims.hidden_dim] * dims.hidden_layers), out)


class AgentModels:
    """All parameters owned by one agent; no storage shared across agents."""

    def __init__(self, agent_id: int, x_dim: int, obs_dim: int, action_dim: int,
                 dims: ModelDims, init_rng, lr: float = 3e-4,
                 dynamics_lr: float = 3e-4, replay_capacity: int = 20000,
                 init_log_std: float = 0.0):
        self.agent_id = agent_id
        self.x_dim = x_dim
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.dims = dims
        edge_dim = 4
        self.omega = mlp_init(MLPSpec(_hidden(x_dim, dims, dims.embed_dim)), init_rng)
        self.psi = mlp_init(MLPSpec(_hidden(dims.embed_dim, dims, dims.gnn_dim)), init_rng)
        self.phi = mlp_init(MLPSpec(_hidden(dims.embed_dim + edge_dim, dims, dims.gnn_dim)), init_rng)
        self.pi_decoder = mlp_init(MLPSpec(_hidden(dims.gnn_dim, dims, action_dim)), init_rng)
        self.value_decoder = mlp_init(MLPSpec(_hidden(dims.gnn_dim, dims, 1)), init_rng)
        self.log_std = np.full(action_dim, float(init_log_std))
        self.dynamics = DynamicsModel(obs_dim, action_dim, dims.hidden_dim,
                                      owner_id=agent_id, init_rng=init_rng,
                                      lr=dynamics_lr, replay_capacity=replay_capacity)
        self.policy_adam: AdamState = adam_init(self.policy_arrays(), lr=lr)

    def policy_mlps(self) -> list[MLPParams]:
        return [self.omega, self.psi, self.phi, self.pi_decoder, self.value_decoder]

    def policy_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for mlp in self.policy_mlps():
            out.extend(mlp.arrays())
        out.append(self.log_std)
        return out


def init_agent_models(n_agents: int, x_dim: int, obs_dim: int, action_dim: int,
                      dims: ModelDims, init_rng, **kwargs) -> list[AgentModels]:
    """Independently initialized model set, one entry per agent."""
    return [AgentModels(i, x_dim, obs_dim, action_dim, dims, init_rng, **kwargs)
            for i in range(n_agents)]


# ---------------------------------------------------------------------------
# single-sample ops (rollout / evaluation path)
# ---------------------------------------------------------------------------

def encode_node(models: AgentModels, x: np.ndarray) -> np.ndarray:
    """z_i = encoder of agent i applied to its non-absolute features."""
    return mlp_forward_nograd(models.omega, np.asarray(x, dtype=np.float64))


def gnn_forward(models: AgentModels, z_i: np.ndarray, neighbor_ids, neighbor_z,
                edge_feats, aggregation: str = "sum") -> np.ndarray:
    """One-hop graph kernel output h_i for agent i.

    neighbor_z[k] must be the embedding computed by sender neighbor_ids[k]'s
    own encoder; edge_feats[k] the matching (p_ij || v_ij).  Contributions
    are summed in ascending sender order regardless of input order.
    """
    neighbor_ids = np.asarray(neighbor_ids, dtype=np.int64)
    k = neighbor_ids.shape[0]
    if len(neighbor_z) != k or len(edge_feats) != k:
        raise ValueError("gnn_forward: neighbor embedding/edge feature count mismatch")
    h = mlp_forward_nograd(models.psi, z_i)
    if k == 0:
        return h
    order = np.argsort(neighbor_ids, kind="stable")
    agg = np.zeros_like(h)
    for idx in order:
        msg_in = np.concatenate([np.asarray(neighbor_z[idx]), np.asarray(edge_feats[idx])])
        agg += mlp_forward_nograd(models.phi, msg_in)
    if aggregation == "mean":
        agg /= k
    elif aggregation != "sum":
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return h + agg


def decode_action_value(models: AgentModels, h: np.ndarray, rng: np.random.Generator | None,
                        deterministic: bool = False) -> tuple[np.ndarray, float, float]:
    """Decode h into (action, log_prob, value); deterministic mode returns the mean."""
    if not np.all(np.isfinite(h)):
        raise ValueError(f"agent {models.agent_id}: non-finite GNN output")
    mean = mlp_forward_nograd(models.pi_decoder, h)
    v = mlp_forward_nograd(models.value_decoder, h)
    if deterministic:
        action = mean
    else:
        action = mean + np.exp(models.log_std) * rng.standard_normal(mean.shape)
    log_prob = float(gaussian_log_prob(mean, models.log_std, action))
    return action, log_prob, float(v[0])


def ippo_forward(models: AgentModels, x: np.ndarray, rng: np.random.Generator | None,
                 deterministic: bool = False) -> tuple[np.ndarray, float, float]:
    """Independent-policy path: the graph pipeline with no neighbors."""
    z = encode_node(models, x)
    h = gnn_forward(models, z, np.zeros(0, dtype=np.int64), [], [])
    return decode_action_value(models, h, rng, deterministic)


# ---------------------------------------------------------------------------
# batched forward/backward (PPO update path)
# ---------------------------------------------------------------------------

@dataclass
class HeadBatchCache:
    """Caches for the psi/phi/decoder stage of a batched forward."""

    psi: MLPCache
    phi: MLPCache | None
    pi: MLPCache
    value: MLPCache
    edge_sample: np.ndarray
    n_samples: int
    deg: np.ndarray | None  # per-sample neighbor count (mean aggregation)


def encode_batch(models: AgentModels, x: np.ndarray) -> tuple[np.ndarray, MLPCache]:
    """Batched encoder pass z = omega(x) with cache."""
    return mlp_forward(models.omega, x)


def head_forward_batch(models: AgentModels, z: np.ndarray, edge_sample: np.ndarray,
                       z_send: np.ndarray, edge_feats: np.ndarray,
                       aggregation: str = "sum") -> tuple[np.ndarray, np.ndarray, HeadBatchCache]:
    """Batched graph kernel + decoders over B samples of one agent.

    edge_sample maps each incoming edge to its sample row; z_send carries
    the communicated sender embeddings for those edges (frozen rollout
    data by default, fresh sender outputs in joint-backprop mode).
    Returns (action mean (B, a), value (B,), cache).
    """
    b = z.shape[0]
    h_self, c_psi = mlp_forward(models.psi, z)
    deg = None
    if edge_sample.shape[0]:
        phi_in = np.concatenate([z_send, edge_feats], axis=1)
        msgs, c_phi = mlp_forward(models.phi, phi_in)
        agg = np.zeros_like(h_self)
        _kernels.segment_sum(msgs, edge_sample, agg)
        if aggregation == "mean":
            deg = np.zeros(b)
            np.add.at(deg, edge_sample, 1.0)
            agg /= np.maximum(deg, 1.0)[:, None]
        h = h_self + agg
    else:
        c_phi = None
        h = h_self
    mean, c_pi = mlp_forward(models.pi_decoder, h)
    v, c_val = mlp_forward(models.value_decoder, h)
    return mean, v[:, 0], HeadBatchCache(c_psi, c_phi, c_pi, c_val, edge_sample, b, deg)


def head_backward_batch(models: AgentModels, cache: HeadBatchCache,
                        d_mean: np.ndarray, d_value: np.ndarray
                        ) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through the head stage.

    Returns (grad arrays for [psi, phi, pi_decoder, value_decoder],
    d_z own-embedding gradient (B, dz), d_z_send per-edge gradient w.r.t.
    the communicated sender embeddings).  d_z_send is consumed only in
    joint-backprop mode and dropped at the agent boundary otherwise.
    """
    g_pi, d_h1 = mlp_backward(models.pi_decoder, cache.pi, d_mean)
    g_val, d_h2 = mlp_backward(models.value_decoder, cache.value, d_value[:, None])
    d_h = d_h1 + d_h2
    g_psi, d_z = mlp_backward(models.psi, cache.psi, d_h)
    if cache.phi is not None:
        d_msgs = d_h[cache.edge_sample]
        if cache.deg is not None:
            d_msgs = d_msgs / np.maximum(cache.deg, 1.0)[cache.edge_sample, None]
        g_phi, d_phi_in = mlp_backward(models.phi, cache.phi, d_msgs)
        d_z_send = d_phi_in[:, : models.dims.embed_dim]
    else:
        g_phi = mlp_zeros_like(models.phi)
        d_z_send = np.zeros((0, models.dims.embed_dim))
    arrays: list[np.ndarray] = []
    for g in (g_psi, g_phi, g_pi, g_val):
        arrays.extend(g.arrays())
    return arrays, d_z, d_z_send


def clamp_agent_log_std(models: AgentModels) -> None:
    models.log_std[:] = clamp_log_std(models.log_std)
