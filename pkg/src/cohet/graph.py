"""Radius-induced communication graph and its node/edge features.

A directed edge (i, j) exists when sender j lies within receiver i's
observation radius (boundary inclusive, i != j); asymmetric radii give
asymmetric edges.  Edge features concatenate relative position and
relative velocity, node features are the non-absolute observation part,
so everything downstream of the graph is invariant to global translation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .envs import Observation


@dataclass
class CommGraph:
    """Per-step communication graph.

    Edges are stored receiver-major with ascending sender index, which
    fixes a canonical neighbor order for aggregation.
    """

    n: int
    edges: np.ndarray       # (E, 2) int64 rows (receiver, sender)
    edge_feats: np.ndarray  # (E, 4) = (p_j - p_i, v_j - v_i)
    node_feats: np.ndarray  # (N, d_x) non-absolute features

    def neighbors(self, i: int) -> np.ndarray:
        """Sender ids j with an edge (i, j), ascending."""
        if self.edges.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return self.edges[self.edges[:, 0] == i, 1]

    def edge_rows(self, i: int) -> np.ndarray:
        """Row indices into edges/edge_feats for receiver i."""
        if self.edges.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.nonzero(self.edges[:, 0] == i)[0]


def trim_observation(obs: Observation) -> np.ndarray:
    """Non-absolute features: the task part of the observation, self (p, v) removed."""
    return np.asarray(obs.task_features, dtype=np.float64).copy()


def build_comm_graph(
    positions: np.ndarray,
    velocities: np.ndarray,
    obs_radii: np.ndarray,
    observations: list[Observation],
) -> CommGraph:
    """Build the per-step graph from true positions/velocities and radii."""
    positions = np.asarray(positions, dtype=np.float64)
    velocities = np.asarray(velocities, dtype=np.float64)
    obs_radii = np.asarray(obs_radii, dtype=np.float64)
    n = positions.shape[0]
    if not (velocities.shape[0] == obs_radii.shape[0] == len(observations) == n):
        raise ValueError("build_comm_graph: inconsistent array lengths")

    adj = np.zeros((n, n), dtype=np.uint8)
    _kernels.radius_adjacency(positions, obs_radii, adj)
    recv, send = np.nonzero(adj)  # row-major: receiver-major, sender ascending
    edges = np.stack([recv, send], axis=1).astype(np.int64)
    edge_feats = np.concatenate(
        [positions[send] - positions[recv], velocities[send] - velocities[recv]], axis=1
    ) if edges.shape[0] else np.zeros((0, 4))

    node_feats = (
        np.stack([trim_observation(o) for o in observations])
        if len(observations) and observations[0].task_features.size
        else np.zeros((n, 0))
    )
    return CommGraph(n=n, edges=edges, edge_feats=edge_feats, node_feats=node_feats)


def neighbor_sets(graph_t: CommGraph, graph_t1: CommGraph, agent: int) -> tuple[set, set, set]:
    """(N_i at t, N_i at t+1, their intersection) for one agent."""
    if graph_t.n != graph_t1.n:
        raise ValueError("neighbor_sets: graphs cover different agent sets")
    now = set(int(j) for j in graph_t.neighbors(agent))
    nxt = set(int(j) for j in graph_t1.neighbors(agent))
    return now, nxt, now & nxt
