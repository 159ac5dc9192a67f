"""Decentralized multi-agent RL workbench.

A self-contained implementation of neighbor-prediction intrinsic rewards
(CoHet, team and self variants) on top of a heterogeneous graph-policy PPO
(HetGPPO-style), with an IPPO baseline, a 2D particle simulator, and a CLI
for experiments and ablations.
"""

from ._kernels import backend_name
from .envs import AgentSpec, Observation, ParticleWorld, ScenarioSpec, WorldState
from .graph import CommGraph, build_comm_graph, neighbor_sets, trim_observation
from .intrinsic import (
    DynamicsModel,
    RewardRecord,
    intrinsic_reward_self,
    intrinsic_reward_team,
    mix_rewards,
    neighbor_weights,
    predict_next,
)
from .nn import GaussianHead, MLPParams, MLPSpec, mlp_backward, mlp_forward, mlp_init
from .policy import AgentModels, ModelDims, decode_action_value, encode_node, gnn_forward, ippo_forward
from .trainer import (
    ALGO_MODES,
    AlgoSettings,
    PPOConfig,
    TrajectoryBatch,
    collect_rollout,
    compute_gae,
    evaluate,
    ppo_update,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ALGO_MODES",
    "AgentModels",
    "AgentSpec",
    "AlgoSettings",
    "CommGraph",
    "DynamicsModel",
    "GaussianHead",
    "MLPParams",
    "MLPSpec",
    "ModelDims",
    "Observation",
    "PPOConfig",
    "ParticleWorld",
    "RewardRecord",
    "ScenarioSpec",
    "TrajectoryBatch",
    "WorldState",
    "backend_name",
    "build_comm_graph",
    "collect_rollout",
    "compute_gae",
    "decode_action_value",
    "encode_node",
    "evaluate",
    "gnn_forward",
    "intrinsic_reward_self",
    "intrinsic_reward_team",
    "ippo_forward",
    "mix_rewards",
    "mlp_backward",
    "mlp_forward",
    "mlp_init",
    "neighbor_sets",
    "neighbor_weights",
    "ppo_update",
    "predict_next",
    "train",
    "trim_observation",
]
