"""Checkpoint persistence: text manifest + raw little-endian float32 payload.

Layout of a .ckpt file:

    cohet-checkpoint 1
    fingerprint <hex16>
    scenario <name> <n_agents> <obs_dim> <action_dim>
    dims <embed> <hidden> <layers> <gnn>
    trait <agent> <body_radius> <max_speed> <max_force> <obs_radius> <color_tag>
    array <agent> <name> <dim> [<dim> ...]
    ...
    payload <float_count>
    <raw bytes: float32 little-endian, arrays in manifest order>

Training arithmetic stays 64-bit; the payload quantizes to 32-bit.
Because float32 -> float64 -> float32 is the identity, save(load(save(x)))
is byte-stable.  The fingerprint hashes the scenario/model layout so a
checkpoint cannot be loaded against an incompatible configuration.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .envs import AgentSpec, ScenarioSpec
from .policy import AgentModels, ModelDims, init_agent_models

_MAGIC = "cohet-checkpoint 1"


def scenario_fingerprint(scenario: ScenarioSpec, dims: ModelDims) -> str:
    key = ",".join(str(v) for v in (
        scenario.scenario, scenario.n_agents, scenario.obs_dim(), scenario.action_dim,
        dims.embed_dim, dims.hidden_dim, dims.hidden_layers, dims.gnn_dim,
    ))
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def _named_arrays(m: AgentModels) -> list[tuple[str, np.ndarray]]:
    out = []
    for prefix, mlp in (("omega", m.omega), ("psi", m.psi), ("phi", m.phi),
                        ("pi", m.pi_decoder), ("value", m.value_decoder),
                        ("dyn", m.dynamics.f)):
        for l, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            out.append((f"{prefix}.w{l}", w))
            out.append((f"{prefix}.b{l}", b))
    out.append(("log_std", m.log_std))
    return out


def save_checkpoint(path, models: list[AgentModels], agents: list[AgentSpec],
                    scenario: ScenarioSpec, dims: ModelDims) -> None:
    path = Path(path)
    lines = [_MAGIC, f"fingerprint {scenario_fingerprint(scenario, dims)}"]
    lines.append(f"scenario {scenario.scenario} {scenario.n_agents} "
                 f"{scenario.obs_dim()} {scenario.action_dim}")
    lines.append(f"dims {dims.embed_dim} {dims.hidden_dim} {dims.hidden_layers} {dims.gnn_dim}")
    for a in agents:
        lines.append(f"trait {a.id} {a.body_radius!r} {a.max_speed!r} "
                     f"{a.max_force!r} {a.obs_radius!r} {a.color_tag}")
    chunks = []
    count = 0
    for idx, m in enumerate(models):
        for name, arr in _named_arrays(m):
            shape = " ".join(str(d) for d in arr.shape)
            lines.append(f"array {idx} {name} {shape}")
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            count += arr.size
    lines.append(f"payload {count}")
    manifest = "\n".join(lines) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(manifest.encode("ascii"))
        for c in chunks:
            fh.write(c)


def load_checkpoint(path, expected_fingerprint: str | None = None
                    ) -> tuple[list[AgentModels], list[AgentSpec], dict]:
    """Load models and agent traits; optionally enforce a layout fingerprint."""
    path = Path(path)
    blob = path.read_bytes()
    split = blob.find(b"payload ")
    if split < 0:
        raise ValueError(f"{path}: not a checkpoint (no payload marker)")
    nl = blob.find(b"\n", split)
    manifest = blob[:nl].decode("ascii").splitlines()
    payload = blob[nl + 1:]

    if manifest[0] != _MAGIC:
        raise ValueError(f"{path}: bad magic line {manifest[0]!r}")
    meta: dict = {"arrays": []}
    traits: dict[int, AgentSpec] = {}
    for line in manifest[1:]:
        parts = line.split()
        if parts[0] == "fingerprint":
            meta["fingerprint"] = parts[1]
        elif parts[0] == "scenario":
            meta["scenario"] = parts[1]
            meta["n_agents"] = int(parts[2])
            meta["obs_dim"] = int(parts[3])
            meta["action_dim"] = int(parts[4])
        elif parts[0] == "dims":
            meta["dims"] = ModelDims(int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]))
        elif parts[0] == "trait":
            i = int(parts[1])
            traits[i] = AgentSpec(id=i, body_radius=float(parts[2]), max_speed=float(parts[3]),
                                  max_force=float(parts[4]), obs_radius=float(parts[5]),
                                  color_tag=int(parts[6]))
        elif parts[0] == "array":
            meta["arrays"].append((int(parts[1]), parts[2], tuple(int(d) for d in parts[3:])))
        elif parts[0] == "payload":
            meta["count"] = int(parts[1])
        else:
            raise ValueError(f"{path}: unknown manifest entry {parts[0]!r}")

    if expected_fingerprint is not None and meta.get("fingerprint") != expected_fingerprint:
        raise ValueError(
            f"{path}: fingerprint {meta.get('fingerprint')} does not match "
            f"expected {expected_fingerprint} (incompatible scenario/model layout)"
        )
    if len(payload) < meta["count"] * 4:
        raise ValueError(
            f"{path}: truncated payload ({len(payload)} bytes, "
            f"expected {meta['count'] * 4}); refusing partial load"
        )
    flat = np.frombuffer(payload[: meta["count"] * 4], dtype="<f4").astype(np.float64)

    dims = meta["dims"]
    n = meta["n_agents"]
    obs_dim = meta["obs_dim"]
    action_dim = meta["action_dim"]
    x_dim = obs_dim - 4
    models = init_agent_models(n, x_dim, obs_dim, action_dim, dims,
                               np.random.default_rng(0), init_log_std=dims.init_log_std)
    by_name = {}
    for idx, m in enumerate(models):
        for name, arr in _named_arrays(m):
            by_name[(idx, name)] = arr
    pos = 0
    for idx, name, shape in meta["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        target = by_name.get((idx, name))
        if target is None or target.shape != shape:
            raise ValueError(f"{path}: array {name} of agent {idx} has unexpected shape {shape}")
        target[...] = flat[pos: pos + size].reshape(shape)
        pos += size
    if pos != meta["count"]:
        raise ValueError(f"{path}: manifest/payload length inconsistent ({pos} != {meta['count']})")

    agents = [traits[i] for i in range(n)]
    return models, agents, meta
