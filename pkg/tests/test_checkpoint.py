"""Checkpoint round-trips, corruption handling and quantization bounds."""

import numpy as np
import pytest

from cohet.checkpoint import load_checkpoint, save_checkpoint, scenario_fingerprint
from cohet.envs import ScenarioSpec, draw_agent_specs
from cohet.policy import ModelDims, decode_action_value, encode_node, gnn_forward, init_agent_models

DIMS = ModelDims(embed_dim=6, hidden_dim=8, hidden_layers=1, gnn_dim=8)


def _setup(seed=0, scenario="navigation", n_agents=2):
    spec = ScenarioSpec(scenario=scenario, n_agents=n_agents, horizon=10)
    rng = np.random.default_rng(seed)
    agents = draw_agent_specs(spec, rng)
    models = init_agent_models(n_agents, spec.task_dim(), spec.obs_dim(),
                               spec.action_dim, DIMS, rng)
    return spec, agents, models


def test_save_load_save_is_byte_identical(tmp_path):
    spec, agents, models = _setup()
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, models, agents, spec, DIMS)
    loaded, agents2, _ = load_checkpoint(p1)
    save_checkpoint(p2, loaded, agents2, spec, DIMS)
    assert p1.read_bytes() == p2.read_bytes()


def test_traits_round_trip_exactly(tmp_path):
    spec, agents, models = _setup(seed=7)
    p = tmp_path / "c.ckpt"
    save_checkpoint(p, models, agents, spec, DIMS)
    _, loaded_agents, _ = load_checkpoint(p)
    assert loaded_agents == agents


def test_forward_pass_within_float32_quantization(tmp_path):
    spec, agents, models = _setup(seed=3)
    p = tmp_path / "q.ckpt"
    save_checkpoint(p, models, agents, spec, DIMS)
    loaded, _, _ = load_checkpoint(p)
    rng = np.random.default_rng(1)
    for m, lm in zip(models, loaded):
        x = rng.standard_normal(spec.task_dim())
        z1, z2 = encode_node(m, x), encode_node(lm, x)
        h1 = gnn_forward(m, z1, np.zeros(0, dtype=np.int64), [], [])
        h2 = gnn_forward(lm, z2, np.zeros(0, dtype=np.int64), [], [])
        a1, _, v1 = decode_action_value(m, h1, None, deterministic=True)
        a2, _, v2 = decode_action_value(lm, h2, None, deterministic=True)
        assert np.allclose(a1, a2, rtol=1e-6, atol=1e-6)
        assert np.isclose(v1, v2, rtol=1e-6, atol=1e-6)


def test_truncated_payload_rejected(tmp_path):
    spec, agents, models = _setup()
    p = tmp_path / "t.ckpt"
    save_checkpoint(p, models, agents, spec, DIMS)
    blob = p.read_bytes()
    p.write_bytes(blob[:-100])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(p)


def test_fingerprint_mismatch_rejected(tmp_path):
    spec, agents, models = _setup()
    other = ScenarioSpec(scenario="spread", n_agents=2, horizon=10)
    p = tmp_path / "f.ckpt"
    save_checkpoint(p, models, agents, spec, DIMS)
    with pytest.raises(ValueError, match="fingerprint"):
        load_checkpoint(p, expected_fingerprint=scenario_fingerprint(other, DIMS))


def test_not_a_checkpoint_rejected(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"hello world")
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_fingerprint_distinguishes_layouts():
    a = scenario_fingerprint(ScenarioSpec(scenario="navigation", n_agents=3), DIMS)
    b = scenario_fingerprint(ScenarioSpec(scenario="navigation", n_agents=4), DIMS)
    c = scenario_fingerprint(ScenarioSpec(scenario="navigation", n_agents=3),
                             ModelDims(embed_dim=16))
    assert len({a, b, c}) == 3
