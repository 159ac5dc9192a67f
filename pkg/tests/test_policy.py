"""Graph actor-critic: invariances, oracles and end-to-end gradient flow."""

import numpy as np
import pytest

from cohet.nn import MLPSpec, gaussian_log_prob, mlp_forward, mlp_init
from cohet.policy import (
    AgentModels,
    ModelDims,
    decode_action_value,
    encode_batch,
    encode_node,
    gnn_forward,
    head_backward_batch,
    head_forward_batch,
    ippo_forward,
)

DIMS = ModelDims(embed_dim=6, hidden_dim=10, hidden_layers=1, gnn_dim=8)


def _models(agent_id=0, seed=0, x_dim=5):
    rng = np.random.default_rng(seed)
    return AgentModels(agent_id, x_dim=x_dim, obs_dim=x_dim + 4, action_dim=2,
                       dims=DIMS, init_rng=rng)


def test_encode_zero_params_gives_zero():
    m = _models()
    for w in m.omega.weights:
        w[:] = 0.0
    assert np.array_equal(encode_node(m, np.ones(5)), np.zeros(DIMS.embed_dim))


def test_unshared_params_generally_differ():
    a, b = _models(0, seed=1), _models(1, seed=2)
    x = np.ones(5)
    assert not np.array_equal(encode_node(a, x), encode_node(b, x))


def test_encode_matches_matrix_multiply_oracle():
    m = _models(seed=3)
    x = np.random.default_rng(0).standard_normal(5)
    h = x
    for l, (w, b) in enumerate(zip(m.omega.weights, m.omega.biases)):
        h = w @ h + b
        if l < len(m.omega.weights) - 1:
            h = np.maximum(h, 0.0)
    assert np.allclose(encode_node(m, x), h, rtol=1e-13, atol=1e-15)


def test_gnn_empty_neighborhood_is_self_term():
    m = _models(seed=4)
    z = np.random.default_rng(1).standard_normal(DIMS.embed_dim)
    h = gnn_forward(m, z, np.zeros(0, dtype=np.int64), [], [])
    psi_out, _ = mlp_forward(m.psi, z)
    assert np.array_equal(h, psi_out)


def test_gnn_zero_phi_ignores_neighbors():
    m = _models(seed=5)
    for w in m.phi.weights:
        w[:] = 0.0
    for b in m.phi.biases:
        b[:] = 0.0
    rng = np.random.default_rng(2)
    z = rng.standard_normal(DIMS.embed_dim)
    h0 = gnn_forward(m, z, np.zeros(0, dtype=np.int64), [], [])
    h2 = gnn_forward(m, z, np.array([1, 2]),
                     [rng.standard_normal(DIMS.embed_dim) for _ in range(2)],
                     [rng.standard_normal(4) for _ in range(2)])
    assert np.array_equal(h0, h2)


def test_gnn_permutation_invariance_bit_exact():
    m = _models(seed=6)
    rng = np.random.default_rng(3)
    z = rng.standard_normal(DIMS.embed_dim)
    ids = np.array([4, 1, 7])
    zs = [rng.standard_normal(DIMS.embed_dim) for _ in range(3)]
    es = [rng.standard_normal(4) for _ in range(3)]
    h_ref = gnn_forward(m, z, ids, zs, es)
    for order in ([1, 2, 0], [2, 1, 0], [0, 2, 1]):
        h = gnn_forward(m, z, ids[order], [zs[k] for k in order], [es[k] for k in order])
        assert np.array_equal(h_ref, h)


def test_gnn_two_neighbor_term_by_term_oracle():
    m = _models(seed=7)
    rng = np.random.default_rng(4)
    z = rng.standard_normal(DIMS.embed_dim)
    zs = [rng.standard_normal(DIMS.embed_dim) for _ in range(2)]
    es = [rng.standard_normal(4) for _ in range(2)]
    h = gnn_forward(m, z, np.array([1, 2]), zs, es)
    psi_out, _ = mlp_forward(m.psi, z)
    expect = psi_out.copy()
    for zj, ej in zip(zs, es):
        msg, _ = mlp_forward(m.phi, np.concatenate([zj, ej]))
        expect += msg
    assert np.allclose(h, expect, rtol=1e-13, atol=1e-15)


def test_gnn_mean_aggregation():
    m = _models(seed=8)
    rng = np.random.default_rng(5)
    z = rng.standard_normal(DIMS.embed_dim)
    zs = [rng.standard_normal(DIMS.embed_dim) for _ in range(2)]
    es = [rng.standard_normal(4) for _ in range(2)]
    h_sum = gnn_forward(m, z, np.array([1, 2]), zs, es, aggregation="sum")
    h_mean = gnn_forward(m, z, np.array([1, 2]), zs, es, aggregation="mean")
    psi_out, _ = mlp_forward(m.psi, z)
    assert np.allclose(h_mean - psi_out, (h_sum - psi_out) / 2.0, rtol=1e-12, atol=1e-15)


def test_gnn_rejects_mismatched_inputs():
    m = _models()
    with pytest.raises(ValueError):
        gnn_forward(m, np.zeros(DIMS.embed_dim), np.array([1]), [], [np.zeros(4)])


# --- decode -------------------------------------------------------------------

def test_decode_deterministic_mode_returns_mean():
    m = _models(seed=9)
    h = np.random.default_rng(0).standard_normal(DIMS.gnn_dim)
    mean, _ = mlp_forward(m.pi_decoder, h)
    a, lp, v = decode_action_value(m, h, None, deterministic=True)
    assert np.array_equal(a, mean)
    assert np.isclose(lp, gaussian_log_prob(mean, m.log_std, mean), rtol=1e-12)


def test_decode_zero_decoder_tiny_noise():
    m = _models(seed=10)
    for w in m.pi_decoder.weights:
        w[:] = 0.0
    m.log_std[:] = -5.0
    h = np.ones(DIMS.gnn_dim)
    a, _, _ = decode_action_value(m, h, np.random.default_rng(0))
    assert np.all(np.abs(a) < 0.1)


def test_decode_log_prob_matches_density_formula():
    m = _models(seed=11)
    h = np.random.default_rng(1).standard_normal(DIMS.gnn_dim)
    a, lp, _ = decode_action_value(m, h, np.random.default_rng(2))
    mean, _ = mlp_forward(m.pi_decoder, h)
    sigma = np.exp(m.log_std)
    expect = np.sum(-0.5 * ((a - mean) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi))
    assert np.isclose(lp, expect, rtol=1e-12)


def test_decode_rejects_nonfinite_h():
    m = _models()
    with pytest.raises(ValueError):
        decode_action_value(m, np.array([np.nan] * DIMS.gnn_dim), None, deterministic=True)


def test_ippo_equals_gnn_with_empty_neighborhood():
    m = _models(seed=12)
    x = np.random.default_rng(3).standard_normal(5)
    a1, lp1, v1 = ippo_forward(m, x, np.random.default_rng(7))
    z = encode_node(m, x)
    h = gnn_forward(m, z, np.zeros(0, dtype=np.int64), [], [])
    a2, lp2, v2 = decode_action_value(m, h, np.random.default_rng(7))
    assert np.array_equal(a1, a2) and lp1 == lp2 and v1 == v2


def test_ippo_matches_composition_oracle():
    m = _models(seed=13)
    x = np.random.default_rng(4).standard_normal(5)
    a, _, v = ippo_forward(m, x, None, deterministic=True)
    z, _ = mlp_forward(m.omega, x)
    h, _ = mlp_forward(m.psi, z)
    mean, _ = mlp_forward(m.pi_decoder, h)
    val, _ = mlp_forward(m.value_decoder, h)
    assert np.allclose(a, mean, rtol=1e-13) and np.isclose(v, val[0], rtol=1e-13)


def test_heterogeneity_isolation():
    # perturbing agent j's parameters never changes agent i's self term
    mi, mj = _models(0, seed=14), _models(1, seed=15)
    z_i = np.random.default_rng(5).standard_normal(DIMS.embed_dim)
    before = gnn_forward(mi, z_i, np.zeros(0, dtype=np.int64), [], [])
    for w in mj.omega.weights:
        w += 1.0
    after = gnn_forward(mi, z_i, np.zeros(0, dtype=np.int64), [], [])
    assert np.array_equal(before, after)


# --- batched paths vs single-sample ops -----------------------------------------

def test_batched_forward_matches_single_sample_path():
    m = _models(seed=16)
    rng = np.random.default_rng(6)
    b = 5
    xs = rng.standard_normal((b, 5))
    # one neighbor for samples 0 and 3
    edge_sample = np.array([0, 3], dtype=np.int64)
    z_send = rng.standard_normal((2, DIMS.embed_dim))
    e_feat = rng.standard_normal((2, 4))
    z, _ = encode_batch(m, xs)
    mean, value, _ = head_forward_batch(m, z, edge_sample, z_send, e_feat)
    for k in range(b):
        rows = np.nonzero(edge_sample == k)[0]
        h = gnn_forward(m, encode_node(m, xs[k]), np.arange(len(rows)),
                        [z_send[r] for r in rows], [e_feat[r] for r in rows])
        mean_k, _ = mlp_forward(m.pi_decoder, h)
        val_k, _ = mlp_forward(m.value_decoder, h)
        assert np.allclose(mean[k], mean_k, rtol=1e-12, atol=1e-14)
        assert np.isclose(value[k], val_k[0], rtol=1e-12)


def test_end_to_end_gradients_match_finite_differences():
    """Scalar loss on h_i: gradients w.r.t. receiver MLPs AND sender encoder."""
    m_recv = _models(0, seed=17)
    m_send = _models(1, seed=18)
    rng = np.random.default_rng(8)
    x_recv = rng.standard_normal((3, 5))
    x_send = rng.standard_normal((3, 5))
    e_feat = rng.standard_normal((3, 4))
    edge_sample = np.arange(3, dtype=np.int64)  # one incoming edge per sample
    w_mean = rng.standard_normal((3, 2))
    w_val = rng.standard_normal(3)

    def loss():
        z_r, _ = encode_batch(m_recv, x_recv)
        z_s, _ = encode_batch(m_send, x_send)
        mean, value, _ = head_forward_batch(m_recv, z_r, edge_sample, z_s, e_feat)
        return float(np.sum(mean * w_mean) + np.sum(value * w_val))

    z_r, c_r = encode_batch(m_recv, x_recv)
    z_s, c_s = encode_batch(m_send, x_send)
    mean, value, cache = head_forward_batch(m_recv, z_r, edge_sample, z_s, e_feat)
    head_grads, d_z_own, d_z_send = head_backward_batch(m_recv, cache, w_mean, w_val)
    from cohet.nn import mlp_backward
    g_om_recv, _ = mlp_backward(m_recv.omega, c_r, d_z_own)
    # sender gradients cross the communication channel via d_z_send
    g_om_send, _ = mlp_backward(m_send.omega, c_s, d_z_send)

    h = 1e-5

    def fd(arr):
        out = np.zeros_like(arr)
        flat, oflat = arr.ravel(), out.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss()
            flat[k] = orig - h
            dn = loss()
            flat[k] = orig
            oflat[k] = (up - dn) / (2 * h)
        return out

    assert np.allclose(g_om_recv.weights[0], fd(m_recv.omega.weights[0]), rtol=1e-4, atol=1e-6)
    # head grads order: psi, phi, pi, value
    assert np.allclose(head_grads[0], fd(m_recv.psi.weights[0]), rtol=1e-4, atol=1e-6)
    n_psi = 2 * len(m_recv.psi.weights)
    assert np.allclose(head_grads[n_psi], fd(m_recv.phi.weights[0]), rtol=1e-4, atol=1e-6)
    # the differentiable communication channel: sender encoder gradient
    assert np.allclose(g_om_send.weights[0], fd(m_send.omega.weights[0]), rtol=1e-4, atol=1e-6)
    assert np.allclose(g_om_send.biases[-1], fd(m_send.omega.biases[-1]), rtol=1e-4, atol=1e-6)
