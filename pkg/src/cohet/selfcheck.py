"""Built-in oracle/property suite behind the ``selftest`` CLI command.

Each check re-derives its expected values independently (finite
differences, brute-force enumeration, direct summation) rather than
trusting the code paths it exercises.  Prints one PASS/FAIL line per
check; returns a process exit status.
"""

from __future__ import annotations

import numpy as np

from .envs import ScenarioSpec, make_scenario, step
from .graph import build_comm_graph
from .intrinsic import intrinsic_reward_team, neighbor_weights
from .nn import MLPSpec, adam_init, adam_step, mlp_backward, mlp_forward, mlp_init
from .policy import AgentModels, ModelDims, decode_action_value, encode_node, gnn_forward
from . import _kernels


def _check_mlp_gradients(rng) -> bool:
    spec = MLPSpec((4, 6, 3))
    params = mlp_init(spec, rng)
    x = rng.standard_normal(4)
    g_out = rng.standard_normal(3)
    _, cache = mlp_forward(params, x)
    grads, _ = mlp_backward(params, cache, g_out)
    h = 1e-4
    for arr, g_arr in zip(params.arrays(), grads.arrays()):
        flat = arr.ravel()
        for k in range(0, flat.size, max(1, flat.size // 5)):
            orig = flat[k]
            flat[k] = orig + h
            up, _ = mlp_forward(params, x)
            flat[k] = orig - h
            dn, _ = mlp_forward(params, x)
            flat[k] = orig
            fd = float(((up - dn) @ g_out) / (2 * h))
            if not np.isclose(g_arr.ravel()[k], fd, rtol=1e-4, atol=1e-6):
                return False
    return True


def _check_adam_first_step() -> bool:
    # single scalar, g=1, lr=0.1: bias-corrected first step moves by ~lr
    w = np.array([1.0])
    state = adam_init([w], lr=0.1)
    adam_step([w], [np.array([1.0])], state)
    return np.isclose(w[0], 1.0 - 0.1 / (1.0 + state.eps), rtol=1e-12)


def _check_graph_brute_force(rng) -> bool:
    for _ in range(25):
        n = int(rng.integers(2, 10))
        pos = rng.uniform(-2, 2, size=(n, 2))
        vel = rng.uniform(-1, 1, size=(n, 2))
        radii = rng.uniform(0.3, 2.5, size=n)
        adj = np.zeros((n, n), dtype=np.uint8)
        _kernels.radius_adjacency(pos, radii, adj)
        for i in range(n):
            for j in range(n):
                expect = int(i != j and np.hypot(*(pos[j] - pos[i])) <= radii[i])
                d2 = np.sum((pos[j] - pos[i]) ** 2)
                # compare in squared space exactly as the kernel does
                expect = int(i != j and d2 <= radii[i] ** 2)
                if adj[i, j] != expect:
                    return False
        _ = vel
    return True


def _check_intrinsic_brute_force(rng) -> bool:
    for _ in range(200):
        k = int(rng.integers(1, 6))
        dim = int(rng.integers(2, 8))
        p_i = rng.uniform(-1, 1, size=2)
        neigh = rng.uniform(-1, 1, size=(k, 2))
        o_next = rng.standard_normal(dim)
        preds = rng.standard_normal((k, dim))
        w = neighbor_weights(p_i, neigh)
        got = intrinsic_reward_team(o_next, preds, w)
        # independent double loop
        d = [1.0 / max(np.hypot(*(p_i - neigh[j])), 1e-6) for j in range(k)]
        total = 0.0
        for j in range(k):
            wj = d[j] / sum(d)
            total += wj * np.sqrt(np.sum((o_next - preds[j]) ** 2))
        if abs(got - (-total)) > 1e-12 or got > 0.0 or abs(w.sum() - 1.0) > 1e-12:
            return False
    return True


def _check_gae_direct_sum(rng) -> bool:
    steps = 12
    gamma, lam = 0.97, 0.9
    r = rng.standard_normal(steps)
    v = rng.standard_normal(steps)
    dones = np.zeros(steps, dtype=np.uint8)
    dones[-1] = 1
    adv = np.zeros(steps)
    _kernels.gae_scan(r, v, dones, 0.0, gamma, lam, adv)
    v_next = np.concatenate([v[1:], [0.0]])
    v_next[dones == 1] = 0.0
    delta = r + gamma * v_next - v
    for t in range(steps):
        direct = 0.0
        for k in range(t, steps):
            direct += (gamma * lam) ** (k - t) * delta[k]
            if dones[k]:
                break
        if abs(adv[t] - direct) > 1e-10:
            return False
    return True


def _check_env_determinism_and_translation() -> bool:
    spec = ScenarioSpec(scenario="navigation", n_agents=3, horizon=20)
    agents, s1, _ = make_scenario(spec, 11)
    _, s2, _ = make_scenario(spec, 11)
    if not np.array_equal(s1.positions, s2.positions):
        return False
    shift = np.array([0.37, -0.82])
    s_shift = s1.copy()
    s_shift.positions = s1.positions + shift
    s_shift.landmarks = s1.landmarks + shift
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.uniform(-1, 1, size=(3, 2))
        s1, o1, r1, _ = step(s1, agents, spec, a)
        s_shift, o2, r2, _ = step(s_shift, agents, spec, a)
        # covariance holds to ~ulp (float addition is not associative)
        if not np.allclose(s1.positions + shift, s_shift.positions, rtol=0, atol=1e-12):
            return False
        if not np.allclose(r1, r2, rtol=1e-9, atol=1e-12):
            return False
        for x, y in zip(o1, o2):
            if not np.allclose(x.task_features, y.task_features, rtol=0, atol=1e-12):
                return False
        if not all(np.hypot(*s1.velocities[i]) <= agents[i].max_speed for i in range(3)):
            return False
    return True


def _check_gnn_permutation(rng) -> bool:
    dims = ModelDims(embed_dim=8, hidden_dim=16, hidden_layers=1, gnn_dim=12)
    m = AgentModels(0, x_dim=5, obs_dim=9, action_dim=2, dims=dims, init_rng=rng)
    z_i = rng.standard_normal(8)
    ids = np.array([3, 1, 2])
    zs = [rng.standard_normal(8) for _ in range(3)]
    es = [rng.standard_normal(4) for _ in range(3)]
    h1 = gnn_forward(m, z_i, ids, zs, es)
    order = [2, 0, 1]
    h2 = gnn_forward(m, z_i, ids[order], [zs[k] for k in order], [es[k] for k in order])
    return np.array_equal(h1, h2)


def _check_policy_smoke(rng) -> bool:
    dims = ModelDims(embed_dim=8, hidden_dim=16, hidden_layers=1, gnn_dim=12)
    m = AgentModels(0, x_dim=5, obs_dim=9, action_dim=2, dims=dims, init_rng=rng)
    x = rng.standard_normal(5)
    z = encode_node(m, x)
    h = gnn_forward(m, z, np.zeros(0, dtype=np.int64), [], [])
    a, lp, v = decode_action_value(m, h, np.random.default_rng(0))
    return np.isfinite(a).all() and np.isfinite(lp) and np.isfinite(v)


def run_selftest(verbose: bool = True) -> int:
    rng = np.random.default_rng(20240901)
    checks = [
        ("mlp gradients vs central finite differences", lambda: _check_mlp_gradients(rng)),
        ("adam bias-corrected first step", _check_adam_first_step),
        ("comm graph vs brute-force pairwise oracle", lambda: _check_graph_brute_force(rng)),
        ("intrinsic reward vs double-loop oracle", lambda: _check_intrinsic_brute_force(rng)),
        ("gae vs direct summation oracle", lambda: _check_gae_direct_sum(rng)),
        ("env determinism / translation / speed bound", _check_env_determinism_and_translation),
        ("gnn permutation invariance (bit-exact)", lambda: _check_gnn_permutation(rng)),
        ("policy forward smoke", lambda: _check_policy_smoke(rng)),
    ]
    failures = 0
    for name, fn in checks:
        try:
            ok = fn()
        except Exception as exc:  # a crashed check is a failure, not an abort
            ok = False
            if verbose:
                print(f"FAIL {name} (exception: {exc})")
            failures += 1
            continue
        if verbose:
            print(("PASS" if ok else "FAIL") + f" {name}")
        if not ok:
            failures += 1
    if verbose:
        print(f"selftest: {len(checks) - failures}/{len(checks)} checks passed "
              f"(kernel backend: {_kernels.backend_name()})")
    return 0 if failures == 0 else 1
