"""Hot numeric inner loops: numba-compiled kernels with a numpy fallback.

The loop kernels below are JIT-compiled with ``numba.njit`` when numba is
importable.  Setting ``COHET_DISABLE_NUMBA=1`` (or a failed numba import)
selects the fallback path: vectorized numpy where the computation is
per-element independent, plain Python loops where it is inherently
sequential (contact resolution, GAE scan).

Both paths execute the same arithmetic on each element in the same order,
restricted to +, -, *, /, sqrt and comparisons (exactly rounded under
IEEE-754), so results are bit-identical regardless of backend.

``benchmarks/bench_kernels.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("COHET_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

if not _DISABLE:
    try:
        from numba import njit as _njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via the env flag
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numba kernel sources
# ---------------------------------------------------------------------------

def _integrate_step_loop(pos, vel, forces, max_force, max_speed, dt, drag):
    n = pos.shape[0]
    for i in range(n):
        fx = forces[i, 0]
        fy = forces[i, 1]
        fmag = np.sqrt(fx * fx + fy * fy)
        if fmag > max_force[i]:
            scale = max_force[i] / fmag
            fx *= scale
            fy *= scale
        vx = (vel[i, 0] + fx * dt) * (1.0 - drag)
        vy = (vel[i, 1] + fy * dt) * (1.0 - drag)
        # two-pass norm clamp: the second pass absorbs the one-ulp
        # overshoot rescaling can leave, so |v| <= max_speed holds exactly
        for _ in range(2):
            smag = np.sqrt(vx * vx + vy * vy)
            if smag > max_speed[i]:
                scale = max_speed[i] / smag
                vx *= scale
                vy *= scale
            else:
                break
        vel[i, 0] = vx
        vel[i, 1] = vy
        pos[i, 0] += vx * dt
        pos[i, 1] += vy * dt


def _resolve_agent_collisions_loop(pos, radii, counts):
    n = pos.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dist = np.sqrt(dx * dx + dy * dy)
            min_dist = radii[i] + radii[j]
            if dist < min_dist:
                counts[i] += 1
                counts[j] += 1
                if dist > 0.0:
                    ux = dx / dist
                    uy = dy / dist
                else:
                    # coincident centres: deterministic separation axis
                    ux = 1.0
                    uy = 0.0
                push = 0.5 * (min_dist - dist)
                pos[i, 0] -= push * ux
                pos[i, 1] -= push * uy
                pos[j, 0] += push * ux
                pos[j, 1] += push * uy


def _resolve_obstacle_collisions_loop(pos, radii, obs_pos, obs_radii, counts):
    n = pos.shape[0]
    m = obs_pos.shape[0]
    for i in range(n):
        for k in range(m):
            dx = pos[i, 0] - obs_pos[k, 0]
            dy = pos[i, 1] - obs_pos[k, 1]
            dist = np.sqrt(dx * dx + dy * dy)
            min_dist = radii[i] + obs_radii[k]
            if dist < min_dist:
                counts[i] += 1
                if dist > 0.0:
                    ux = dx / dist
                    uy = dy / dist
                else:
                    ux = 1.0
                    uy = 0.0
                push = min_dist - dist
                pos[i, 0] += push * ux
                pos[i, 1] += push * uy


def _radius_adjacency_loop(pos, obs_radius, out):
    n = pos.shape[0]
    for i in range(n):
        r2 = obs_radius[i] * obs_radius[i]
        for j in range(n):
            if i == j:
                out[i, j] = 0
            else:
                dx = pos[j, 0] - pos[i, 0]
                dy = pos[j, 1] - pos[i, 1]
                d2 = dx * dx + dy * dy
                out[i, j] = 1 if d2 <= r2 else 0


def _gae_scan_loop(rewards, values, dones, bootstrap, gamma, lam, adv):
    steps = rewards.shape[0]
    next_value = bootstrap
    next_adv = 0.0
    for t in range(steps - 1, -1, -1):
        not_done = 0.0 if dones[t] == 1 else 1.0
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        next_adv = delta + gamma * lam * next_adv * not_done
        adv[t] = next_adv
        next_value = values[t]


def _segment_sum_loop(values, seg_ids, out):
    e_count = values.shape[0]
    d = values.shape[1]
    for e in range(e_count):
        s = seg_ids[e]
        for k in range(d):
            out[s, k] += values[e, k]


def _adam_update_loop(a, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    n = a.shape[0]
    for k in range(n):
        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k]
        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]
        a[k] -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)


# ---------------------------------------------------------------------------
# numpy fallbacks (vectorized where per-element independent)
# ---------------------------------------------------------------------------

def _integrate_step_numpy(pos, vel, forces, max_force, max_speed, dt, drag):
    """Vectorized semi-implicit Euler step, in place.

    Per agent: clamp |f| to max_force, v <- (v + f*dt)*(1-drag),
    clamp |v| to max_speed, p <- p + v*dt.  Unit mass.
    """
    fmag = np.sqrt(forces[:, 0] ** 2 + forces[:, 1] ** 2)
    over = fmag > max_force
    f = forces.copy()
    if over.any():
        f[over] *= (max_force[over] / fmag[over])[:, None]
    v = (vel + f * dt) * (1.0 - drag)
    for _ in range(2):
        smag = np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2)
        over = smag > max_speed
        if not over.any():
            break
        v[over] *= (max_speed[over] / smag[over])[:, None]
    vel[:] = v
    pos += v * dt


def _radius_adjacency_numpy(pos, obs_radius, out):
    """out[i, j] = 1 iff j != i and |p_j - p_i|^2 <= obs_radius[i]^2.

    Squared-distance comparison is exact, so the inclusive boundary
    (distance == radius) is decided without rounding.
    """
    diff = pos[None, :, :] - pos[:, None, :]
    d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
    out[:] = d2 <= (obs_radius * obs_radius)[:, None]
    np.fill_diagonal(out, 0)


def _segment_sum_numpy(values, seg_ids, out):
    # np.add.at applies updates sequentially in index order, matching the loop
    np.add.at(out, seg_ids, values)


if HAS_NUMBA:
    integrate_step = _njit(cache=True, fastmath=False)(_integrate_step_loop)
    resolve_agent_collisions = _njit(cache=True, fastmath=False)(_resolve_agent_collisions_loop)
    resolve_obstacle_collisions = _njit(cache=True, fastmath=False)(_resolve_obstacle_collisions_loop)
    radius_adjacency = _njit(cache=True, fastmath=False)(_radius_adjacency_loop)
    gae_scan = _njit(cache=True, fastmath=False)(_gae_scan_loop)
    segment_sum = _njit(cache=True, fastmath=False)(_segment_sum_loop)
else:
    integrate_step = _integrate_step_numpy
    resolve_agent_collisions = _resolve_agent_collisions_loop
    resolve_obstacle_collisions = _resolve_obstacle_collisions_loop
    radius_adjacency = _radius_adjacency_numpy
    gae_scan = _gae_scan_loop
    segment_sum = _segment_sum_numpy


def backend_name() -> str:
    return "numba" if HAS_NUMBA else "numpy"
