"""Vectorized 2D particle world with heterogeneous agents.

Three cooperative scenarios on a shared double-integrator physics core:

* ``spread``      - N agents, N landmarks, any agent may occupy any landmark.
* ``navigation``  - like spread, but each landmark carries a color and only
                    the color-matched agent is rewarded for reaching it.
* ``flocking``    - agents gather around a single landmark among random
                    obstacles; rewarded for speed, penalized for spread-out
                    formations and collisions.

Physics: semi-implicit Euler (dt, drag configurable), per-agent force and
speed clamps drawn from heterogeneity ranges, disc-overlap collisions
resolved by positional projection with no restitution.  Positions are
unbounded; the world half-extent only bounds the spawn region.

Rewards default to SPARSE mode: distance-shaping terms are zeroed and only
occupancy bonuses / collision penalties (plus the flocking speed term)
remain.  Dense shaping stays available behind ``sparse_rewards=False``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels

SCENARIOS = ("spread", "navigation", "flocking")

# nominal disc radius used only to keep spawned landmarks apart
_LANDMARK_PLACEMENT_RADIUS = 0.05


class PlacementError(RuntimeError):
    """Raised when random non-overlapping placement fails (world too small)."""


@dataclass(frozen=True)
class AgentSpec:
    """Physical traits of one agent; all quantities strictly positive."""

    id: int
    body_radius: float
    max_speed: float
    max_force: float
    obs_radius: float
    color_tag: int = 0

    def __post_init__(self):
        for name in ("body_radius", "max_speed", "max_force", "obs_radius"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"AgentSpec.{name} must be > 0")


@dataclass
class ScenarioSpec:
    """Scenario layout, physics constants, reward constants and trait ranges."""

    scenario: str = "navigation"
    n_agents: int = 3
    world_half_extent: float = 1.5
    horizon: int = 100
    dt: float = 0.1
    drag: float = 0.05
    sparse_rewards: bool = True
    occupancy_bonus: float = 1.0
    collision_penalty: float = 0.5
    velocity_bonus: float = 0.05      # flocking speed coefficient
    distance_penalty: float = 0.05    # flocking cohesion coefficient
    n_obstacles: int = 2              # flocking only
    body_radius_range: tuple[float, float] = (0.075, 0.15)
    max_speed_range: tuple[float, float] = (0.3, 0.6)
    max_force_range: tuple[float, float] = (0.5, 1.0)
    obs_radius_range: tuple[float, float] = (1.0, 2.0)
    obstacle_radius_range: tuple[float, float] = (0.1, 0.2)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r} (choose from {SCENARIOS})")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.drag < 1.0:
            raise ValueError("drag must be in [0, 1)")
        for name in ("body_radius_range", "max_speed_range", "max_force_range",
                     "obs_radius_range", "obstacle_radius_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")

    @property
    def n_landmarks(self) -> int:
        return 1 if self.scenario == "flocking" else self.n_agents

    def task_dim(self) -> int:
        # one (dx, dy, visible) slot per landmark, plus a goal slot for
        # navigation and a nearest-obstacle slot for flocking
        if self.scenario == "spread":
            return 3 * self.n_landmarks
        if self.scenario == "navigation":
            return 3 * self.n_landmarks + 3
        return 3 + 3  # flocking: single landmark + nearest obstacle

    def obs_dim(self) -> int:
        return 4 + self.task_dim()

    @property
    def action_dim(self) -> int:
        return 2


@dataclass
class WorldState:
    """Shared simulator state; ``collisions`` counts contacts from the last step."""

    positions: np.ndarray        # (N, 2)
    velocities: np.ndarray       # (N, 2)
    landmarks: np.ndarray        # (L, 2)
    landmark_colors: np.ndarray  # (L,) int
    obstacles: np.ndarray        # (M, 2)
    obstacle_radii: np.ndarray   # (M,)
    t: int
    horizon: int
    collisions: np.ndarray = field(default=None)  # (N,) int

    def __post_init__(self):
        if self.collisions is None:
            self.collisions = np.zeros(self.positions.shape[0], dtype=np.int64)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def copy(self) -> "WorldState":
        return WorldState(
            self.positions.copy(), self.velocities.copy(),
            self.landmarks.copy(), self.landmark_colors.copy(),
            self.obstacles.copy(), self.obstacle_radii.copy(),
            self.t, self.horizon, self.collisions.copy(),
        )


@dataclass
class Observation:
    """One agent's partial view: absolute self features + relative task features."""

    self_abs: np.ndarray       # (4,) = (p_x, p_y, v_x, v_y)
    task_features: np.ndarray  # fixed dimension within a scenario

    def vector(self) -> np.ndarray:
        return np.concatenate([self.self_abs, self.task_features])


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _place_disc(rng, radius, half_extent, placed_pos, placed_radii, max_tries=1000):
    lo = -half_extent + radius
    hi = half_extent - radius
    if lo > hi:
        raise PlacementError(f"entity radius {radius} exceeds world half-extent {half_extent}")
    for _ in range(max_tries):
        p = rng.uniform(lo, hi, size=2)
        ok = True
        for q, r in zip(placed_pos, placed_radii):
            d = np.hypot(p[0] - q[0], p[1] - q[1])
            if d < radius + r:
                ok = False
                break
        if ok:
            return p
    raise PlacementError(
        f"could not place entity of radius {radius} after {max_tries} tries "
        f"(world half-extent {half_extent} too small?)"
    )


def draw_agent_specs(spec: ScenarioSpec, seed) -> list[AgentSpec]:
    """Draw heterogeneous agent traits uniformly from the configured ranges."""
    rng = _as_rng(seed)
    n = spec.n_agents
    body_r = rng.uniform(*spec.body_radius_range, size=n)
    max_sp = rng.uniform(*spec.max_speed_range, size=n)
    max_fo = rng.uniform(*spec.max_force_range, size=n)
    obs_r = rng.uniform(*spec.obs_radius_range, size=n)
    return [
        AgentSpec(id=i, body_radius=float(body_r[i]), max_speed=float(max_sp[i]),
                  max_force=float(max_fo[i]), obs_radius=float(obs_r[i]), color_tag=i)
        for i in range(n)
    ]


def make_scenario(
    spec: ScenarioSpec, seed, agents: list[AgentSpec] | None = None
) -> tuple[list[AgentSpec], WorldState, list[Observation]]:
    """Draw heterogeneous agents and a fresh episode; deterministic given seed.

    Passing ``agents`` reuses existing traits (episode resets within a run
    re-randomize the layout but keep each agent's physical identity).
    """
    rng = _as_rng(seed)
    n = spec.n_agents

    if agents is None:
        agents = draw_agent_specs(spec, rng)
    elif len(agents) != n:
        raise ValueError(f"got {len(agents)} agents for n_agents={n}")
    body_r = np.array([a.body_radius for a in agents])

    if spec.scenario == "navigation":
        landmark_colors = rng.permutation(n)
    else:
        landmark_colors = np.zeros(spec.n_landmarks, dtype=np.int64)

    placed_pos: list[np.ndarray] = []
    placed_radii: list[float] = []

    obstacles = np.zeros((0, 2))
    obstacle_radii = np.zeros(0)
    if spec.scenario == "flocking" and spec.n_obstacles > 0:
        obstacle_radii = rng.uniform(*spec.obstacle_radius_range, size=spec.n_obstacles)
        rows = []
        for k in range(spec.n_obstacles):
            p = _place_disc(rng, obstacle_radii[k], spec.world_half_extent, placed_pos, placed_radii)
            rows.append(p)
            placed_pos.append(p)
            placed_radii.append(obstacle_radii[k])
        obstacles = np.asarray(rows)

    positions = np.zeros((n, 2))
    for i in range(n):
        p = _place_disc(rng, body_r[i], spec.world_half_extent, placed_pos, placed_radii)
        positions[i] = p
        placed_pos.append(p)
        placed_radii.append(body_r[i])

    landmarks = np.zeros((spec.n_landmarks, 2))
    for k in range(spec.n_landmarks):
        p = _place_disc(rng, _LANDMARK_PLACEMENT_RADIUS, spec.world_half_extent,
                        placed_pos, placed_radii)
        landmarks[k] = p
        placed_pos.append(p)
        placed_radii.append(_LANDMARK_PLACEMENT_RADIUS)

    state = WorldState(
        positions=positions,
        velocities=np.zeros((n, 2)),
        landmarks=landmarks,
        landmark_colors=landmark_colors,
        obstacles=obstacles,
        obstacle_radii=obstacle_radii,
        t=0,
        horizon=spec.horizon,
    )
    return agents, state, observe_all(state, agents, spec)


def reset(spec: ScenarioSpec, seed):
    """Fresh episode; same contract as make_scenario."""
    return make_scenario(spec, seed)


def _entity_slot(offset: np.ndarray, visible: bool) -> tuple[float, float, float]:
    if visible:
        return float(offset[0]), float(offset[1]), 1.0
    return 0.0, 0.0, 0.0


def observe(state: WorldState, agent: AgentSpec, spec: ScenarioSpec) -> Observation:
    """Partial view of the state for one agent.

    Entities beyond obs_radius are masked to a (0, 0) offset with
    visibility flag 0, so the observation dimension is fixed.  Slots are
    ordered by entity index.
    """
    i = agent.id
    if not 0 <= i < state.positions.shape[0]:
        raise ValueError(f"invalid agent id {i}")
    p = state.positions[i]
    r2 = agent.obs_radius * agent.obs_radius
    feats: list[float] = []

    def visible(off):
        return off[0] * off[0] + off[1] * off[1] <= r2

    if spec.scenario in ("spread", "navigation"):
        for k in range(state.landmarks.shape[0]):
            off = state.landmarks[k] - p
            feats.extend(_entity_slot(off, visible(off)))
        if spec.scenario == "navigation":
            goal_idx = int(np.nonzero(state.landmark_colors == agent.color_tag)[0][0])
            off = state.landmarks[goal_idx] - p
            feats.extend(_entity_slot(off, visible(off)))
    else:  # flocking
        off = state.landmarks[0] - p
        feats.extend(_entity_slot(off, visible(off)))
        if state.obstacles.shape[0] > 0:
            d2 = np.sum((state.obstacles - p) ** 2, axis=1)
            k = int(np.argmin(d2))
            off = state.obstacles[k] - p
            feats.extend(_entity_slot(off, visible(off)))
        else:
            feats.extend((0.0, 0.0, 0.0))

    self_abs = np.array([p[0], p[1], state.velocities[i, 0], state.velocities[i, 1]])
    return Observation(self_abs=self_abs, task_features=np.asarray(feats))


def observe_all(state: WorldState, agents: list[AgentSpec], spec: ScenarioSpec) -> list[Observation]:
    return [observe(state, a, spec) for a in agents]


def step(
    state: WorldState,
    agents: list[AgentSpec],
    spec: ScenarioSpec,
    joint_action: np.ndarray,
) -> tuple[WorldState, list[Observation], np.ndarray, bool]:
    """Advance one tick; returns (next_state, observations, r_ext, done)."""
    if state.done:
        raise ValueError(f"step() on a finished episode (t={state.t} >= horizon {state.horizon})")
    forces = np.asarray(joint_action, dtype=np.float64)
    if forces.shape != state.positions.shape:
        raise ValueError(f"joint_action shape {forces.shape} != {state.positions.shape}")
    if not np.all(np.isfinite(forces)):
        raise ValueError("non-finite forces")

    nxt = state.copy()
    nxt.collisions = np.zeros(spec.n_agents, dtype=np.int64)
    max_force = np.array([a.max_force for a in agents])
    max_speed = np.array([a.max_speed for a in agents])
    _kernels.integrate_step(nxt.positions, nxt.velocities, forces,
                            max_force, max_speed, spec.dt, spec.drag)
    radii = np.array([a.body_radius for a in agents])
    _kernels.resolve_agent_collisions(nxt.positions, radii, nxt.collisions)
    if nxt.obstacles.shape[0] > 0:
        _kernels.resolve_obstacle_collisions(nxt.positions, radii, nxt.obstacles,
                                             nxt.obstacle_radii, nxt.collisions)
    nxt.t = state.t + 1

    rewards = np.array([extrinsic_reward(state, nxt, a, spec) for a in agents])
    return nxt, observe_all(nxt, agents, spec), rewards, nxt.done


def extrinsic_reward(state: WorldState, next_state: WorldState,
                     agent: AgentSpec, spec: ScenarioSpec) -> float:
    """Environment reward for one agent over the (state -> next_state) transition.

    Sparse mode zeroes the distance-shaping terms; occupancy bonus,
    collision penalty and the flocking speed term remain.
    """
    i = agent.id
    p = next_state.positions[i]
    r = -spec.collision_penalty * float(next_state.collisions[i])

    if spec.scenario in ("spread", "navigation"):
        if spec.scenario == "spread":
            d = float(np.min(np.sqrt(np.sum((next_state.landmarks - p) ** 2, axis=1))))
        else:
            goal_idx = int(np.nonzero(next_state.landmark_colors == agent.color_tag)[0][0])
            d = float(np.hypot(*(next_state.landmarks[goal_idx] - p)))
        if d <= agent.body_radius:
            r += spec.occupancy_bonus
        if not spec.sparse_rewards:
            r -= d
    else:  # flocking
        r += spec.velocity_bonus * float(np.hypot(*next_state.velocities[i]))
        if not spec.sparse_rewards and spec.n_agents > 1:
            others = np.delete(next_state.positions, i, axis=0)
            mean_d = float(np.mean(np.sqrt(np.sum((others - p) ** 2, axis=1))))
            r -= spec.distance_penalty * mean_d
    return r


class ParticleWorld:
    """One environment instance: owns its RNG stream and current episode.

    Instances are single-threaded; run several with independent seeds for
    parallel collection.
    """

    def __init__(self, spec: ScenarioSpec, seed, agents: list[AgentSpec] | None = None):
        self.spec = spec
        self.rng = _as_rng(seed)
        self.agents, self.state, self._obs = make_scenario(spec, self.rng, agents=agents)

    def reset(self) -> list[Observation]:
        self.agents, self.state, self._obs = make_scenario(self.spec, self.rng, agents=self.agents)
        return self._obs

    def observations(self) -> list[Observation]:
        return self._obs

    def step(self, joint_action) -> tuple[list[Observation], np.ndarray, bool]:
        self.state, self._obs, rewards, done = step(self.state, self.agents, self.spec, joint_action)
        return self._obs, rewards, done
