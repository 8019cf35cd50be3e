"""RL environment layer on top of the rigid-body simulation.

Provides observation assembly, the reward terms, termination logic, resets
with domain randomization (friction, base mass, joint perturbations), command
sampling, periodic push disturbances, the terrain curriculum, and a
vectorized environment that steps N robots in lockstep.

Observation layout (total 243 + 3*dof: 279 conventional, 291 prismatic):
    command (3) | q (dof) | qd (dof) | previous action (dof) |
    gravity direction, base frame (3) | base linear velocity, base frame (3) |
    base angular velocity, base frame (3) | height scan (231)
"""

import dataclasses
import enum
import math

import numpy as np

from . import _kernels
from .config import (
    CommandConfig,
    CurriculumConfig,
    EnvConfig,
    NoiseConfig,
    RewardConfig,
    SuiteConfig,
)
from .morphology import BasePose, MorphologySpec, build_morphology, forward_kinematics
from .simcore import ContactParams, SimBatch, SimState, StepLog
from .terrain import (
    SCAN_NX,
    SCAN_NY,
    SCAN_SPACING,
    Arena,
    TerrainKind,
    build_arena,
    sample_height,
)

__all__ = [
    "Command",
    "Termination",
    "RewardBreakdown",
    "EpisodeStats",
    "CurriculumState",
    "VectorEnv",
    "observation_dim",
    "observation_slices",
    "build_observation",
    "velocity_tracking_reward",
    "filter_touchdowns",
    "compute_reward",
    "check_termination",
    "sample_command",
    "schedule_push",
    "curriculum_update",
]

SCAN_DIM = SCAN_NX * SCAN_NY

# body-frame offsets of the height-scan grid, forward-major (scan row = +x)
_dxg = (np.arange(SCAN_NX) - (SCAN_NX - 1) / 2) * SCAN_SPACING
_dyg = (np.arange(SCAN_NY) - (SCAN_NY - 1) / 2) * SCAN_SPACING
_DXG, _DYG = np.meshgrid(_dxg, _dyg, indexing="ij")
SCAN_OFFSETS_X = np.ascontiguousarray(_DXG.ravel())
SCAN_OFFSETS_Y = np.ascontiguousarray(_DYG.ravel())


@dataclasses.dataclass(frozen=True)
class Command:
    """Desired planar base motion: forward/lateral speed and yaw rate."""

    vx: float
    vy: float
    wz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.wz])


class Termination(enum.IntEnum):
    RUNNING = 0
    BASE_COLLISION = 1
    TIMEOUT = 2
    DIVERGED = 3


@dataclasses.dataclass(frozen=True)
class RewardBreakdown:
    """Per-term reward values (unweighted) plus the weighted total.

    Fields hold floats for a single environment or arrays for a batch.
    """

    lin_vel_tracking: object
    ang_vel_tracking: object
    base_height: object
    flat_orientation: object
    vertical_velocity_penalty: object
    roll_pitch_rate_penalty: object
    torque_penalty: object
    action_rate_penalty: object
    leg_collision_penalty: object
    feet_air_time: object
    total: object

    TERM_FIELDS = (
        "lin_vel_tracking",
        "ang_vel_tracking",
        "base_height",
        "flat_orientation",
        "vertical_velocity_penalty",
        "roll_pitch_rate_penalty",
        "torque_penalty",
        "action_rate_penalty",
        "leg_collision_penalty",
        "feet_air_time",
    )


# weight attribute on RewardConfig for each term field, in TERM_FIELDS order
_TERM_WEIGHTS = (
    "lin_vel_tracking",
    "ang_vel_tracking",
    "base_height",
    "flat_orientation",
    "vertical_velocity",
    "roll_pitch_rate",
    "torque",
    "action_rate",
    "leg_collision",
    "feet_air_time",
)


@dataclasses.dataclass(frozen=True)
class EpisodeStats:
    """Distance bookkeeping used by the curriculum promotion rule."""

    tracked_distance: float      # integral of measured horizontal speed, m
    commanded_distance: float    # integral of commanded horizontal speed, m

    @property
    def distance_ratio(self) -> float:
        if self.commanded_distance <= 1e-9:
            return 1.0  # nothing was asked for; count as satisfied
        return self.tracked_distance / self.commanded_distance


@dataclasses.dataclass(frozen=True)
class CurriculumState:
    kind: TerrainKind
    level: int
    promotions: int = 0
    demotions: int = 0


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


def observation_dim(dof: int) -> int:
    return 3 + 3 * dof + 9 + SCAN_DIM


def observation_slices(dof: int) -> dict:
    """Start/stop of every observation block, in serialization order."""
    bounds = {}
    cursor = 0
    for name, width in (
        ("command", 3),
        ("joint_pos", dof),
        ("joint_vel", dof),
        ("prev_action", dof),
        ("gravity", 3),
        ("base_lin_vel", 3),
        ("base_ang_vel", 3),
        ("height_scan", SCAN_DIM),
    ):
        bounds[name] = slice(cursor, cursor + width)
        cursor += width
    return bounds


def noise_scale_vector(dof: int, noise: NoiseConfig) -> np.ndarray:
    """Per-element half-widths of the additive uniform observation noise.

    Command and previous-action blocks are exact (they are the agent's own
    information) and get zero noise.
    """
    scale = np.zeros(observation_dim(dof))
    sl = observation_slices(dof)
    scale[sl["joint_pos"]] = noise.joint_pos
    scale[sl["joint_vel"]] = noise.joint_vel
    scale[sl["gravity"]] = noise.gravity
    scale[sl["base_lin_vel"]] = noise.base_lin_vel
    scale[sl["base_ang_vel"]] = noise.base_ang_vel
    scale[sl["height_scan"]] = noise.height_scan
    return scale


def _rot_rows(quat: np.ndarray):
    """The nine entries of the base rotation matrix, batched (columns of quat)."""
    qw, qx, qy, qz = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
    r01 = 2.0 * (qx * qy - qw * qz)
    r02 = 2.0 * (qx * qz + qw * qy)
    r10 = 2.0 * (qx * qy + qw * qz)
    r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
    r12 = 2.0 * (qy * qz - qw * qx)
    r20 = 2.0 * (qx * qz - qw * qy)
    r21 = 2.0 * (qy * qz + qw * qx)
    r22 = 1.0 - 2.0 * (qx * qx + qy * qy)
    return r00, r01, r02, r10, r11, r12, r20, r21, r22


def _world_to_base(quat: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate world-frame rows of v into the base frame (R^T v), batched."""
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = _rot_rows(quat)
    vx, vy, vz = v[:, 0], v[:, 1], v[:, 2]
    return np.column_stack([
        r00 * vx + r10 * vy + r20 * vz,
        r01 * vx + r11 * vy + r21 * vz,
        r02 * vx + r12 * vy + r22 * vz,
    ])


def _yaw_of(quat: np.ndarray) -> np.ndarray:
    qw, qx, qy, qz = quat[:, 0], quat[:, 1], quat[:, 2], quat[:, 3]
    return np.arctan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))


def _assemble_observations(pos, quat, linvel, angvel, q, qd, prev_action,
                           commands, arena: Arena, noise_draws=None) -> np.ndarray:
    """Batched observation matrix; noise_draws is pre-scaled additive noise."""
    N, dof = q.shape
    obs = np.empty((N, observation_dim(dof)))
    sl = observation_slices(dof)
    obs[:, sl["command"]] = commands
    obs[:, sl["joint_pos"]] = q
    obs[:, sl["joint_vel"]] = qd
    obs[:, sl["prev_action"]] = prev_action
    r = _rot_rows(quat)
    # gravity direction in base frame: R^T (0,0,-1) = -(third row of R)
    obs[:, sl["gravity"]] = np.column_stack([-r[6], -r[7], -r[8]])
    obs[:, sl["base_lin_vel"]] = _world_to_base(quat, linvel)
    obs[:, sl["base_ang_vel"]] = _world_to_base(quat, angvel)
    scan = np.zeros((N, SCAN_DIM))
    _kernels.height_scan_batch(
        arena.heights, arena.origin[0], arena.origin[1], arena.resolution,
        np.ascontiguousarray(pos), np.ascontiguousarray(_yaw_of(quat)),
        SCAN_OFFSETS_X, SCAN_OFFSETS_Y, scan,
    )
    obs[:, sl["height_scan"]] = scan
    if noise_draws is not None:
        obs = obs + noise_draws
    return obs


def build_observation(state: SimState, cmd: Command, prev_action: np.ndarray,
                      arena: Arena, noise: NoiseConfig, rng=None) -> np.ndarray:
    """Single-environment observation vector (see module docstring layout)."""
    dof = state.q.shape[0]
    prev_action = np.asarray(prev_action, dtype=np.float64)
    if prev_action.shape != (dof,):
        raise ValueError(
            f"prev_action must have shape ({dof},), got {prev_action.shape}")
    draws = None
    if noise.enabled and rng is not None:
        draws = (rng.uniform(-1.0, 1.0, observation_dim(dof))
                 * noise_scale_vector(dof, noise))[None, :]
    obs = _assemble_observations(
        state.base_position[None, :], state.base_orientation[None, :],
        state.base_lin_vel[None, :], state.base_ang_vel[None, :],
        state.q[None, :], state.qd[None, :], prev_action[None, :],
        cmd.as_array()[None, :], arena, draws,
    )
    return obs[0]


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


def velocity_tracking_reward(v, v_star, sigma: float):
    """exp(-||v - v*||^2 / sigma^2): 1 at perfect tracking, e^-1 at one width."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    d = np.asarray(v, dtype=np.float64) - np.asarray(v_star, dtype=np.float64)
    err = np.sum(d * d, axis=-1) if d.ndim else d * d
    return np.exp(-err / (sigma * sigma))


def filter_touchdowns(prev_contact: np.ndarray, contact_now: np.ndarray,
                      air_time: np.ndarray, dt: float):
    """Control-rate touchdown events with a one-period contact debounce.

    Contact flags are sampled once per control period; a period's flags are
    OR-ed with the previous period's, so a separation shorter than one
    control period reads as continuous contact. A touchdown registers only
    when a foot lands with accumulated air time, which filters out the
    contact chatter a stiff penalty-spring model produces under actuation
    noise (sub-period bounces would otherwise each count as a landing).

    Returns (touchdown_count, touchdown_air_sum, air_time, prev_contact):
    per-env event counts, the summed air time those events ended (inclusive
    of the landing period), the updated per-foot air-time accumulators, and
    the contact flags to carry into the next period.
    """
    filt = contact_now | prev_contact
    first = (air_time > 0.0) & filt
    air_time = air_time + dt
    td_air = np.sum(np.where(first, air_time, 0.0), axis=-1)
    td_count = np.sum(first, axis=-1).astype(np.float64)
    air_time = np.where(filt, 0.0, air_time)
    return td_count, td_air, air_time, contact_now.astype(bool)


def _reward_batch(quat, linvel, angvel, height_above_terrain, tau,
                  illegal_upper, illegal_lower, touchdown_count,
                  touchdown_air_sum, commands, prev_action, action,
                  cfg: RewardConfig) -> RewardBreakdown:
    v_b = _world_to_base(quat, linvel)
    w_b = _world_to_base(quat, angvel)
    r = _rot_rows(quat)
    g_bx, g_by = -r[6], -r[7]
    sig2 = cfg.sigma * cfg.sigma

    dvx = v_b[:, 0] - commands[:, 0]
    dvy = v_b[:, 1] - commands[:, 1]
    lin = np.exp(-(dvx * dvx + dvy * dvy) / sig2)
    dwz = w_b[:, 2] - commands[:, 2]
    ang = np.exp(-(dwz * dwz) / sig2)
    dh = height_above_terrain - cfg.desired_base_height
    height = np.exp(-(dh * dh) / (cfg.base_height_sigma * cfg.base_height_sigma))
    flat = -(g_bx * g_bx + g_by * g_by)
    vert = -(linvel[:, 2] * linvel[:, 2])
    rollpitch = -(w_b[:, 0] * w_b[:, 0] + w_b[:, 1] * w_b[:, 1])
    torque = -np.sum(tau * tau, axis=1)
    da = action - prev_action
    action_rate = -np.sum(da * da, axis=1)
    collisions = -(np.sum(illegal_upper, axis=1) + np.sum(illegal_lower, axis=1)).astype(np.float64)
    air = touchdown_air_sum - cfg.air_time_min * touchdown_count

    terms = (lin, ang, height, flat, vert, rollpitch, torque, action_rate,
             collisions, air)
    total = np.zeros_like(lin)
    for term, wname in zip(terms, _TERM_WEIGHTS):
        total = total + getattr(cfg, wname) * term
    return RewardBreakdown(*terms, total)


def compute_reward(prev: SimState, next_state: SimState, log: StepLog,
                   cmd: Command, prev_action: np.ndarray, action: np.ndarray,
                   cfg: RewardConfig, terrain_height: float = 0.0) -> RewardBreakdown:
    """Reward terms for one control transition of a single environment.

    `terrain_height` is the surface height under the new base position; the
    base-height term tracks (base z - terrain_height) against the target.
    """
    b = _reward_batch(
        next_state.base_orientation[None, :],
        next_state.base_lin_vel[None, :],
        next_state.base_ang_vel[None, :],
        np.array([next_state.base_position[2] - terrain_height]),
        np.asarray(log.tau, dtype=np.float64)[None, :],
        np.asarray(log.illegal_upper, dtype=np.float64)[None, :],
        np.asarray(log.illegal_lower, dtype=np.float64)[None, :],
        np.array([log.touchdown_count], dtype=np.float64),
        np.array([log.touchdown_air_sum], dtype=np.float64),
        cmd.as_array()[None, :],
        np.asarray(prev_action, dtype=np.float64)[None, :],
        np.asarray(action, dtype=np.float64)[None, :],
        cfg,
    )
    return RewardBreakdown(*(float(getattr(b, f)[0]) for f in
                             RewardBreakdown.TERM_FIELDS), float(b.total[0]))


# ---------------------------------------------------------------------------
# termination, commands, pushes, curriculum
# ---------------------------------------------------------------------------


def check_termination(state: SimState, log: StepLog, elapsed: float,
                      max_duration: float, diverged: bool = False) -> Termination:
    """Episode outcome; base collision outranks timeout, divergence outranks all."""
    if diverged:
        return Termination.DIVERGED
    if log.illegal_base:
        return Termination.BASE_COLLISION
    if elapsed >= max_duration:
        return Termination.TIMEOUT
    return Termination.RUNNING


def sample_command(ranges: CommandConfig, rng) -> Command:
    for name in ("vx_range", "vy_range", "wz_range"):
        lo, hi = getattr(ranges, name)
        if lo > hi:
            raise ValueError(f"{name} is not well-ordered: ({lo}, {hi})")
    return Command(
        vx=float(rng.uniform(ranges.vx_range[0], ranges.vx_range[1])),
        vy=float(rng.uniform(ranges.vy_range[0], ranges.vy_range[1])),
        wz=float(rng.uniform(ranges.wz_range[0], ranges.wz_range[1])),
    )


def schedule_push(state: SimState, elapsed_since_push: float, rng,
                  interval: float = 15.0, max_speed: float = 1.0):
    """A push (unit direction, speed) once the interval has elapsed, else None."""
    if elapsed_since_push < interval:
        return None
    angle = rng.uniform(0.0, 2.0 * math.pi)
    direction = np.array([math.cos(angle), math.sin(angle)])
    speed = float(rng.uniform(0.0, max_speed))
    return direction, speed


def curriculum_update(cs: CurriculumState, stats: EpisodeStats,
                      cfg: CurriculumConfig | None = None) -> CurriculumState:
    """Move one level up/down based on tracked vs. commanded distance."""
    cfg = cfg or CurriculumConfig()
    ratio = stats.distance_ratio
    if ratio >= cfg.promote_threshold:
        return CurriculumState(
            kind=cs.kind,
            level=min(cs.level + 1, cfg.max_level),
            promotions=cs.promotions + 1,
            demotions=cs.demotions,
        )
    if ratio < cfg.demote_threshold:
        return CurriculumState(
            kind=cs.kind,
            level=max(cs.level - 1, cfg.min_level),
            promotions=cs.promotions,
            demotions=cs.demotions + 1,
        )
    return cs


# ---------------------------------------------------------------------------
# vectorized environment
# ---------------------------------------------------------------------------


class VectorEnv:
    """N independent environments of one morphology stepped in lockstep.

    The arena is a grid of terrain tiles: one row per difficulty level
    (`min_level`..`max_level`, advancing along +x) and one column per terrain
    kind. Each environment is pinned to a kind column; the curriculum moves
    it between level rows at episode boundaries. Every environment owns a
    private RNG stream, so rollouts are bit-reproducible for a given seed and
    unaffected by the number of neighbours.
    """

    def __init__(self, variant, cfg: SuiteConfig | None = None, n_envs: int = 1,
                 seed: int = 0, terrain_kinds=None, min_level: int | None = None,
                 max_level: int | None = None, arena: Arena | None = None,
                 noise_enabled: bool | None = None, pushes_enabled: bool = True,
                 curriculum_enabled: bool = True, randomize_on_reset: bool = True,
                 friction_override: float | None = None, auto_reset: bool = True,
                 spawn_tile: tuple | None = None):
        self.cfg = cfg or SuiteConfig()
        env_cfg: EnvConfig = self.cfg.env
        self.spec = build_morphology(variant, self.cfg.morphology)
        cur_cfg = env_cfg.curriculum
        kinds = tuple(TerrainKind.parse(k) for k in
                      (terrain_kinds or cur_cfg.kinds))
        self.kinds = kinds
        self.min_level = int(min_level if min_level is not None else cur_cfg.min_level)
        self.max_level = int(max_level if max_level is not None else cur_cfg.max_level)
        if not 1 <= self.min_level <= self.max_level <= cur_cfg.max_level:
            raise ValueError("level window must satisfy 1 <= min <= max <= 12")
        self._level_rule = dataclasses.replace(
            cur_cfg, min_level=self.min_level, max_level=self.max_level)

        if arena is None:
            layout = [[(k, lvl) for k in kinds]
                      for lvl in range(self.min_level, self.max_level + 1)]
            arena = build_arena(layout, seeds=seed, cfg=self.cfg.terrain)
        self.arena = arena

        self.n_envs = int(n_envs)
        self.seed = int(seed)
        self.noise_enabled = (env_cfg.noise.enabled if noise_enabled is None
                              else bool(noise_enabled))
        self.pushes_enabled = bool(pushes_enabled)
        self.curriculum_enabled = bool(curriculum_enabled)
        self.randomize_on_reset = bool(randomize_on_reset)
        self.friction_override = friction_override
        self.auto_reset = bool(auto_reset)
        if spawn_tile is not None:
            row, col = int(spawn_tile[0]), int(spawn_tile[1])
            if not (0 <= row < self.arena.rows and 0 <= col < self.arena.cols):
                raise ValueError(
                    f"spawn_tile {spawn_tile} outside arena "
                    f"{self.arena.rows}x{self.arena.cols}")
            spawn_tile = (row, col)
        self.spawn_tile = spawn_tile
        self.last_log = None  # BatchLog of the most recent control step

        contact = ContactParams.from_config(self.cfg.sim.contact)
        self.batch = SimBatch(self.spec, self.arena, self.n_envs,
                              sim_cfg=self.cfg.sim, contact=contact)
        self.control_dt = self.cfg.sim.dt * self.cfg.sim.control_decimation
        self.max_steps = int(round(env_cfg.max_episode_s / self.control_dt))

        self.dof = self.spec.dof
        self.obs_dim = observation_dim(self.dof)
        self._noise_scale = noise_scale_vector(self.dof, env_cfg.noise)

        self.rngs = [np.random.default_rng(np.random.SeedSequence([self.seed, i]))
                     for i in range(self.n_envs)]
        self.curriculum = [
            CurriculumState(kind=kinds[i % len(kinds)], level=self.min_level)
            for i in range(self.n_envs)
        ]
        self.commands = np.zeros((self.n_envs, 3))
        self.prev_action = np.zeros((self.n_envs, self.dof))
        self.steps = np.zeros(self.n_envs, dtype=np.int64)
        self.push_elapsed = np.zeros(self.n_envs)
        self.episode_return = np.zeros(self.n_envs)
        self.tracked_dist = np.zeros(self.n_envs)
        self.commanded_dist = np.zeros(self.n_envs)
        self._finished = np.zeros(self.n_envs, dtype=bool)  # used when auto_reset off
        # control-rate air-time accounting for the gait reward (see
        # filter_touchdowns); decoupled from the kernel's per-substep log
        self._feet_air = np.zeros((self.n_envs, 4))
        self._feet_prev_contact = np.zeros((self.n_envs, 4), dtype=bool)

    # -- helpers ----------------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.dof

    def spawn_xy(self, env_idx: int) -> tuple:
        if self.spawn_tile is not None:
            return self.arena.tile_center(*self.spawn_tile)
        cs = self.curriculum[env_idx]
        row = cs.level - self.min_level
        col = env_idx % len(self.kinds)
        return self.arena.tile_center(row, col)

    def _reset_env(self, i: int) -> None:
        """Fresh episode: spawn at the assigned tile center, re-randomize."""
        rng = self.rngs[i]
        env_cfg = self.cfg.env
        x, y = self.spawn_xy(i)
        q = self.spec.nominal_q.copy()
        lin_vel = np.zeros(3)
        ang_vel = np.zeros(3)
        if self.randomize_on_reset:
            q = q + rng.uniform(-env_cfg.spawn_joint_noise,
                                env_cfg.spawn_joint_noise, self.dof)
            lo, hi = self.spec.joint_limits()
            q = np.clip(q, lo, hi)
            friction = float(rng.uniform(*env_cfg.friction_range))
            mass = self.spec.base_mass + float(
                rng.uniform(-env_cfg.mass_perturb_kg, env_cfg.mass_perturb_kg))
            s = env_cfg.spawn_velocity
            if s > 0.0:
                lin_vel[:2] = rng.uniform(-s, s, 2)
                ang_vel[2] = rng.uniform(-s, s)
        else:
            friction = 1.0
            mass = self.spec.base_mass
        if self.friction_override is not None:
            friction = float(self.friction_override)

        ground = float(sample_height(self.arena, x, y))
        quaternion = np.array([1.0, 0.0, 0.0, 0.0])
        # place the base so the lowest foot ball just clears the surface,
        # whatever the (possibly noised) joint pose puts the legs at
        rel_feet = forward_kinematics(
            self.spec, BasePose(np.zeros(3), quaternion), q)
        drop = float(np.min(rel_feet[:, 2])) - self.spec.foot_radius
        position = np.array([x, y, ground - drop + env_cfg.spawn_height_margin])
        feet = forward_kinematics(self.spec, BasePose(position, quaternion), q)
        state = SimState(
            base_position=position,
            base_orientation=quaternion,
            base_lin_vel=lin_vel,
            base_ang_vel=ang_vel,
            q=q,
            qd=np.zeros(self.dof),
            foot_contact=np.zeros(4, dtype=bool),
            foot_air_time=np.zeros(4),
            contact_anchor=feet,
            time=0.0,
        )
        self.batch.write_state(i, state)
        self.batch.set_env_friction(i, friction)
        self.batch.set_env_mass(i, mass)
        self.commands[i] = sample_command(env_cfg.command, rng).as_array()
        self.prev_action[i] = 0.0
        self.steps[i] = 0
        self.push_elapsed[i] = 0.0
        self.episode_return[i] = 0.0
        self.tracked_dist[i] = 0.0
        self.commanded_dist[i] = 0.0
        self._finished[i] = False
        self._feet_air[i] = 0.0
        self._feet_prev_contact[i] = True  # feet presumed grounded at spawn

    def _noise_draws(self, indices) -> np.ndarray | None:
        if not self.noise_enabled:
            return None
        draws = np.zeros((len(indices), self.obs_dim))
        for row, i in enumerate(indices):
            draws[row] = self.rngs[i].uniform(-1.0, 1.0, self.obs_dim) * self._noise_scale
        return draws

    def _observe(self, indices=None) -> np.ndarray:
        if indices is None:
            indices = range(self.n_envs)
        idx = np.fromiter(indices, dtype=np.intp)
        b = self.batch
        return _assemble_observations(
            b.pos[idx], b.quat[idx], b.linvel[idx], b.angvel[idx],
            b.q[idx], b.qd[idx], self.prev_action[idx], self.commands[idx],
            self.arena, self._noise_draws(idx),
        )

    def reset(self) -> np.ndarray:
        for i in range(self.n_envs):
            self._reset_env(i)
        return self._observe()

    def resample_commands(self) -> None:
        """Draw fresh velocity commands for every environment."""
        for i in range(self.n_envs):
            self.commands[i] = sample_command(self.cfg.env.command,
                                              self.rngs[i]).as_array()

    def level_array(self) -> np.ndarray:
        return np.array([cs.level for cs in self.curriculum], dtype=np.int64)

    # -- stepping ---------------------------------------------------------

    def step(self, actions: np.ndarray):
        """Advance one control period; returns (obs, rewards, dones, info)."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, self.dof):
            raise ValueError(
                f"actions must have shape {(self.n_envs, self.dof)}, got {actions.shape}")
        env_cfg = self.cfg.env

        if self.pushes_enabled:
            self.push_elapsed += self.control_dt
            for i in range(self.n_envs):
                push = schedule_push(None, self.push_elapsed[i], self.rngs[i],
                                     interval=env_cfg.push_interval_s,
                                     max_speed=env_cfg.push_max_speed)
                if push is not None:
                    direction, speed = push
                    self.batch.linvel[i, 0] += speed * direction[0]
                    self.batch.linvel[i, 1] += speed * direction[1]
                    self.push_elapsed[i] = 0.0

        targets = self.spec.nominal_q[None, :] + env_cfg.action_scale * actions
        log = self.batch.step_control(targets)
        self.last_log = log
        self.steps += 1

        b = self.batch
        terrain_h = sample_height(self.arena, b.pos[:, 0], b.pos[:, 1])
        td_count, td_air, self._feet_air, self._feet_prev_contact = \
            filter_touchdowns(self._feet_prev_contact,
                              b.foot_contact.astype(bool),
                              self._feet_air, self.control_dt)
        rewards = _reward_batch(
            b.quat, b.linvel, b.angvel, b.pos[:, 2] - terrain_h,
            log.tau, log.illegal_upper.astype(np.float64),
            log.illegal_lower.astype(np.float64),
            td_count, td_air,
            self.commands, self.prev_action, actions, env_cfg.reward,
        )
        diverged = log.diverged
        if diverged.any():
            zeroed = {f: np.where(diverged, 0.0, getattr(rewards, f))
                      for f in RewardBreakdown.TERM_FIELDS}
            zeroed["total"] = np.where(diverged, 0.0, rewards.total)
            rewards = RewardBreakdown(**zeroed)

        self.episode_return += rewards.total
        speed_xy = np.hypot(b.linvel[:, 0], b.linvel[:, 1])
        cmd_speed = np.hypot(self.commands[:, 0], self.commands[:, 1])
        self.tracked_dist += speed_xy * self.control_dt
        self.commanded_dist += cmd_speed * self.control_dt

        termination = np.full(self.n_envs, Termination.RUNNING, dtype=np.int64)
        termination[self.steps >= self.max_steps] = Termination.TIMEOUT
        termination[log.illegal_base] = Termination.BASE_COLLISION
        termination[diverged] = Termination.DIVERGED
        dones = termination != Termination.RUNNING
        if not self.auto_reset:
            dones = dones & ~self._finished  # report each termination once
            self._finished |= dones

        info = {
            "termination": termination,
            "time_outs": termination == Termination.TIMEOUT,
            "terrain_levels": self.level_array(),
            "episode_return": np.full(self.n_envs, np.nan),
            "episode_length": np.full(self.n_envs, np.nan),
        }
        self.prev_action = actions.copy()

        done_idx = np.nonzero(dones)[0]
        if done_idx.size and self.auto_reset:
            info["terminal_observation"] = np.zeros((self.n_envs, self.obs_dim))
            info["terminal_observation"][done_idx] = self._observe(done_idx)
            for i in done_idx:
                info["episode_return"][i] = self.episode_return[i]
                info["episode_length"][i] = self.steps[i]
                if self.curriculum_enabled:
                    stats = EpisodeStats(self.tracked_dist[i], self.commanded_dist[i])
                    self.curriculum[i] = curriculum_update(
                        self.curriculum[i], stats, self._level_rule)
                self._reset_env(i)

        obs = self._observe()
        return obs, rewards, dones, info
