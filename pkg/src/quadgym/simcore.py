"""Rigid floating-base quadruped dynamics with penalty contacts.

The model keeps the base as a single rigid body (box inertia) and treats leg
links as massless: each joint integrates a reflected-inertia law
``I_refl * qdd = tau_pd + (J^T F_contact)`` while the summed foot forces act
as a wrench on the base. Feet are spheres against a heightfield; the normal
force is a damped penalty along the local terrain normal and the tangential
force is Coulomb-saturated viscous sliding with a stick spring anchored at
the touchdown point.

Integration is semi-implicit Euler. The hot loop lives in
``quadgym._kernels`` (compiled extension with a NumPy fallback); this module
provides the typed single-robot API plus the batched world used by the RL
environment.
"""

import dataclasses
import json

import numpy as np

from . import _kernels
from .config import ContactConfig, SimConfig
from .morphology import BasePose, MorphologySpec, forward_kinematics

__all__ = [
    "ContactParams",
    "SimState",
    "StepLog",
    "SimulationDiverged",
    "SimBatch",
    "BatchLog",
    "pd_torque",
    "contact_force",
    "step",
    "apply_external_push",
    "nominal_state",
    "trajectory_record",
]


class SimulationDiverged(RuntimeError):
    """Raised when integration produced non-finite or absurdly large state."""


@dataclasses.dataclass(frozen=True)
class ContactParams:
    """Penalty-contact coefficients; friction is set per episode."""

    k_n: float = 40000.0
    c_n: float = 500.0
    k_t: float = 6000.0
    c_t: float = 200.0
    mu: float = 1.0
    v_slip: float = 0.05

    def __post_init__(self):
        if self.k_n <= 0.0 or self.c_n <= 0.0:
            raise ValueError("normal stiffness and damping must be positive")
        if self.k_t <= 0.0 or self.c_t < 0.0:
            raise ValueError("tangential stiffness must be positive, damping non-negative")
        if self.mu < 0.0:
            raise ValueError("friction coefficient must be non-negative")
        if self.v_slip <= 0.0:
            raise ValueError("stiction velocity threshold must be positive")

    @classmethod
    def from_config(cls, cfg: ContactConfig, mu: float = 1.0) -> "ContactParams":
        return cls(k_n=cfg.k_n, c_n=cfg.c_n, k_t=cfg.k_t, c_t=cfg.c_t,
                   mu=mu, v_slip=cfg.v_slip)


@dataclasses.dataclass
class SimState:
    """Full dynamic state of one robot.

    Velocities are expressed in the world frame; the quaternion is (w,x,y,z)
    and is renormalized every step. `contact_anchor` carries the tangential
    stick-spring anchor per foot (world frame), part of the contact state.
    """

    base_position: np.ndarray        # (3,)
    base_orientation: np.ndarray     # (4,)
    base_lin_vel: np.ndarray         # (3,)
    base_ang_vel: np.ndarray         # (3,)
    q: np.ndarray                    # (dof,)
    qd: np.ndarray                   # (dof,)
    foot_contact: np.ndarray         # (4,) bool
    foot_air_time: np.ndarray        # (4,) s
    contact_anchor: np.ndarray       # (4,3)
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            base_position=self.base_position.copy(),
            base_orientation=self.base_orientation.copy(),
            base_lin_vel=self.base_lin_vel.copy(),
            base_ang_vel=self.base_ang_vel.copy(),
            q=self.q.copy(),
            qd=self.qd.copy(),
            foot_contact=self.foot_contact.copy(),
            foot_air_time=self.foot_air_time.copy(),
            contact_anchor=self.contact_anchor.copy(),
            time=self.time,
        )


@dataclasses.dataclass(frozen=True)
class StepLog:
    """Per-step diagnostics: actuator effort and contact/collision flags."""

    tau: np.ndarray                # (dof,) applied actuator torques/forces
    joint_velocity: np.ndarray     # (dof,) velocities after the update
    contact_forces: np.ndarray     # (4,3) world-frame foot forces
    illegal_base: bool
    illegal_upper: np.ndarray      # (4,) bool, upper-leg segment below terrain
    illegal_lower: np.ndarray      # (4,) bool
    touchdown_count: float = 0.0   # feet that made contact during the step
    touchdown_air_sum: float = 0.0  # summed airborne time those feet ended


@dataclasses.dataclass(frozen=True)
class BatchLog:
    """Aggregated kernel outputs for one control period of a SimBatch."""

    tau: np.ndarray               # (N,dof) last-substep torques
    joint_velocity: np.ndarray    # (N,dof)
    contact_forces: np.ndarray    # (N,4,3)
    touchdown_count: np.ndarray   # (N,) touchdowns during the period
    touchdown_air_sum: np.ndarray  # (N,) summed air time ended by touchdowns
    illegal_base: np.ndarray      # (N,) bool
    illegal_upper: np.ndarray     # (N,4) bool
    illegal_lower: np.ndarray     # (N,4) bool
    diverged: np.ndarray          # (N,) bool


def pd_torque(params, target: float, q_i: float, qd_i: float) -> float:
    """Joint-space PD control effort, clamped to the actuator limit."""
    raw = params.kp * (target - q_i) - params.kd * qd_i
    lim = params.torque_limit
    if raw > lim:
        return lim
    if raw < -lim:
        return -lim
    return raw


def contact_force(foot_center, foot_vel, arena, cp: ContactParams,
                  foot_radius: float, anchor=None) -> np.ndarray:
    """World-frame contact force on one spherical foot (zero when clear).

    `anchor` is the tangential-spring anchor point; when omitted the foot
    position is used, which reduces the stick regime to pure damping.
    """
    foot_center = np.asarray(foot_center, dtype=np.float64)
    foot_vel = np.asarray(foot_vel, dtype=np.float64)
    if anchor is None:
        anchor = foot_center
    anchor = np.asarray(anchor, dtype=np.float64)

    H = arena.heights
    ox, oy = arena.origin
    res = arena.resolution
    fx = np.array([foot_center[0]])
    fy = np.array([foot_center[1]])
    bil = _kernels.fallback._bilinear

    h0 = bil(H, ox, oy, res, fx, fy)[0]
    pen = h0 - (foot_center[2] - foot_radius)
    if pen <= 0.0:
        return np.zeros(3)
    e = 0.5 * res
    dhdx = (bil(H, ox, oy, res, fx + e, fy)[0] - bil(H, ox, oy, res, fx - e, fy)[0]) / res
    dhdy = (bil(H, ox, oy, res, fx, fy + e)[0] - bil(H, ox, oy, res, fx, fy - e)[0]) / res
    nn = np.sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
    n = np.array([-dhdx / nn, -dhdy / nn, 1.0 / nn])

    sep = foot_vel[2] - (dhdx * foot_vel[0] + dhdy * foot_vel[1])
    fn = cp.k_n * pen - cp.c_n * sep
    if fn < 0.0:
        fn = 0.0
    mufn = cp.mu * fn

    v_t = foot_vel - np.dot(foot_vel, n) * n
    vt = float(np.sqrt(v_t[0] * v_t[0] + v_t[1] * v_t[1] + v_t[2] * v_t[2]))
    if vt >= cp.v_slip:
        ft_mag = cp.c_t * vt
        if ft_mag > mufn:
            ft_mag = mufn
        f_t = -(ft_mag / vt) * v_t
    else:
        d = foot_center - anchor
        d_t = d - np.dot(d, n) * n
        f_t = -cp.k_t * d_t - cp.c_t * v_t
        mag = float(np.sqrt(f_t[0] * f_t[0] + f_t[1] * f_t[1] + f_t[2] * f_t[2]))
        if mag > mufn and mag > 0.0:
            f_t = f_t * (mufn / mag)
    return fn * n + f_t


def nominal_state(spec: MorphologySpec, arena=None, xy=(0.0, 0.0), yaw: float = 0.0) -> SimState:
    """Standing state at the nominal pose, feet resting on the terrain."""
    from .geom import quat_from_axis_angle
    from .terrain import sample_height

    x, y = float(xy[0]), float(xy[1])
    ground = float(sample_height(arena, x, y)) if arena is not None else 0.0
    position = np.array([x, y, ground + spec.nominal_base_height])
    quaternion = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    pose = BasePose(position, quaternion)
    q = spec.nominal_q.copy()
    feet = forward_kinematics(spec, pose, q)
    return SimState(
        base_position=position,
        base_orientation=quaternion,
        base_lin_vel=np.zeros(3),
        base_ang_vel=np.zeros(3),
        q=q,
        qd=np.zeros(spec.dof),
        foot_contact=np.zeros(4, dtype=bool),
        foot_air_time=np.zeros(4),
        contact_anchor=feet.copy(),
        time=0.0,
    )


def apply_external_push(state: SimState, direction, speed: float) -> SimState:
    """Add a horizontal velocity impulse `speed * direction` to the base."""
    if not 0.0 <= speed <= 1.0:
        raise ValueError(f"push speed must be within [0, 1] m/s, got {speed}")
    direction = np.asarray(direction, dtype=np.float64)
    norm = float(np.sqrt(direction[0] ** 2 + direction[1] ** 2))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError("push direction must be a unit 2-vector")
    out = state.copy()
    out.base_lin_vel[0] += speed * direction[0]
    out.base_lin_vel[1] += speed * direction[1]
    return out


class SimBatch:
    """N robots of one morphology stepping in lockstep over a shared arena.

    State is stored as flat arrays (one row per environment) handed directly
    to the kernel backend. Environments are fully independent: nothing an
    environment does can influence another row.
    """

    def __init__(self, spec: MorphologySpec, arena, n_envs: int,
                 sim_cfg: SimConfig | None = None,
                 contact: ContactParams | None = None):
        if n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        self.spec = spec
        self.arena = arena
        self.n_envs = int(n_envs)
        self.sim_cfg = sim_cfg or SimConfig()
        self.contact_params = contact or ContactParams.from_config(self.sim_cfg.contact)
        pm = spec.packed()
        self._pm = pm
        N, D = self.n_envs, pm.dof

        self.pos = np.zeros((N, 3))
        self.quat = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (N, 1))
        self.linvel = np.zeros((N, 3))
        self.angvel = np.zeros((N, 3))
        self.q = np.tile(pm.nominal_q, (N, 1))
        self.qd = np.zeros((N, D))
        self.foot_contact = np.zeros((N, 4), dtype=np.uint8)
        self.foot_air = np.zeros((N, 4))
        self.anchor = np.zeros((N, 4, 3))
        self.time = np.zeros(N)
        self.diverged = np.zeros(N, dtype=np.uint8)

        # per-env physical parameters (domain randomization writes these)
        self.mass = np.full(N, pm.base_mass)
        self.inertia = np.tile(pm.base_inertia_diag, (N, 1))
        self.mu = np.full(N, self.contact_params.mu)

        self._tau = np.zeros((N, D))
        self._qdvel = np.zeros((N, D))
        self._frc = np.zeros((N, 4, 3))
        self._td_count = np.zeros(N)
        self._td_air = np.zeros(N)
        self._ill_base = np.zeros(N, dtype=np.uint8)
        self._ill_upper = np.zeros((N, 4), dtype=np.uint8)
        self._ill_lower = np.zeros((N, 4), dtype=np.uint8)

        self._kernel = _kernels.physics_step_batch

    @property
    def dof(self) -> int:
        return self._pm.dof

    def set_env_mass(self, idx: int, mass: float) -> None:
        """Set one environment's base mass, scaling inertia proportionally."""
        if mass <= 0.0:
            raise ValueError("mass must be positive")
        self.mass[idx] = mass
        self.inertia[idx] = self._pm.base_inertia_diag * (mass / self._pm.base_mass)

    def set_env_friction(self, idx: int, mu: float) -> None:
        if mu < 0.0:
            raise ValueError("friction must be non-negative")
        self.mu[idx] = mu

    def write_state(self, idx: int, state: SimState) -> None:
        self.pos[idx] = state.base_position
        self.quat[idx] = state.base_orientation
        self.linvel[idx] = state.base_lin_vel
        self.angvel[idx] = state.base_ang_vel
        self.q[idx] = state.q
        self.qd[idx] = state.qd
        self.foot_contact[idx] = state.foot_contact.astype(np.uint8)
        self.foot_air[idx] = state.foot_air_time
        self.anchor[idx] = state.contact_anchor
        self.time[idx] = state.time
        self.diverged[idx] = 0

    def read_state(self, idx: int) -> SimState:
        return SimState(
            base_position=self.pos[idx].copy(),
            base_orientation=self.quat[idx].copy(),
            base_lin_vel=self.linvel[idx].copy(),
            base_ang_vel=self.angvel[idx].copy(),
            q=self.q[idx].copy(),
            qd=self.qd[idx].copy(),
            foot_contact=self.foot_contact[idx].astype(bool),
            foot_air_time=self.foot_air[idx].copy(),
            contact_anchor=self.anchor[idx].copy(),
            time=float(self.time[idx]),
        )

    def step_control(self, targets: np.ndarray, n_substeps: int | None = None) -> BatchLog:
        """Hold `targets` for one control period and integrate the physics."""
        targets = np.ascontiguousarray(targets, dtype=np.float64)
        if targets.shape != (self.n_envs, self.dof):
            raise ValueError(
                f"targets must have shape {(self.n_envs, self.dof)}, got {targets.shape}")
        if n_substeps is None:
            n_substeps = self.sim_cfg.control_decimation
        cp = self.contact_params
        pm = self._pm
        arena = self.arena

        self._td_count[:] = 0.0
        self._td_air[:] = 0.0
        self._ill_base[:] = 0
        self._ill_upper[:] = 0
        self._ill_lower[:] = 0

        self._kernel(
            self.pos, self.quat, self.linvel, self.angvel, self.q, self.qd,
            self.foot_contact, self.foot_air, self.anchor,
            targets,
            pm.hip_offset, pm.joint_type, pm.joint_axis, pm.link_offset,
            pm.q_lo, pm.q_hi, pm.kp, pm.kd, pm.tau_lim, pm.vel_lim,
            pm.refl_inertia, pm.foot_radius, pm.base_dims,
            self.mass, self.inertia, self.mu,
            arena.heights, arena.origin[0], arena.origin[1], arena.resolution,
            cp.k_n, cp.c_n, cp.k_t, cp.c_t, cp.v_slip,
            self.sim_cfg.gravity, self.sim_cfg.dt, int(n_substeps),
            self.sim_cfg.divergence_limit,
            self._tau, self._qdvel, self._frc,
            self._td_count, self._td_air,
            self._ill_base, self._ill_upper, self._ill_lower, self.diverged,
        )
        self.time += self.sim_cfg.dt * n_substeps

        return BatchLog(
            tau=self._tau.copy(),
            joint_velocity=self._qdvel.copy(),
            contact_forces=self._frc.copy(),
            touchdown_count=self._td_count.copy(),
            touchdown_air_sum=self._td_air.copy(),
            illegal_base=self._ill_base.astype(bool),
            illegal_upper=self._ill_upper.astype(bool),
            illegal_lower=self._ill_lower.astype(bool),
            diverged=self.diverged.astype(bool),
        )


def step(state: SimState, spec: MorphologySpec, targets: np.ndarray, arena,
         cp: ContactParams, dt: float) -> tuple[SimState, StepLog]:
    """Advance one robot a single physics step of length `dt`.

    Raises SimulationDiverged when the updated state leaves the finite range;
    callers must reset the environment in that case.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (spec.dof,):
        raise ValueError(f"targets must have shape ({spec.dof},), got {targets.shape}")
    sim_cfg = SimConfig(dt=dt, control_decimation=1)
    batch = SimBatch(spec, arena, 1, sim_cfg=sim_cfg, contact=cp)
    batch.write_state(0, state)
    log = batch.step_control(targets[None, :], n_substeps=1)
    if log.diverged[0]:
        raise SimulationDiverged(
            f"non-finite or out-of-range state at t={state.time + dt:.4f}s")
    new_state = batch.read_state(0)
    return new_state, StepLog(
        tau=log.tau[0],
        joint_velocity=log.joint_velocity[0],
        contact_forces=log.contact_forces[0],
        illegal_base=bool(log.illegal_base[0]),
        illegal_upper=log.illegal_upper[0],
        illegal_lower=log.illegal_lower[0],
        touchdown_count=float(log.touchdown_count[0]),
        touchdown_air_sum=float(log.touchdown_air_sum[0]),
    )


def trajectory_record(state: SimState, log: StepLog) -> str:
    """One line-delimited JSON record of a control step for offline analysis."""
    rec = {
        "time": state.time,
        "base_position": state.base_position.tolist(),
        "base_orientation": state.base_orientation.tolist(),
        "base_lin_vel": state.base_lin_vel.tolist(),
        "base_ang_vel": state.base_ang_vel.tolist(),
        "q": state.q.tolist(),
        "qd": state.qd.tolist(),
        "tau": log.tau.tolist(),
        "foot_contact": state.foot_contact.astype(int).tolist(),
    }
    return json.dumps(rec)
