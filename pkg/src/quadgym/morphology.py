"""Robot variant definitions, forward kinematics and foot Jacobians.

Two morphologies share the same base and leg layout:

* ``CONVENTIONAL`` - 4 legs x 3 revolute joints (hip roll, hip pitch, knee).
* ``PRISMATIC``    - the same plus a linear foot-extension joint between knee
  and foot, travel [0, 0.15] m, axis along the lower leg.

Leg order is FL, FR, RL, RR; joints are leg-major in every flat joint vector.
At the all-zero configuration a leg hangs straight down from its hip.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import MorphologyConfig
from .geom import axis_angle_mat, quat_to_mat

logger = logging.getLogger(__name__)

N_LEGS = 4
LEG_NAMES = ("FL", "FR", "RL", "RR")

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


class Variant(enum.Enum):
    CONVENTIONAL = "conventional"
    PRISMATIC = "prismatic"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown variant {name!r}; expected one of {[v.value for v in cls]}"
            ) from None


@dataclass(frozen=True)
class BasePose:
    """Rigid transform of the base: world position + (w,x,y,z) quaternion."""

    position: np.ndarray
    quaternion: np.ndarray

    @classmethod
    def identity(cls) -> "BasePose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


@dataclass(frozen=True)
class ActuatorParams:
    kp: float
    kd: float
    torque_limit: float
    velocity_limit: float
    reflected_inertia: float

    def __post_init__(self):
        for name in ("kp", "kd", "torque_limit", "velocity_limit", "reflected_inertia"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"ActuatorParams.{name} must be strictly positive")


@dataclass(frozen=True)
class LegChain:
    """One serial leg chain, rooted at `hip_offset` in the base frame.

    Joint j rotates (or translates) about `joint_axes[j]` expressed in the
    link frame reached so far, then `link_offsets[j]` translates to the next
    joint origin (the foot center after the last one).
    """

    hip_offset: np.ndarray
    joint_types: tuple
    joint_axes: tuple          # per joint unit 3-vector, local frame
    link_offsets: tuple        # per joint 3-vector translation, local frame
    link_lengths: tuple        # norms of link_offsets, m
    joint_limits: tuple        # per joint (lo, hi)
    actuators: tuple           # per joint ActuatorParams

    @property
    def dof(self) -> int:
        return len(self.joint_types)


@dataclass(frozen=True)
class MorphologySpec:
    variant: Variant
    legs: tuple                      # 4 x LegChain
    base_mass: float
    base_inertia: np.ndarray         # 3x3, kg m^2, base frame
    base_dims: np.ndarray            # collision box, m
    foot_radius: float
    nominal_base_height: float
    nominal_q: np.ndarray            # standing joint configuration
    _packed: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dof(self) -> int:
        return sum(leg.dof for leg in self.legs)

    @property
    def dof_per_leg(self) -> int:
        return self.legs[0].dof

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([lim[0] for leg in self.legs for lim in leg.joint_limits])
        hi = np.array([lim[1] for leg in self.legs for lim in leg.joint_limits])
        return lo, hi

    def actuator_arrays(self) -> dict:
        acts = [a for leg in self.legs for a in leg.actuators]
        return {
            "kp": np.array([a.kp for a in acts]),
            "kd": np.array([a.kd for a in acts]),
            "torque_limit": np.array([a.torque_limit for a in acts]),
            "velocity_limit": np.array([a.velocity_limit for a in acts]),
            "reflected_inertia": np.array([a.reflected_inertia for a in acts]),
        }

    def packed(self) -> "PackedMorphology":
        """Flat-array form consumed by the simulation kernels (cached)."""
        if "packed" not in self._packed:
            self._packed["packed"] = PackedMorphology.from_spec(self)
        return self._packed["packed"]

    def validate(self) -> None:
        expected = 16 if self.variant is Variant.PRISMATIC else 12
        if self.dof != expected:
            raise ValueError(f"{self.variant} must have {expected} joints, got {self.dof}")
        for leg in self.legs:
            for jtype, (lo, hi), axis in zip(leg.joint_types, leg.joint_limits, leg.joint_axes):
                if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                    raise ValueError(f"joint limits must be finite with lo < hi, got ({lo}, {hi})")
                if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
                    raise ValueError("joint axes must be unit vectors")
                if jtype == PRISMATIC and lo != 0.0:
                    raise ValueError("prismatic travel must start at 0")
            has_prism = PRISMATIC in leg.joint_types
            if has_prism != (self.variant is Variant.PRISMATIC):
                raise ValueError("prismatic joint present iff variant is PRISMATIC")


@dataclass(frozen=True)
class PackedMorphology:
    """Kernel-facing representation: per-leg chain tables + flat joint params."""

    dof: int
    dof_per_leg: int
    hip_offset: np.ndarray       # (4,3)
    joint_type: np.ndarray       # (4,dpl) int32, 0=revolute 1=prismatic
    joint_axis: np.ndarray       # (4,dpl,3)
    link_offset: np.ndarray      # (4,dpl,3)
    q_lo: np.ndarray             # (dof,)
    q_hi: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    tau_lim: np.ndarray
    vel_lim: np.ndarray
    refl_inertia: np.ndarray
    base_mass: float
    base_inertia_diag: np.ndarray  # (3,)
    base_dims: np.ndarray          # (3,)
    foot_radius: float
    nominal_q: np.ndarray

    @classmethod
    def from_spec(cls, spec: MorphologySpec) -> "PackedMorphology":
        dpl = spec.dof_per_leg
        hip = np.stack([leg.hip_offset for leg in spec.legs]).astype(float)
        jtype = np.zeros((N_LEGS, dpl), dtype=np.int32)
        jaxis = np.zeros((N_LEGS, dpl, 3))
        loff = np.zeros((N_LEGS, dpl, 3))
        for i, leg in enumerate(spec.legs):
            for j in range(dpl):
                jtype[i, j] = 1 if leg.joint_types[j] == PRISMATIC else 0
                jaxis[i, j] = leg.joint_axes[j]
                loff[i, j] = leg.link_offsets[j]
        lo, hi = spec.joint_limits()
        acts = spec.actuator_arrays()
        return cls(
            dof=spec.dof,
            dof_per_leg=dpl,
            hip_offset=np.ascontiguousarray(hip),
            joint_type=np.ascontiguousarray(jtype),
            joint_axis=np.ascontiguousarray(jaxis),
            link_offset=np.ascontiguousarray(loff),
            q_lo=np.ascontiguousarray(lo),
            q_hi=np.ascontiguousarray(hi),
            kp=np.ascontiguousarray(acts["kp"]),
            kd=np.ascontiguousarray(acts["kd"]),
            tau_lim=np.ascontiguousarray(acts["torque_limit"]),
            vel_lim=np.ascontiguousarray(acts["velocity_limit"]),
            refl_inertia=np.ascontiguousarray(acts["reflected_inertia"]),
            base_mass=spec.base_mass,
            base_inertia_diag=np.ascontiguousarray(np.diag(spec.base_inertia).copy()),
            base_dims=np.ascontiguousarray(spec.base_dims),
            foot_radius=spec.foot_radius,
            nominal_q=np.ascontiguousarray(spec.nominal_q),
        )


def _standing_leg_angles(cfg: MorphologyConfig) -> tuple[float, float]:
    """Planar 2-link IK placing the foot directly below the hip pitch joint
    at the configured standing height."""
    l1, l2 = cfg.upper_leg_length, cfg.lower_leg_length
    drop = cfg.nominal_base_height - cfg.foot_radius
    if not (abs(l1 - l2) < drop < l1 + l2):
        raise ValueError(f"nominal height {cfg.nominal_base_height} unreachable by leg")
    cos_knee = (drop * drop - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    knee = -math.acos(max(-1.0, min(1.0, cos_knee)))
    hip = -math.atan2(l2 * math.sin(knee), l1 + l2 * math.cos(knee))
    return hip, knee


def build_morphology(variant: Variant | str, cfg: MorphologyConfig | None = None) -> MorphologySpec:
    """Construct a fully populated spec for one robot variant.

    All numbers come from `MorphologyConfig`; nothing morphological is
    hardcoded here except the chain layout itself.
    """
    if isinstance(variant, str):
        variant = Variant.parse(variant)
    cfg = cfg or MorphologyConfig()
    prism = variant is Variant.PRISMATIC

    hip_std, knee_std = _standing_leg_angles(cfg)
    rev = {
        "hip_roll": cfg.hip_roll,
        "hip_pitch": cfg.hip_pitch,
        "knee": cfg.knee,
    }

    legs = []
    nominal = []
    for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):  # FL FR RL RR
        hip_offset = np.array([sx * cfg.hip_x, sy * cfg.hip_y, 0.0])
        joint_types = [REVOLUTE, REVOLUTE, REVOLUTE]
        joint_axes = [
            np.array([1.0, 0.0, 0.0]),   # hip roll (ab/adduction)
            np.array([0.0, 1.0, 0.0]),   # hip pitch (flexion/extension)
            np.array([0.0, 1.0, 0.0]),   # knee
        ]
        link_offsets = [
            np.array([0.0, sy * cfg.abduction_link, 0.0]),
            np.array([0.0, 0.0, -cfg.upper_leg_length]),
            np.array([0.0, 0.0, -cfg.lower_leg_length]),
        ]
        joint_limits = [
            (-cfg.abduction_limit, cfg.abduction_limit),
            tuple(cfg.hip_limits),
            tuple(cfg.knee_limits),
        ]
        actuators = [
            _actuator(rev["hip_roll"]),
            _actuator(rev["hip_pitch"]),
            _actuator(rev["knee"]),
        ]
        if prism:
            joint_types.append(PRISMATIC)
            joint_axes.append(np.array([0.0, 0.0, -1.0]))  # along the lower leg
            link_offsets.append(np.zeros(3))
            joint_limits.append((0.0, cfg.prismatic_travel))
            actuators.append(_actuator(cfg.foot_extension))
        legs.append(
            LegChain(
                hip_offset=hip_offset,
                joint_types=tuple(joint_types),
                joint_axes=tuple(joint_axes),
                link_offsets=tuple(link_offsets),
                link_lengths=tuple(float(np.linalg.norm(v)) for v in link_offsets),
                joint_limits=tuple(joint_limits),
                actuators=tuple(actuators),
            )
        )
        nominal.extend([0.0, hip_std, knee_std] + ([0.0] if prism else []))

    lx, ly, lz = cfg.base_dims
    m = cfg.base_mass
    inertia = np.diag(
        [
            m / 12.0 * (ly * ly + lz * lz),
            m / 12.0 * (lx * lx + lz * lz),
            m / 12.0 * (lx * lx + ly * ly),
        ]
    )
    spec = MorphologySpec(
        variant=variant,
        legs=tuple(legs),
        base_mass=m,
        base_inertia=inertia,
        base_dims=np.array(cfg.base_dims, dtype=float),
        foot_radius=cfg.foot_radius,
        nominal_base_height=cfg.nominal_base_height,
        nominal_q=np.array(nominal),
    )
    spec.validate()
    return spec


def _actuator(c) -> ActuatorParams:
    return ActuatorParams(
        kp=c.kp,
        kd=c.kd,
        torque_limit=c.torque_limit,
        velocity_limit=c.velocity_limit,
        reflected_inertia=c.reflected_inertia,
    )


def clamp_joint_vector(spec: MorphologySpec, q: np.ndarray, warn: bool = True) -> np.ndarray:
    """Clamp q into the joint limits; policies emit unconstrained targets."""
    lo, hi = spec.joint_limits()
    clamped = np.clip(q, lo, hi)
    if warn and not np.array_equal(clamped, q):
        logger.warning("joint vector outside limits; clamped %d entries", int(np.sum(clamped != q)))
    return clamped


def _check_dof(spec: MorphologySpec, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (spec.dof,):
        raise ValueError(f"joint vector has shape {q.shape}, expected ({spec.dof},)")
    return q


def leg_frames(spec: MorphologySpec, base_pose: BasePose, q: np.ndarray, leg: int):
    """Walk one leg chain; returns (foot position, per-joint world axes,
    per-joint world origins, joint-space positions along the chain).

    The last entry of `points` is the foot center; intermediate entries are
    the joint origins (used for leg-segment collision sampling).
    """
    chain = spec.legs[leg]
    R = quat_to_mat(base_pose.quaternion)
    p = base_pose.position + R @ chain.hip_offset
    axes, origins, points = [], [], [p.copy()]
    for j in range(chain.dof):
        axis_w = R @ chain.joint_axes[j]
        axes.append(axis_w)
        origins.append(p.copy())
        if chain.joint_types[j] == REVOLUTE:
            R = R @ axis_angle_mat(chain.joint_axes[j], q[j])
        else:
            p = p + axis_w * q[j]
        p = p + R @ chain.link_offsets[j]
        points.append(p.copy())
    return p, axes, origins, points


def forward_kinematics(spec: MorphologySpec, base_pose: BasePose, q: np.ndarray) -> np.ndarray:
    """World-frame foot-center positions, (4, 3). Out-of-limit q is clamped."""
    q = clamp_joint_vector(spec, _check_dof(spec, q))
    dpl = spec.dof_per_leg
    feet = np.zeros((N_LEGS, 3))
    for leg in range(N_LEGS):
        feet[leg], _, _, _ = leg_frames(spec, base_pose, q[leg * dpl : (leg + 1) * dpl], leg)
    return feet


def foot_jacobian(spec: MorphologySpec, base_pose: BasePose, q: np.ndarray, leg: int) -> np.ndarray:
    """d(foot position)/d(q_j) for one leg, world frame, (3, dof_per_leg).

    Revolute columns are axis x (foot - joint origin); the prismatic column
    is the world-frame joint axis.
    """
    if not 0 <= leg < N_LEGS:
        raise IndexError(f"leg index {leg} out of range [0, {N_LEGS})")
    q = clamp_joint_vector(spec, _check_dof(spec, q))
    dpl = spec.dof_per_leg
    chain = spec.legs[leg]
    foot, axes, origins, _ = leg_frames(spec, base_pose, q[leg * dpl : (leg + 1) * dpl], leg)
    J = np.zeros((3, dpl))
    for j in range(dpl):
        if chain.joint_types[j] == REVOLUTE:
            J[:, j] = np.cross(axes[j], foot - origins[j])
        else:
            J[:, j] = axes[j]
    return J
