"""Forward kinematics / Jacobian checks against independent oracles.

The FK oracle composes 4x4 homogeneous transforms built with
scipy.spatial.transform.Rotation, sharing no code with the implementation.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from quadgym.config import MorphologyConfig
from quadgym.geom import quat_from_euler
from quadgym.morphology import (
    N_LEGS,
    BasePose,
    Variant,
    build_morphology,
    foot_jacobian,
    forward_kinematics,
)


def _hom(R=None, t=None):
    T = np.eye(4)
    if R is not None:
        T[:3, :3] = R
    if t is not None:
        T[:3, 3] = t
    return T


def oracle_feet(spec, base_pose, q):
    """Independent FK: 4x4 matrix chain, scipy rotations."""
    w, x, y, z = base_pose.quaternion
    T_base = _hom(Rotation.from_quat([x, y, z, w]).as_matrix(), base_pose.position)
    dpl = spec.dof_per_leg
    feet = []
    for leg_idx, chain in enumerate(spec.legs):
        T = T_base @ _hom(t=chain.hip_offset)
        for j in range(chain.dof):
            qj = q[leg_idx * dpl + j]
            axis = np.asarray(chain.joint_axes[j])
            if chain.joint_types[j] == "revolute":
                T = T @ _hom(R=Rotation.from_rotvec(axis * qj).as_matrix())
            else:
                T = T @ _hom(t=axis * qj)
            T = T @ _hom(t=chain.link_offsets[j])
        feet.append(T[:3, 3])
    return np.array(feet)


def random_pose(rng):
    pos = rng.uniform(-2.0, 2.0, 3)
    quat = quat_from_euler(*rng.uniform(-0.6, 0.6, 3))
    return BasePose(pos, quat)


def interior_q(spec, rng, margin=1e-4):
    lo, hi = spec.joint_limits()
    return rng.uniform(lo + margin, hi - margin)


# ---------------------------------------------------------------------------
# build_morphology
# ---------------------------------------------------------------------------


def test_prismatic_has_16_joints(prismatic_spec):
    assert prismatic_spec.dof == 16
    assert all(leg.dof == 4 for leg in prismatic_spec.legs)


def test_conventional_has_12_joints(conventional_spec):
    assert conventional_spec.dof == 12
    assert all(leg.dof == 3 for leg in conventional_spec.legs)


def test_prismatic_travel_limits(prismatic_spec):
    for leg in prismatic_spec.legs:
        assert leg.joint_types[3] == "prismatic"
        assert leg.joint_limits[3] == (0.0, 0.15)


def test_revolute_limits_finite_and_ordered(prismatic_spec, conventional_spec):
    for spec in (prismatic_spec, conventional_spec):
        lo, hi = spec.joint_limits()
        assert np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))
        assert np.all(lo < hi)


def test_actuator_params_positive(prismatic_spec):
    arrays = prismatic_spec.actuator_arrays()
    for name, arr in arrays.items():
        assert np.all(arr > 0.0), name


def test_defaults_come_from_config():
    cfg = MorphologyConfig(upper_leg_length=0.4, lower_leg_length=0.3, base_mass=25.0)
    spec = build_morphology(Variant.CONVENTIONAL, cfg)
    assert spec.base_mass == 25.0
    assert spec.legs[0].link_lengths[1] == 0.4
    assert spec.legs[0].link_lengths[2] == 0.3


def test_nominal_pose_reaches_standing_height(prismatic_spec):
    feet = forward_kinematics(prismatic_spec, BasePose.identity(), prismatic_spec.nominal_q)
    # Feet directly below the hip pitch joints, soles at -nominal_base_height.
    np.testing.assert_allclose(
        feet[:, 2], -(prismatic_spec.nominal_base_height - prismatic_spec.foot_radius), atol=1e-12
    )
    for leg_idx, leg in enumerate(prismatic_spec.legs):
        hip_pitch_xy = leg.hip_offset[:2] + leg.link_offsets[0][:2]
        np.testing.assert_allclose(feet[leg_idx, :2], hip_pitch_xy, atol=1e-12)


# ---------------------------------------------------------------------------
# forward_kinematics
# ---------------------------------------------------------------------------


def test_straight_leg_reference_configuration(prismatic_spec):
    feet = forward_kinematics(prismatic_spec, BasePose.identity(), np.zeros(16))
    for leg_idx, leg in enumerate(prismatic_spec.legs):
        expected = (
            leg.hip_offset
            + leg.link_offsets[0]
            - np.array([0.0, 0.0, leg.link_lengths[1] + leg.link_lengths[2]])
        )
        np.testing.assert_allclose(feet[leg_idx], expected, atol=1e-14)


@pytest.mark.parametrize("variant", [Variant.CONVENTIONAL, Variant.PRISMATIC])
def test_fk_matches_homogeneous_transform_oracle(variant, rng):
    spec = build_morphology(variant)
    for _ in range(50):
        pose = random_pose(rng)
        q = interior_q(spec, rng)
        feet = forward_kinematics(spec, pose, q)
        np.testing.assert_allclose(feet, oracle_feet(spec, pose, q), atol=1e-12)


def test_prismatic_joint_pure_translation(prismatic_spec):
    q0 = prismatic_spec.nominal_q.copy()
    q1 = q0.copy()
    q1[3] = 0.10  # FL foot extension
    feet0 = forward_kinematics(prismatic_spec, BasePose.identity(), q0)
    feet1 = forward_kinematics(prismatic_spec, BasePose.identity(), q1)
    delta = feet1[0] - feet0[0]
    assert np.linalg.norm(delta) == pytest.approx(0.10, abs=1e-12)
    axis = foot_jacobian(prismatic_spec, BasePose.identity(), q0, 0)[:, 3]
    np.testing.assert_allclose(delta, 0.10 * axis, atol=1e-12)
    np.testing.assert_allclose(feet1[1:], feet0[1:], atol=1e-15)


def test_mirrored_configuration_mirrors_feet(prismatic_spec, rng):
    q = interior_q(prismatic_spec, rng).reshape(4, 4)
    mirrored = q.copy()[[1, 0, 3, 2]]   # swap left/right legs
    mirrored[:, 0] *= -1.0              # flip hip roll
    feet = forward_kinematics(prismatic_spec, BasePose.identity(), q.ravel())
    feet_m = forward_kinematics(prismatic_spec, BasePose.identity(), mirrored.ravel())
    expected = feet[[1, 0, 3, 2]] * np.array([1.0, -1.0, 1.0])
    np.testing.assert_allclose(feet_m, expected, atol=1e-12)


def test_fk_deterministic(prismatic_spec, rng):
    pose = random_pose(rng)
    q = interior_q(prismatic_spec, rng)
    a = forward_kinematics(prismatic_spec, pose, q)
    b = forward_kinematics(prismatic_spec, pose, q)
    assert np.array_equal(a, b)


def test_fk_clamps_out_of_limit_input(prismatic_spec):
    lo, hi = prismatic_spec.joint_limits()
    q_out = hi + 1.0
    feet_out = forward_kinematics(prismatic_spec, BasePose.identity(), q_out)
    feet_hi = forward_kinematics(prismatic_spec, BasePose.identity(), hi)
    np.testing.assert_array_equal(feet_out, feet_hi)


def test_fk_rejects_wrong_dimension(prismatic_spec):
    with pytest.raises(ValueError, match="shape"):
        forward_kinematics(prismatic_spec, BasePose.identity(), np.zeros(12))


# ---------------------------------------------------------------------------
# foot_jacobian
# ---------------------------------------------------------------------------


def fd_jacobian(spec, pose, q, leg, h=1e-6):
    dpl = spec.dof_per_leg
    J = np.zeros((3, dpl))
    for j in range(dpl):
        qp, qm = q.copy(), q.copy()
        qp[leg * dpl + j] += h
        qm[leg * dpl + j] -= h
        J[:, j] = (
            forward_kinematics(spec, pose, qp)[leg] - forward_kinematics(spec, pose, qm)[leg]
        ) / (2.0 * h)
    return J


@pytest.mark.parametrize("variant", [Variant.CONVENTIONAL, Variant.PRISMATIC])
def test_jacobian_matches_finite_differences(variant, rng):
    spec = build_morphology(variant)
    for _ in range(100):
        pose = random_pose(rng)
        q = interior_q(spec, rng, margin=1e-4)
        leg = int(rng.integers(N_LEGS))
        J = foot_jacobian(spec, pose, q, leg)
        np.testing.assert_allclose(J, fd_jacobian(spec, pose, q, leg), atol=1e-5)


def test_prismatic_column_is_lower_leg_axis(prismatic_spec, rng):
    pose = random_pose(rng)
    q = interior_q(prismatic_spec, rng)
    for leg in range(N_LEGS):
        col = foot_jacobian(prismatic_spec, pose, q, leg)[:, 3]
        assert np.linalg.norm(col) == pytest.approx(1.0, abs=1e-12)
        # Moving the prismatic joint must displace the foot along this axis.
        dpl = prismatic_spec.dof_per_leg
        q2 = q.copy()
        q2[leg * dpl + 3] = q[leg * dpl + 3] + 1e-4
        delta = (
            forward_kinematics(prismatic_spec, pose, q2)[leg]
            - forward_kinematics(prismatic_spec, pose, q)[leg]
        )
        np.testing.assert_allclose(delta / 1e-4, col, atol=1e-9)


def test_prismatic_sweep_collinear(prismatic_spec):
    """Varying only the extension moves the foot along a straight line."""
    base = prismatic_spec.nominal_q.copy()
    base[1], base[2] = 0.9, -1.7  # arbitrary bent pose
    points = []
    for d in np.linspace(0.0, 0.15, 7):
        q = base.copy()
        q[3] = d
        points.append(forward_kinematics(prismatic_spec, BasePose.identity(), q)[0])
    points = np.array(points)
    direction = points[-1] - points[0]
    direction /= np.linalg.norm(direction)
    residuals = (points - points[0]) - np.outer((points - points[0]) @ direction, direction)
    assert np.max(np.linalg.norm(residuals, axis=1)) < 1e-9


def test_jacobian_invalid_leg_index(prismatic_spec):
    with pytest.raises(IndexError):
        foot_jacobian(prismatic_spec, BasePose.identity(), np.zeros(16), 4)
