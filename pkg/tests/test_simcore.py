"""Simulation core: integration exactness, contact laws, and determinism."""

import numpy as np
import pytest

from quadgym.config import SimConfig, SuiteConfig
from quadgym.morphology import ActuatorParams, BasePose, build_morphology, forward_kinematics
from quadgym.simcore import (
    ContactParams,
    SimBatch,
    SimState,
    SimulationDiverged,
    apply_external_push,
    contact_force,
    nominal_state,
    pd_torque,
    step,
    trajectory_record,
)
from quadgym.terrain import build_arena, sample_height

G = 9.81
DT = 1e-3


@pytest.fixture(scope="module")
def flat_arena():
    return build_arena([[("flat", 1)]], seeds=0)


@pytest.fixture(scope="module")
def slope_arena():
    return build_arena([[("smooth_slope", 6)]], seeds=3)


def states_equal(a: SimState, b: SimState) -> bool:
    return (
        np.array_equal(a.base_position, b.base_position)
        and np.array_equal(a.base_orientation, b.base_orientation)
        and np.array_equal(a.base_lin_vel, b.base_lin_vel)
        and np.array_equal(a.base_ang_vel, b.base_ang_vel)
        and np.array_equal(a.q, b.q)
        and np.array_equal(a.qd, b.qd)
        and np.array_equal(a.foot_contact, b.foot_contact)
        and np.array_equal(a.foot_air_time, b.foot_air_time)
        and np.array_equal(a.contact_anchor, b.contact_anchor)
    )


# ---------------------------------------------------------------------------
# pd_torque
# ---------------------------------------------------------------------------

ACT = ActuatorParams(kp=40.0, kd=1.0, torque_limit=60.0, velocity_limit=25.0,
                     reflected_inertia=0.05)


def test_pd_torque_zero_error_zero_rate():
    assert pd_torque(ACT, target=0.7, q_i=0.7, qd_i=0.0) == 0.0


def test_pd_torque_clamps_at_limit():
    # kp * error = 400, far beyond the 60 N*m limit
    assert pd_torque(ACT, target=10.0, q_i=0.0, qd_i=0.0) == 60.0
    assert pd_torque(ACT, target=-10.0, q_i=0.0, qd_i=0.0) == -60.0


def test_pd_torque_formula():
    # 40 * 0.1 - 1 * 0.5 = 3.5
    assert pd_torque(ACT, target=0.1, q_i=0.0, qd_i=0.5) == pytest.approx(3.5, abs=1e-12)


# ---------------------------------------------------------------------------
# contact_force
# ---------------------------------------------------------------------------


def test_contact_force_zero_above_terrain(flat_arena):
    f = contact_force(
        foot_center=[4.0, 4.0, 0.1 + 0.03],
        foot_vel=[0.5, -0.2, -1.0],
        arena=flat_arena,
        cp=ContactParams(),
        foot_radius=0.03,
    )
    assert np.array_equal(f, np.zeros(3))


def test_contact_force_static_normal_magnitude(flat_arena):
    cp = ContactParams(k_n=1e5, c_n=500.0, mu=0.8)
    r = 0.03
    foot = np.array([4.0, 4.0, r - 0.001])
    f = contact_force(foot, np.zeros(3), flat_arena, cp, r)
    pen = 0.0 - (foot[2] - r)
    assert f[0] == 0.0 and f[1] == 0.0
    assert f[2] == pytest.approx(1e5 * pen, rel=1e-12)
    assert f[2] == pytest.approx(100.0, rel=1e-9)


def test_contact_force_coulomb_saturation(flat_arena):
    # horizontal sliding on flat ground: separation rate is zero, so
    # F_n = k_n * pen = 100 N and the tangential magnitude caps at mu * F_n.
    cp = ContactParams(k_n=1e5, c_n=500.0, c_t=200.0, mu=0.5, v_slip=0.05)
    r = 0.03
    foot = np.array([4.0, 4.0, r - 0.001])
    f = contact_force(foot, np.array([1.0, 0.0, 0.0]), flat_arena, cp, r)
    fn = f[2]
    ft = np.hypot(f[0], f[1])
    assert ft == pytest.approx(0.5 * fn, rel=1e-12)
    assert ft == pytest.approx(50.0, rel=1e-9)
    assert f[0] < 0.0 and f[1] == 0.0  # opposes the velocity


def test_contact_force_viscous_below_saturation(flat_arena):
    # slow slide: c_t * |v_t| below the cone -> purely viscous magnitude
    cp = ContactParams(k_n=1e5, c_n=500.0, c_t=200.0, mu=0.9, v_slip=0.05)
    r = 0.03
    foot = np.array([4.0, 4.0, r - 0.001])
    f = contact_force(foot, np.array([0.1, 0.0, 0.0]), flat_arena, cp, r)
    assert np.hypot(f[0], f[1]) == pytest.approx(200.0 * 0.1, rel=1e-9)


def test_contact_force_stick_spring_uses_anchor(flat_arena):
    cp = ContactParams(k_n=1e5, k_t=6000.0, c_t=200.0, mu=2.0, v_slip=0.05)
    r = 0.03
    foot = np.array([4.002, 4.0, r - 0.001])
    anchor = np.array([4.0, 4.0, r - 0.001])
    f = contact_force(foot, np.zeros(3), flat_arena, cp, r, anchor=anchor)
    # spring force -k_t * 0.002 along x, well inside the wide cone
    assert f[0] == pytest.approx(-6000.0 * 0.002, rel=1e-9)
    assert f[1] == 0.0


def test_contact_force_normal_never_negative(flat_arena):
    # fast upward separation: damping would make F_n negative; must clamp to 0
    cp = ContactParams(k_n=1e5, c_n=500.0)
    r = 0.03
    foot = np.array([4.0, 4.0, r - 0.0001])
    f = contact_force(foot, np.array([0.0, 0.0, 5.0]), flat_arena, cp, r)
    assert np.array_equal(f, np.zeros(3))


# ---------------------------------------------------------------------------
# apply_external_push
# ---------------------------------------------------------------------------


def test_push_zero_speed_is_identity(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    out = apply_external_push(s, np.array([1.0, 0.0]), 0.0)
    assert states_equal(s, out)


def test_push_full_speed_along_x(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    out = apply_external_push(s, np.array([1.0, 0.0]), 1.0)
    assert out.base_lin_vel[0] == s.base_lin_vel[0] + 1.0
    assert out.base_lin_vel[1] == s.base_lin_vel[1]
    assert out.base_lin_vel[2] == s.base_lin_vel[2]


def test_push_opposite_pushes_cancel(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    a = apply_external_push(s, np.array([0.6, 0.8]), 0.7)
    b = apply_external_push(a, np.array([-0.6, -0.8]), 0.7)
    assert np.allclose(b.base_lin_vel[:2], s.base_lin_vel[:2], atol=1e-15)


def test_push_rejects_out_of_range_speed(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    with pytest.raises(ValueError):
        apply_external_push(s, np.array([1.0, 0.0]), 1.5)
    with pytest.raises(ValueError):
        apply_external_push(s, np.array([1.0, 0.0]), -0.1)


def test_push_rejects_non_unit_direction(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    with pytest.raises(ValueError):
        apply_external_push(s, np.array([2.0, 0.0]), 0.5)


# ---------------------------------------------------------------------------
# free flight: gravity integration and energy conservation
# ---------------------------------------------------------------------------


def airborne_state(spec, arena, z=10.0, lin_vel=(0.0, 0.0, 0.0), ang_vel=(0.0, 0.0, 0.0)):
    s = nominal_state(spec, arena, xy=(4.0, 4.0))
    s.base_position = np.array([4.0, 4.0, z])
    s.base_lin_vel = np.array(lin_vel, dtype=np.float64)
    s.base_ang_vel = np.array(ang_vel, dtype=np.float64)
    return s


@pytest.mark.parametrize("variant", ["conventional", "prismatic"])
def test_free_fall_velocity_change_is_exactly_g_dt(variant, flat_arena):
    spec = build_morphology(variant)
    s = airborne_state(spec, flat_arena)
    cp = ContactParams()
    for _ in range(50):
        targets = s.q.copy()  # zero position error, zero rate -> zero torque
        prev_vz = s.base_lin_vel[2]
        s, log = step(s, spec, targets, flat_arena, cp, DT)
        assert s.base_lin_vel[2] == prev_vz - G * DT  # bit-exact
        assert np.all(log.tau == 0.0)
        assert np.all(log.contact_forces == 0.0)


def test_free_fall_joints_do_not_move(conventional_spec, flat_arena):
    s = airborne_state(conventional_spec, flat_arena)
    q0 = s.q.copy()
    for _ in range(100):
        s, _ = step(s, conventional_spec, q0, flat_arena, ContactParams(), DT)
    assert np.array_equal(s.q, q0)
    assert np.all(s.qd == 0.0)


def test_ballistic_energy_conserved_within_one_percent(conventional_spec, flat_arena):
    spec = conventional_spec
    s = airborne_state(spec, flat_arena, z=30.0,
                       lin_vel=(1.0, -0.5, 2.0), ang_vel=(1.0, 2.0, 0.5))
    m = spec.base_mass
    I = np.diag(spec.base_inertia)

    def energy(st: SimState) -> float:
        from quadgym.geom import quat_to_mat

        R = quat_to_mat(st.base_orientation)
        w_body = R.T @ st.base_ang_vel
        ke_lin = 0.5 * m * float(st.base_lin_vel @ st.base_lin_vel)
        ke_rot = 0.5 * float(w_body @ (I * w_body))
        return ke_lin + ke_rot + m * G * float(st.base_position[2])

    e0 = energy(s)
    targets = s.q.copy()
    for _ in range(1000):  # 1 s
        s, log = step(s, spec, targets, flat_arena, ContactParams(), DT)
        assert np.all(log.contact_forces == 0.0)
    e1 = energy(s)
    assert abs(e1 - e0) / abs(e0) < 0.01


def test_quaternion_stays_normalized(conventional_spec, flat_arena):
    s = airborne_state(conventional_spec, flat_arena, ang_vel=(3.0, -2.0, 1.5))
    targets = s.q.copy()
    for _ in range(200):
        s, _ = step(s, conventional_spec, targets, flat_arena, ContactParams(), DT)
        assert abs(np.linalg.norm(s.base_orientation) - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# settle test: standing equilibrium from nominal pose
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["conventional", "prismatic"])
def test_standing_settles_near_static_equilibrium(variant, flat_arena):
    spec = build_morphology(variant)
    cfg = SuiteConfig()
    cp = ContactParams.from_config(cfg.sim.contact, mu=1.0)
    batch = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim, contact=cp)
    batch.write_state(0, nominal_state(spec, flat_arena, xy=(4.0, 4.0)))
    targets = spec.nominal_q[None, :].copy()

    for _ in range(100):  # 2 s at 50 Hz control
        log = batch.step_control(targets)
    assert not log.diverged[0]

    s = batch.read_state(0)
    speed = float(np.linalg.norm(s.base_lin_vel))
    assert speed < 0.05

    # equilibrium: each foot carries a quarter of the weight on the normal
    # penalty spring, so the base sits lower by mg / (4 k_n)
    sag = spec.base_mass * G / (4.0 * cfg.sim.contact.k_n)
    h_expected = spec.nominal_base_height - sag
    assert abs(s.base_position[2] - h_expected) < 0.02
    assert np.all(s.foot_contact)


@pytest.mark.parametrize("variant", ["conventional", "prismatic"])
def test_static_foot_penetration_below_5mm(variant, flat_arena):
    spec = build_morphology(variant)
    cfg = SuiteConfig()
    batch = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim)
    batch.write_state(0, nominal_state(spec, flat_arena, xy=(4.0, 4.0)))
    targets = spec.nominal_q[None, :].copy()
    for _ in range(100):
        batch.step_control(targets)
    s = batch.read_state(0)
    pose = BasePose(s.base_position, s.base_orientation)
    feet = forward_kinematics(spec, pose, s.q)
    for leg in range(4):
        terrain_h = sample_height(flat_arena, feet[leg, 0], feet[leg, 1])
        pen = terrain_h - (feet[leg, 2] - spec.foot_radius)
        assert pen < 0.005


def test_settled_torques_within_limits_and_log_invariants(conventional_spec, flat_arena):
    spec = conventional_spec
    cfg = SuiteConfig()
    batch = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim)
    batch.write_state(0, nominal_state(spec, flat_arena, xy=(4.0, 4.0)))
    targets = spec.nominal_q[None, :].copy()
    lim = spec.packed().tau_lim
    for _ in range(50):
        log = batch.step_control(targets)
        assert np.all(np.abs(log.tau[0]) <= lim)
        pos_power = np.maximum(log.tau[0] * log.joint_velocity[0], 0.0)
        assert np.all(pos_power >= 0.0)
        assert not log.illegal_base[0]
        assert not log.illegal_upper[0].any()
        assert not log.illegal_lower[0].any()


# ---------------------------------------------------------------------------
# friction cone and normal force invariants
# ---------------------------------------------------------------------------


def test_friction_cone_never_exceeded_on_flat(conventional_spec, flat_arena):
    """Shoved robot: every logged tangential force obeys |F_t| <= mu F_n + 1e-9."""
    spec = conventional_spec
    cfg = SuiteConfig()
    cp = ContactParams.from_config(cfg.sim.contact, mu=0.4)
    batch = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim, contact=cp)
    batch.mu[0] = 0.4
    s = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    s.base_lin_vel = np.array([1.0, 0.4, 0.0])
    batch.write_state(0, s)
    targets = spec.nominal_q[None, :].copy()
    for _ in range(75):  # 1.5 s of sliding and recovery
        log = batch.step_control(targets)
        for leg in range(4):
            fx, fy, fz = log.contact_forces[0, leg]
            assert fz >= 0.0
            assert np.hypot(fx, fy) <= 0.4 * fz + 1e-9


def test_friction_cone_never_exceeded_on_slope(conventional_spec, slope_arena):
    spec = conventional_spec
    cfg = SuiteConfig()
    cp = ContactParams.from_config(cfg.sim.contact, mu=0.5)
    batch = SimBatch(spec, slope_arena, 1, sim_cfg=cfg.sim, contact=cp)
    batch.mu[0] = 0.5
    batch.write_state(0, nominal_state(spec, slope_arena, xy=(4.0, 4.0)))
    targets = spec.nominal_q[None, :].copy()

    from quadgym._kernels.fallback import _bilinear

    H = slope_arena.heights
    res = slope_arena.resolution
    for _ in range(75):
        log = batch.step_control(targets)
        st = batch.read_state(0)
        pose = BasePose(st.base_position, st.base_orientation)
        feet = forward_kinematics(spec, pose, st.q)
        for leg in range(4):
            F = log.contact_forces[0, leg]
            if not np.any(F):
                continue
            fx = np.array([feet[leg, 0]])
            fy = np.array([feet[leg, 1]])
            e = 0.5 * res
            dhdx = (_bilinear(H, 0.0, 0.0, res, fx + e, fy)[0]
                    - _bilinear(H, 0.0, 0.0, res, fx - e, fy)[0]) / res
            dhdy = (_bilinear(H, 0.0, 0.0, res, fx, fy + e)[0]
                    - _bilinear(H, 0.0, 0.0, res, fx, fy - e)[0]) / res
            nn = np.sqrt(dhdx * dhdx + dhdy * dhdy + 1.0)
            n = np.array([-dhdx / nn, -dhdy / nn, 1.0 / nn])
            fn = float(F @ n)
            ft = float(np.linalg.norm(F - fn * n))
            assert fn >= -1e-12
            assert ft <= 0.5 * fn + 1e-9


# ---------------------------------------------------------------------------
# touchdown bookkeeping and air time
# ---------------------------------------------------------------------------


def test_air_time_grows_then_resets_on_touchdown(conventional_spec, flat_arena):
    spec = conventional_spec
    cfg = SuiteConfig()
    batch = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim)
    s = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    s.base_position[2] += 0.05  # small drop
    batch.write_state(0, s)
    targets = spec.nominal_q[None, :].copy()

    log1 = batch.step_control(targets)  # 20 ms: still falling
    assert log1.touchdown_count[0] == 0.0
    st = batch.read_state(0)
    assert not st.foot_contact.any()
    assert np.all(st.foot_air_time >= 0.02 - 1e-12)

    total_td = 0.0
    air_at_td = 0.0
    for _ in range(20):
        log = batch.step_control(targets)
        total_td += log.touchdown_count[0]
        air_at_td += log.touchdown_air_sum[0]
    assert total_td >= 4.0  # each foot landed (possibly with micro-bounces)
    # first landing happens after roughly sqrt(2 h / g) ~ 0.1 s of fall
    assert air_at_td > 0.05 * 4
    st = batch.read_state(0)
    assert st.foot_contact.all()
    assert np.all(st.foot_air_time == 0.0)


# ---------------------------------------------------------------------------
# determinism and batch independence
# ---------------------------------------------------------------------------


def test_step_deterministic_bit_identical(conventional_spec, flat_arena):
    spec = conventional_spec
    cp = ContactParams()
    runs = []
    for _ in range(2):
        s = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
        s.base_lin_vel = np.array([0.5, 0.0, 0.0])
        for k in range(50):
            targets = spec.nominal_q + 0.05 * np.sin(0.1 * k + np.arange(spec.dof))
            s, _ = step(s, spec, targets, flat_arena, cp, DT)
        runs.append(s)
    assert states_equal(runs[0], runs[1])


def test_single_step_matches_batch_substeps(conventional_spec, flat_arena):
    """One control period = 20 explicit dt steps, bit for bit."""
    spec = conventional_spec
    cfg = SuiteConfig()
    cp = ContactParams.from_config(cfg.sim.contact)
    s0 = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    s0.base_lin_vel = np.array([0.3, -0.1, 0.0])
    targets = spec.nominal_q + 0.03

    s = s0.copy()
    for _ in range(20):
        s, _ = step(s, spec, targets, flat_arena, cp, DT)

    batch = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim, contact=cp)
    batch.write_state(0, s0)
    batch.step_control(targets[None, :], n_substeps=20)
    sb = batch.read_state(0)
    assert states_equal(s, sb)


def test_batch_rows_are_independent(conventional_spec, flat_arena):
    """Env 0 evolves identically whether or not env 1 exists beside it."""
    spec = conventional_spec
    cfg = SuiteConfig()
    s0 = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    s1 = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    s1.base_lin_vel = np.array([0.9, 0.2, 0.1])
    targets2 = np.stack([spec.nominal_q + 0.02, spec.nominal_q - 0.05])

    pair = SimBatch(spec, flat_arena, 2, sim_cfg=cfg.sim)
    pair.write_state(0, s0)
    pair.write_state(1, s1)
    solo = SimBatch(spec, flat_arena, 1, sim_cfg=cfg.sim)
    solo.write_state(0, s0)

    for _ in range(30):
        pair.step_control(targets2)
        solo.step_control(targets2[:1])
    assert states_equal(pair.read_state(0), solo.read_state(0))


def test_identical_batch_rows_stay_identical(conventional_spec, flat_arena):
    spec = conventional_spec
    batch = SimBatch(spec, flat_arena, 3)
    s = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    for i in range(3):
        batch.write_state(i, s)
    targets = np.tile(spec.nominal_q, (3, 1))
    for _ in range(40):
        batch.step_control(targets)
    a, b, c = (batch.read_state(i) for i in range(3))
    assert states_equal(a, b) and states_equal(b, c)


# ---------------------------------------------------------------------------
# joint limits, velocity limits, divergence
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["conventional", "prismatic"])
def test_joint_state_respects_limits_under_wild_targets(variant, flat_arena):
    spec = build_morphology(variant)
    pm = spec.packed()
    batch = SimBatch(spec, flat_arena, 1)
    batch.write_state(0, nominal_state(spec, flat_arena, xy=(4.0, 4.0)))
    rng = np.random.default_rng(7)
    for _ in range(30):
        targets = rng.uniform(-4.0, 4.0, size=(1, spec.dof))
        batch.step_control(targets)
        s = batch.read_state(0)
        assert np.all(s.q >= pm.q_lo - 1e-12)
        assert np.all(s.q <= pm.q_hi + 1e-12)
        assert np.all(np.abs(s.qd) <= pm.vel_lim + 1e-12)


def test_step_raises_on_divergent_state(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    s.base_lin_vel = np.array([0.0, 0.0, 2e6])
    with pytest.raises(SimulationDiverged):
        step(s, conventional_spec, conventional_spec.nominal_q, flat_arena,
             ContactParams(), DT)


def test_step_raises_on_nan_state(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    s.base_position = np.array([4.0, 4.0, np.nan])
    with pytest.raises(SimulationDiverged):
        step(s, conventional_spec, conventional_spec.nominal_q, flat_arena,
             ContactParams(), DT)


def test_diverged_env_freezes_without_poisoning_others(conventional_spec, flat_arena):
    spec = conventional_spec
    batch = SimBatch(spec, flat_arena, 2)
    good = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    bad = good.copy()
    bad.base_lin_vel = np.array([0.0, 0.0, 5e6])
    batch.write_state(0, bad)
    batch.write_state(1, good)

    solo = SimBatch(spec, flat_arena, 1)
    solo.write_state(0, good)

    targets = np.tile(spec.nominal_q, (2, 1))
    log = batch.step_control(targets)
    solo.step_control(targets[1:])
    assert log.diverged[0] and not log.diverged[1]
    frozen = batch.read_state(0)
    for _ in range(10):
        log = batch.step_control(targets)
        solo.step_control(targets[1:])
    assert log.diverged[0]
    assert states_equal(batch.read_state(0), frozen)  # held at divergence state
    assert states_equal(batch.read_state(1), solo.read_state(0))


def test_write_state_clears_divergence_flag(conventional_spec, flat_arena):
    spec = conventional_spec
    batch = SimBatch(spec, flat_arena, 1)
    bad = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    bad.base_lin_vel = np.array([0.0, 0.0, 5e6])
    batch.write_state(0, bad)
    log = batch.step_control(spec.nominal_q[None, :])
    assert log.diverged[0]
    batch.write_state(0, nominal_state(spec, flat_arena, xy=(4.0, 4.0)))
    log = batch.step_control(spec.nominal_q[None, :])
    assert not log.diverged[0]


# ---------------------------------------------------------------------------
# illegal contact detection
# ---------------------------------------------------------------------------


def test_buried_base_flags_illegal_base(conventional_spec, flat_arena):
    spec = conventional_spec
    s = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    s.base_position = np.array([4.0, 4.0, 0.0])  # box center at ground level
    _, log = step(s, spec, s.q, flat_arena, ContactParams(), DT)
    assert log.illegal_base


def test_low_base_flags_lower_leg_segments(conventional_spec, flat_arena):
    spec = conventional_spec
    s = nominal_state(spec, flat_arena, xy=(4.0, 4.0))
    # halve the standing height without folding the legs: the lower-leg
    # centerline must dip below the surface
    s.base_position = np.array([4.0, 4.0, 0.25])
    _, log = step(s, spec, s.q, flat_arena, ContactParams(), DT)
    assert log.illegal_lower.any()


def test_nominal_standing_has_no_illegal_contacts(prismatic_spec, flat_arena):
    s = nominal_state(prismatic_spec, flat_arena, xy=(4.0, 4.0))
    _, log = step(s, prismatic_spec, s.q, flat_arena, ContactParams(), DT)
    assert not log.illegal_base
    assert not log.illegal_upper.any()
    assert not log.illegal_lower.any()


# ---------------------------------------------------------------------------
# randomization hooks and misc
# ---------------------------------------------------------------------------


def test_mass_randomization_scales_inertia(conventional_spec, flat_arena):
    batch = SimBatch(conventional_spec, flat_arena, 2)
    base = conventional_spec.base_mass
    batch.set_env_mass(0, base + 5.0)
    np.testing.assert_allclose(
        batch.inertia[0],
        np.diag(conventional_spec.base_inertia) * (base + 5.0) / base,
        rtol=1e-12,
    )
    np.testing.assert_allclose(batch.inertia[1], np.diag(conventional_spec.base_inertia))
    with pytest.raises(ValueError):
        batch.set_env_mass(0, -1.0)


def test_contact_params_validation():
    with pytest.raises(ValueError):
        ContactParams(k_n=0.0)
    with pytest.raises(ValueError):
        ContactParams(mu=-0.2)
    with pytest.raises(ValueError):
        ContactParams(v_slip=0.0)


def test_step_rejects_bad_inputs(conventional_spec, flat_arena):
    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    with pytest.raises(ValueError):
        step(s, conventional_spec, conventional_spec.nominal_q, flat_arena,
             ContactParams(), dt=0.0)
    with pytest.raises(ValueError):
        step(s, conventional_spec, np.zeros(5), flat_arena, ContactParams(), DT)


def test_trajectory_record_round_trips(conventional_spec, flat_arena):
    import json

    s = nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0))
    s2, log = step(s, conventional_spec, s.q, flat_arena, ContactParams(), DT)
    rec = json.loads(trajectory_record(s2, log))
    assert rec["time"] == pytest.approx(DT)
    assert len(rec["q"]) == 12
    assert len(rec["tau"]) == 12
    assert rec["foot_contact"] in ([0, 0, 0, 0], [1, 1, 1, 1])


def test_time_advances_by_control_period(conventional_spec, flat_arena):
    cfg = SimConfig()
    batch = SimBatch(conventional_spec, flat_arena, 1, sim_cfg=cfg)
    batch.write_state(0, nominal_state(conventional_spec, flat_arena, xy=(4.0, 4.0)))
    batch.step_control(conventional_spec.nominal_q[None, :])
    assert batch.read_state(0).time == pytest.approx(cfg.dt * cfg.control_decimation)
