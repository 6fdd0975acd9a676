"""Physics oracles: oscillator period, equilibrium, energy decay, statics."""

import math

import numpy as np
import pytest

from clothbench import simworld as S


def make_world(**kw):
    return S.SimWorld(S.ArmModel(), S.ClothModel(), S.Camera(), **kw)


MID = S.MaterialParams(c_damp=0.05, c_mass=0.10)


def test_forward_kinematics_straight_and_bent():
    arm = S.ArmModel()
    _, ee, ang = S.forward_kinematics(arm, np.array([0.0, 0.0]))
    assert np.allclose(ee, [0.6, 0.0], atol=1e-12)
    assert ang == 0.0
    _, ee, _ = S.forward_kinematics(arm, np.array([math.pi / 2, -math.pi / 2]))
    assert np.allclose(ee, [0.3, 0.3], atol=1e-12)


def test_jacobian_matches_finite_differences():
    arm = S.ArmModel()
    rng = np.random.default_rng(3)
    for _ in range(5):
        theta = rng.uniform([-1.0, -2.0], [2.5, -0.1])
        J = S.jacobian(arm, theta)
        eps = 1e-7
        for k in range(2):
            dp = theta.copy()
            dp[k] += eps
            dm = theta.copy()
            dm[k] -= eps
            _, ep, _ = S.forward_kinematics(arm, dp)
            _, em, _ = S.forward_kinematics(arm, dm)
            assert np.allclose((ep - em) / (2 * eps), J[:, k], atol=1e-6)


def test_two_node_oscillator_period():
    # one spring, two free nodes: period 2*pi*sqrt(m/(2k)) within 2 percent
    m, k, dt = 0.01, 10.0, 1e-3
    edges = np.array([[0, 1]])
    rest = np.array([0.1])
    inc = np.array([[1.0], [-1.0]])
    x = np.array([[0.0, 0.0], [0.13, 0.0]])  # stretched along the axis
    v = np.zeros((2, 2))
    expected = 2 * math.pi * math.sqrt(m / (2 * k))
    crossings = []
    prev = x[1, 0] - x[0, 0] - rest[0]
    for step in range(1, 4000):
        f = S.spring_forces(x, v, edges, rest, k, 0.0, inc)
        x, v = S.semi_implicit_step(x, v, f, m, dt)
        cur = x[1, 0] - x[0, 0] - rest[0]
        if prev > 0 >= cur:
            crossings.append(step * dt)
        prev = cur
    assert len(crossings) >= 4
    period = np.mean(np.diff(crossings))
    assert abs(period - expected) / expected < 0.02


def test_zero_gravity_rest_state_is_fixed_point():
    world = make_world(gravity=0.0)
    theta = np.array([math.pi / 2, 0.0])  # forearm vertical: lattice unsheared
    state = world.initial_state(theta)
    cmd = S.ServoCommand((theta[0], theta[1]), 30.0)
    nxt = world.step(state, cmd, MID)
    # diagonal rest lengths carry sqrt(2) rounding, so demand only float-residue
    assert np.allclose(nxt.theta, state.theta, atol=1e-12)
    assert np.allclose(nxt.x, state.x, atol=1e-12)
    assert np.all(np.abs(nxt.theta_dot) < 1e-12) and np.all(np.abs(nxt.v) < 1e-12)


def test_kinetic_energy_decays_with_damping():
    world = make_world()
    state = world.initial_state(np.array([0.6, -1.2]))
    cmd = S.ServoCommand((1.4, -0.4), 40.0)  # step target excites everything
    ke = {}
    for tick in range(1, 11):
        state = world.step(state, cmd, MID)
        if tick in (1, 10):  # t = 0.2 s and t = 2.0 s
            ke[tick] = world.energies(state, MID)[0]
    assert ke[10] < ke[1]


def test_total_energy_nonincreasing_after_transients():
    world = make_world()
    state = world.initial_state()
    cmd = S.ServoCommand((0.9, -0.9), 30.0)
    samples = []
    for tick in range(1, 26):  # 5 s at 5 Hz
        state = world.step(state, cmd, MID)
        if tick >= 10 and (tick - 10) % 2 == 0:  # every 0.4 s after 2 s
            ke, es, eg = world.energies(state, MID)
            samples.append(ke + es + eg + world.servo_energy(state, cmd))
    # the grasp constraint injects O(dt) ripple near equilibrium; allow 0.1%
    for a, b in zip(samples, samples[1:]):
        assert b <= a + max(1e-9, 1e-3 * abs(a))


def test_material_changes_trajectory():
    world = make_world()
    soft = S.MaterialParams(0.03, 0.10)
    stiff = S.MaterialParams(0.07, 0.10)
    sa = world.initial_state()
    sb = world.initial_state()
    policy = list(x for x, _ in zip(S.random_policy(world, seed=11), range(15)))
    diff = 0.0
    for cmd in policy:
        sa = world.step(sa, cmd, soft)
        sb = world.step(sb, cmd, stiff)
        diff = max(diff, np.abs(sa.x - sb.x).max())
    assert diff > 1e-3


def test_free_hang_stretches_at_least_twenty_percent():
    world = make_world()
    theta = np.array([math.pi / 2, 0.0])
    state = world.initial_state(theta)
    cmd = S.ServoCommand((theta[0], theta[1]), 50.0)
    state = world.settle(state, cmd, MID, duration=6.0)
    near = state.x[[0, 6, 12]].mean(axis=0)   # grasped short edge
    far = state.x[[5, 11, 17]].mean(axis=0)   # free short edge
    hang = np.linalg.norm(far - near)
    assert hang >= 1.2 * world.cloth.rest_length


def test_step_is_deterministic():
    world = make_world()
    cmds = list(x for x, _ in zip(S.random_policy(world, seed=5), range(10)))

    def run():
        st = world.initial_state()
        for cmd in cmds:
            st = world.step(st, cmd, MID)
        return st

    a, b = run(), run()
    assert a.x.tobytes() == b.x.tobytes()
    assert a.theta.tobytes() == b.theta.tobytes()
    assert a.v.tobytes() == b.v.tobytes()


def test_command_out_of_bounds_rejected():
    world = make_world()
    state = world.initial_state()
    with pytest.raises(S.CommandOutOfBoundsError):
        world.step(state, S.ServoCommand((4.0, -1.0), 30.0), MID)
    with pytest.raises(S.CommandOutOfBoundsError):
        world.step(state, S.ServoCommand((0.5, -1.0), 500.0), MID)


def test_material_validation():
    with pytest.raises(S.MaterialError):
        S.MaterialParams(-0.01, 0.1)
    with pytest.raises(S.MaterialError):
        S.MaterialParams(0.05, 0.0)


def test_random_policy_covers_limits_and_holds():
    world = make_world()
    gen = S.random_policy(world, seed=42, hold_steps=4)
    cmds = [next(gen) for _ in range(10_000)]
    th = np.array([c.theta_ref for c in cmds])
    ks = np.array([c.k_ref for c in cmds])
    lo, hi = world.arm.limits_lo(), world.arm.limits_hi()
    span = hi - lo
    assert np.all(th.min(axis=0) <= lo + 0.02 * span)
    assert np.all(th.max(axis=0) >= hi - 0.02 * span)
    kmin, kmax = world.arm.k_ref_range
    assert ks.min() <= kmin + 0.02 * (kmax - kmin)
    assert ks.max() >= kmax - 0.02 * (kmax - kmin)
    for i, (a, b) in enumerate(zip(cmds, cmds[1:])):
        if (i + 1) % 4 != 0:
            assert a.theta_ref == b.theta_ref and a.k_ref == b.k_ref


def test_scripted_policy_yields_valid_dynamic_commands():
    world = make_world()
    gen = S.scripted_policy(world, seed=9)
    cmds = [next(gen) for _ in range(250)]
    th = np.array([c.theta_ref for c in cmds])
    lo, hi = world.arm.limits_lo(), world.arm.limits_hi()
    assert np.all(th >= lo - 1e-9) and np.all(th <= hi + 1e-9)
    # the repertoire must actually move: large shoulder excursions present
    assert th[:, 0].max() - th[:, 0].min() > 1.5


def test_stiffness_ellipsoid_scaling_and_symmetry():
    world = make_world()
    theta_ref = (0.9, -1.3)
    d30 = S.stiffness_ellipsoid(world, theta_ref, 30.0, n_dirs=8)
    d60 = S.stiffness_ellipsoid(world, theta_ref, 60.0, n_dirs=8)
    m30 = np.linalg.norm(d30, axis=1)
    m60 = np.linalg.norm(d60, axis=1)
    assert np.all(np.abs(m30 / m60 - 2.0) < 0.1)  # doubling k halves movement
    # Opposite probe directions produce opposite displacements within 2%.
    # Symmetry is a linear-regime property, so it is checked at the stiffer
    # gain, where the probe deflection is small enough that the Jacobian is
    # effectively constant over it (at low gain the same probe bends the arm
    # far enough that second-order kinematic terms exceed the bound).
    for k in range(4):
        a, b = d60[k], d60[k + 4]
        assert np.linalg.norm(a + b) < 0.02 * max(np.linalg.norm(a), np.linalg.norm(b))
