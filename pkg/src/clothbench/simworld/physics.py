"""Semi-implicit Euler integration of the arm + cloth system.

Substep order: forces from the current state, arm velocity/position update,
free-node velocity/position update, then the grasped nodes are re-pinned to
the new end-effector frame with finite-difference velocities.  The cloth's
reaction (spring + damping + weight collected at the grasped corners) loads
the arm through the Jacobian transpose, so heavier or stiffer cloth is felt.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ArmModel,
    Camera,
    ClothModel,
    CommandOutOfBoundsError,
    MaterialParams,
    ServoCommand,
    WorldState,
)


class IntegrationDivergedError(FloatingPointError):
    pass


class SettleError(RuntimeError):
    pass


def forward_kinematics(arm, theta):
    """Return (elbow_xy, ee_xy, ee_angle) for joint angles theta."""
    t1 = theta[0]
    t12 = theta[0] + theta[1]
    l1, l2 = arm.link_lengths
    bx, by = arm.base
    elbow = np.array([bx + l1 * math.cos(t1), by + l1 * math.sin(t1)])
    ee = np.array([elbow[0] + l2 * math.cos(t12), elbow[1] + l2 * math.sin(t12)])
    return elbow, ee, t12


def jacobian(arm, theta):
    """d(ee)/d(theta), 2x2."""
    t1 = theta[0]
    t12 = theta[0] + theta[1]
    l1, l2 = arm.link_lengths
    s1, c1 = math.sin(t1), math.cos(t1)
    s12, c12 = math.sin(t12), math.cos(t12)
    return np.array([[-l1 * s1 - l2 * s12, -l2 * s12],
                     [l1 * c1 + l2 * c12, l2 * c12]])


def _frame_points(arm, cloth, theta):
    """World positions of the grasped corner nodes for the given pose."""
    _, ee, ang = forward_kinematics(arm, theta)
    c, s = math.cos(ang), math.sin(ang)
    rot = np.array([[c, -s], [s, c]])
    return ee + cloth.attach_offsets @ rot.T


def spring_forces(x, v, edges, rest, k_spring, c_damp, incidence):
    """Per-node spring plus relative-velocity damping forces."""
    i, j = edges[:, 0], edges[:, 1]
    d = x[j] - x[i]
    length = np.sqrt((d * d).sum(axis=1))
    length = np.maximum(length, 1e-12)
    fs = (k_spring * (length - rest) / length)[:, None] * d
    fd = c_damp * (v[j] - v[i])
    return incidence @ (fs + fd)


def semi_implicit_step(x, v, forces, mass, dt):
    """Velocity first, then position with the new velocity."""
    v2 = v + (dt / mass) * forces
    return x + dt * v2, v2


@dataclass
class SimWorld:
    arm: ArmModel
    cloth: ClothModel
    camera: Camera
    gravity: float = 9.8
    dt: float = 1e-3
    substeps_per_tick: int = 200  # 0.2 s tick at 5 Hz

    @classmethod
    def default(cls):
        return cls(ArmModel(), ClothModel(), Camera())

    @property
    def tick_dt(self):
        return self.dt * self.substeps_per_tick

    # ------------------------------------------------------------------
    def validate_command(self, cmd):
        lo, hi = self.arm.limits_lo(), self.arm.limits_hi()
        tr = np.asarray(cmd.theta_ref, dtype=float)
        if tr.shape != (2,) or np.any(tr < lo - 1e-12) or np.any(tr > hi + 1e-12):
            raise CommandOutOfBoundsError(f"theta_ref {tr} outside joint limits")
        kmin, kmax = self.arm.k_ref_range
        if not (kmin - 1e-12 <= cmd.k_ref <= kmax + 1e-12):
            raise CommandOutOfBoundsError(f"k_ref {cmd.k_ref} outside [{kmin}, {kmax}]")

    def initial_state(self, theta=None):
        """Cloth hanging straight down from the grasp at rest spacing."""
        theta = np.array([0.6, -1.2]) if theta is None else np.asarray(theta, dtype=float)
        pins = _frame_points(self.arm, self.cloth, theta)
        _, ee, ang = forward_kinematics(self.arm, theta)
        normal = np.array([-math.sin(ang), math.cos(ang)])
        x = np.zeros((18, 2))
        sp = self.cloth.spacing
        for row in range(3):
            anchor = ee + (1 - row) * sp * normal
            for col in range(6):
                x[row * 6 + col] = anchor + np.array([0.0, -sp * col])
        x[self.cloth.attach_nodes[0]] = pins[0]
        x[self.cloth.attach_nodes[1]] = pins[1]
        return WorldState(0.0, theta.copy(), np.zeros(2), x, np.zeros((18, 2)))

    # ------------------------------------------------------------------
    def _cloth_forces(self, x, v, material):
        f = spring_forces(x, v, self.cloth.edges, self.cloth.rest,
                          self.cloth.k_spring, material.c_damp,
                          self.cloth.incidence)
        f[:, 1] -= material.node_mass * self.gravity
        return f

    def _substep(self, state, cmd_arr, material, ext_force):
        arm, cloth, dt = self.arm, self.cloth, self.dt
        theta_ref, k_ref = cmd_arr[:2], cmd_arr[2]
        f = self._cloth_forces(state.x, state.v, material)

        # load on the hand: whatever holds the grasped corners feels their forces
        pin_idx = np.array(cloth.attach_nodes, dtype=np.intp)
        f_hand = f[pin_idx].sum(axis=0) + (ext_force if ext_force is not None else 0.0)
        tau = (k_ref * arm.kp0 * (theta_ref - state.theta)
               - math.sqrt(k_ref) * arm.kd0 * state.theta_dot
               + jacobian(arm, state.theta).T @ np.asarray(f_hand, dtype=float))

        theta_dot = state.theta_dot + dt * tau / np.asarray(arm.inertia)
        theta = state.theta + dt * theta_dot
        lo, hi = arm.limits_lo(), arm.limits_hi()
        clipped = np.clip(theta, lo, hi)
        theta_dot = np.where(clipped != theta, 0.0, theta_dot)
        theta = clipped

        x, v = semi_implicit_step(state.x, state.v, f, material.node_mass, dt)

        pins = _frame_points(arm, cloth, theta)
        v[pin_idx] = (pins - state.x[pin_idx]) / dt
        x[pin_idx] = pins
        return WorldState(state.t + dt, theta, theta_dot, x, v)

    def step(self, state, cmd, material, dt=None, ext_force=None):
        """Advance one control tick (default 1/5 s) under a held command."""
        self.validate_command(cmd)
        n = self.substeps_per_tick if dt is None else max(1, round(dt / self.dt))
        cmd_arr = cmd.as_array()
        for _ in range(n):
            state = self._substep(state, cmd_arr, material, ext_force)
        if not (np.isfinite(state.x).all() and np.isfinite(state.theta).all()
                and np.isfinite(state.v).all() and np.isfinite(state.theta_dot).all()):
            raise IntegrationDivergedError(
                f"non-finite state at t={state.t:.3f} (material {material.tag})")
        return state

    def settle(self, state, cmd, material, duration=2.0):
        """Hold one command for a while; used to initialize hanging cloth."""
        ticks = max(1, round(duration / self.tick_dt))
        for _ in range(ticks):
            state = self.step(state, cmd, material)
        return state

    # ------------------------------------------------------------------
    def energies(self, state, material):
        """(kinetic, spring potential, gravity potential) of arm + cloth."""
        cloth = self.cloth
        i, j = cloth.edges[:, 0], cloth.edges[:, 1]
        d = state.x[j] - state.x[i]
        length = np.sqrt((d * d).sum(axis=1))
        e_spring = 0.5 * cloth.k_spring * np.sum((length - cloth.rest) ** 2)
        m = material.node_mass
        ke_cloth = 0.5 * m * np.sum(state.v ** 2)
        ke_arm = 0.5 * np.sum(np.asarray(self.arm.inertia) * state.theta_dot ** 2)
        e_grav = m * self.gravity * np.sum(state.x[:, 1])
        return ke_cloth + ke_arm, e_spring, e_grav

    def servo_energy(self, state, cmd):
        err = np.asarray(cmd.theta_ref) - state.theta
        return 0.5 * cmd.k_ref * self.arm.kp0 * np.sum(err ** 2)


# ----------------------------------------------------------------------
# arm-only statics probe


def _arm_only_settle(world, theta, theta_dot, cmd_arr, ext_force, budget, tol):
    arm, dt = world.arm, world.dt
    theta = theta.copy()
    theta_dot = theta_dot.copy()
    theta_ref, k_ref = cmd_arr[:2], cmd_arr[2]
    inertia = np.asarray(arm.inertia)
    lo, hi = arm.limits_lo(), arm.limits_hi()
    steps = int(budget / dt)
    for s in range(steps):
        tau = (k_ref * arm.kp0 * (theta_ref - theta)
               - math.sqrt(k_ref) * arm.kd0 * theta_dot
               + jacobian(arm, theta).T @ ext_force)
        theta_dot = theta_dot + dt * tau / inertia
        theta_new = theta + dt * theta_dot
        clipped = np.clip(theta_new, lo, hi)
        theta_dot = np.where(clipped != theta_new, 0.0, theta_dot)
        theta = clipped
        if s % 100 == 0 and np.max(np.abs(theta_dot)) < tol and s > 0:
            return theta
    raise SettleError(f"arm did not reach static equilibrium within {budget} s")


def stiffness_ellipsoid(world, theta_ref, k_ref, n_dirs=16, probe_force=1.0,
                        budget=12.0, tol=1e-7):
    """End-effector displacements under unit forces from n_dirs directions.

    The arm (no cloth) settles at theta_ref, then each probe force is held
    until static equilibrium; the returned array is (n_dirs, 2) displacement
    vectors of the end effector.  Raises SettleError on non-convergence.
    """
    theta_ref = np.asarray(theta_ref, dtype=float)
    cmd_arr = np.array([theta_ref[0], theta_ref[1], float(k_ref)])
    world.validate_command(ServoCommand((theta_ref[0], theta_ref[1]), float(k_ref)))
    rest = _arm_only_settle(world, theta_ref, np.zeros(2), cmd_arr,
                            np.zeros(2), budget, tol)
    _, ee0, _ = forward_kinematics(world.arm, rest)
    out = np.zeros((n_dirs, 2))
    for k in range(n_dirs):
        ang = 2.0 * math.pi * k / n_dirs
        force = probe_force * np.array([math.cos(ang), math.sin(ang)])
        eq = _arm_only_settle(world, rest, np.zeros(2), cmd_arr, force, budget, tol)
        _, ee, _ = forward_kinematics(world.arm, eq)
        out[k] = ee - ee0
    return out
