"""Command-stream generators for data collection.

random_policy draws uniform targets over the full joint box; scripted_policy
emits a fling-and-stir repertoire that stands in for the hand-operated
demonstrations of the original rig: flings put the dynamic spread motions
the controller is later asked to reproduce into the corpus, and sustained
stirs keep the cloth nodes moving relative to each other so the data
separates the internal-damping levels, with the servo gain alternating
between stirs so its effect on the same motion is seen too.
"""

import numpy as np

from .model import ServoCommand


def random_policy(world, seed, hold_steps=4, stiffness=True, fixed_k=None):
    """Uniform theta_ref/k_ref held for hold_steps ticks; infinite generator."""
    rng = np.random.default_rng(seed)
    lo, hi = world.arm.limits_lo(), world.arm.limits_hi()
    kmin, kmax = world.arm.k_ref_range
    cmd = None
    tick = 0
    while True:
        if tick % hold_steps == 0:
            theta_ref = rng.uniform(lo, hi)
            if stiffness:
                k_ref = float(rng.uniform(kmin, kmax))
            else:
                k_ref = float(fixed_k if fixed_k is not None else 0.5 * (kmin + kmax))
            cmd = ServoCommand((float(theta_ref[0]), float(theta_ref[1])), k_ref)
        yield cmd
        tick += 1


def scripted_policy(world, seed):
    """Alternating fling and stir segments with randomized vigour."""
    rng = np.random.default_rng(seed)
    kmin, kmax = world.arm.k_ref_range
    lo, hi = world.arm.limits_lo(), world.arm.limits_hi()
    k_third = (kmax - kmin) / 3.0
    dt = world.tick_dt

    def clamp(th):
        return (float(np.clip(th[0], lo[0], hi[0])), float(np.clip(th[1], lo[1], hi[1])))

    stir_low_gain = True
    while True:
        # fling: raised pose with the elbow flexed so the cloth gathers,
        # then a stiff swing through
        raise_pose = clamp((rng.uniform(1.5, 2.7), rng.uniform(-2.2, -1.0)))
        swing_pose = clamp((rng.uniform(-0.5, 0.6), rng.uniform(-0.5, 0.0)))
        k_up = float(rng.uniform(kmin, kmax))
        k_down = float(rng.uniform(0.5 * (kmin + kmax), kmax))
        for _ in range(rng.integers(3, 8)):
            yield ServoCommand(raise_pose, k_up)
        for _ in range(rng.integers(3, 7)):
            yield ServoCommand(swing_pose, k_down)
        # stir: circle the joint targets for a few seconds at a rate near the
        # cloth's swing resonance; gain alternates low/high between stirs
        center = (rng.uniform(0.4, 1.2), rng.uniform(-1.4, -0.6))
        radius = rng.uniform(0.3, 0.6)
        omega = rng.uniform(2.5, 4.5)
        k_stir = float(rng.uniform(kmin, kmin + k_third) if stir_low_gain
                       else rng.uniform(kmax - k_third, kmax))
        stir_low_gain = not stir_low_gain
        phase = rng.uniform(0.0, 2.0 * np.pi)
        for i in range(int(rng.integers(20, 36))):
            a = omega * i * dt + phase
            yield ServoCommand(clamp((center[0] + radius * np.cos(a),
                                      center[1] + radius * np.sin(a))), k_stir)
        if rng.uniform() < 0.35:
            mid = clamp((rng.uniform(0.2, 1.2), rng.uniform(-1.6, -0.4)))
            for _ in range(rng.integers(2, 5)):
                yield ServoCommand(mid, float(rng.uniform(kmin, kmax)))
