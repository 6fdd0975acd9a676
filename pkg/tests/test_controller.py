"""Tests for the receding-horizon controller and live loops."""

import csv

import numpy as np
import pytest

import clothbench.controller as C
import clothbench.dpmpb as D
import clothbench.sensorimotor as SM
import clothbench.simworld as S
from clothbench.controller.core import _rollout_candidates, _rollout_taped
from clothbench.tensor import ContractError, Tensor, gradient_check, matmul

# ---------------------------------------------------------------------------
# Shared fixtures: a linear surrogate plant model and a kit for the live loop
# ---------------------------------------------------------------------------

ZERO_HIDDEN = ((Tensor(np.zeros((1, 1))), Tensor(np.zeros((1, 1)))),)


class LinearModel:
    """Linear one-step model: s' = [s, u, p] @ W.  Ignores hidden state."""

    n_s, n_u, n_p = 7, 3, 2

    def __init__(self, seed=0, scale=0.3):
        rng = np.random.default_rng(seed)
        self.w = Tensor(rng.normal(0.0, scale, (self.n_s + self.n_u + self.n_p, self.n_s)))

    def step_batch(self, x, hidden):
        return matmul(x, self.w), hidden


class FragileModel(LinearModel):
    """Linear model that blows up when any input magnitude exceeds a limit."""

    def __init__(self, seed=0, limit=3.0):
        super().__init__(seed)
        self.limit = limit

    def step_batch(self, x, hidden):
        if np.any(np.abs(x.data) > self.limit):
            return Tensor(np.full((x.shape[0], self.n_s), np.inf)), hidden
        return matmul(x, self.w), hidden


def stub_encoder(image):
    """Cheap deterministic (3,) feature in place of a trained autoencoder."""
    return np.array([image.mean(), image[:48].mean(), image[:, :64].mean()])


def loop_model(seed=0):
    """Real recurrent model with hand-set normalization for loop tests."""
    model = D.DpmpbModel(n_s=7, n_u=3, n_p=2, seed=seed)
    model.stats = D.NormStats(
        s_mean=np.zeros(7), s_std=np.ones(7),
        u_mean=np.array([0.3, -1.2, 40.0]), u_std=np.array([1.0, 1.0, 17.0]),
        s_guarded=np.zeros(7, dtype=bool), u_guarded=np.zeros(3, dtype=bool))
    return model


@pytest.fixture(scope="module")
def plant_kit():
    world = S.SimWorld.default()
    material = S.MaterialParams(0.05, 0.10)
    plant = C.SimPlant.hanging(world, material, settle_s=1.0)
    return world, material, plant


# ---------------------------------------------------------------------------
# Sensorimotor layout
# ---------------------------------------------------------------------------


def test_state_assembly_roundtrip():
    z, th, thd = np.array([0.1, -0.2, 0.3]), np.array([0.5, -1.0]), np.array([2.0, -3.0])
    s = SM.assemble_state(z, th, thd)
    assert s.shape == (7,)
    z2, th2, thd2 = SM.split_state(s)
    assert np.array_equal(z2, z) and np.array_equal(th2, th) and np.array_equal(thd2, thd)
    with pytest.raises(ContractError):
        SM.assemble_state(np.zeros(2), th, thd)
    with pytest.raises(ContractError):
        SM.split_state(np.zeros(6))


def test_command_assembly_and_bounds():
    u = SM.assemble_command([0.4, -0.8], 25.0)
    assert np.array_equal(u, [0.4, -0.8, 25.0])
    lo, hi = SM.command_bounds(S.ArmModel())
    assert lo.shape == hi.shape == (3,)
    assert lo[SM.K_REF] == 10.0 and hi[SM.K_REF] == 70.0
    assert np.all(lo < hi)


# ---------------------------------------------------------------------------
# Periodic mask
# ---------------------------------------------------------------------------


def test_mask_reference_sequence_bit_exact():
    mask = C.PeriodicMask.for_tick(2, 4, 4)
    seen = [mask.values.copy()]
    for _ in range(2):
        mask = C.mask_shift(mask)
        seen.append(mask.values.copy())
    assert np.array_equal(seen[0], [0, 1, 0, 0])
    assert np.array_equal(seen[1], [1, 0, 0, 0])
    assert np.array_equal(seen[2], [0, 0, 0, 1])


def test_mask_shift_matches_schedule_everywhere():
    for n_seq in range(1, 9):
        for n_periodic in range(1, 9):
            mask = C.PeriodicMask.for_tick(0, n_seq, n_periodic)
            for t in range(25):
                j = np.arange(n_seq)
                expect = ((t + 1 + j) % n_periodic == 0).astype(float)
                assert np.array_equal(mask.values, expect), (n_seq, n_periodic, t)
                mask = C.mask_shift(mask)


def test_mask_popcount_over_period_is_one():
    for n_seq in range(1, 9):
        for n_periodic in range(1, 9):
            masks = []
            mask = C.PeriodicMask.for_tick(0, n_seq, n_periodic)
            for _ in range(n_periodic * 3):
                masks.append(mask.values.copy())
                mask = C.mask_shift(mask)
            stack = np.stack(masks)
            for start in range(len(masks) - n_periodic):
                window = stack[start:start + n_periodic]
                assert np.array_equal(window.sum(axis=0), np.ones(n_seq))


def test_mask_all_ones_when_period_is_one():
    mask = C.PeriodicMask.for_tick(0, 6, 1)
    for _ in range(10):
        assert np.array_equal(mask.values, np.ones(6))
        mask = C.mask_shift(mask)


def test_mask_validation():
    with pytest.raises(ContractError):
        C.PeriodicMask(np.array([0.0, 0.5, 1.0]), 0, 4)
    with pytest.raises(ContractError):
        C.PeriodicMask(np.array([1.0]), 0, 0)


# ---------------------------------------------------------------------------
# Warm start and schedule
# ---------------------------------------------------------------------------


def test_warm_start_shift_and_duplicate():
    u = np.array([[1.0, 10, 100], [2, 20, 200], [3, 30, 300], [4, 40, 400]])
    shifted = C.warm_start(C.ControlSequence(u)).u_seq
    assert np.array_equal(shifted, np.array([u[1], u[2], u[3], u[3]]))


def test_gamma_schedule_values():
    g = C.gamma_schedule(3, 1.0)
    assert np.allclose(g, [1e-3, 10 ** -1.5, 1.0], rtol=1e-3)
    assert np.array_equal(C.gamma_schedule(1, 0.7), [0.7])
    g8 = C.gamma_schedule(8, 2.0)
    ratios = g8[1:] / g8[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-12)
    assert g8[0] == pytest.approx(2e-3) and g8[-1] == pytest.approx(2.0)
    with pytest.raises(ContractError):
        C.gamma_schedule(0, 1.0)


# ---------------------------------------------------------------------------
# Control loss
# ---------------------------------------------------------------------------


def test_loss_annihilated_by_zero_mask():
    rng = np.random.default_rng(0)
    ref, pred = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    assert C.control_loss(ref, pred, np.zeros(4), 0.0) == 0.0


def test_loss_zero_at_masked_optimum():
    rng = np.random.default_rng(1)
    ref = rng.normal(size=(4, 7))
    pred = rng.normal(size=(4, 7))
    mask = np.array([1.0, 0.0, 1.0, 0.0])
    pred[:, SM.JOINT_VEL] = 0.0           # zero predicted velocities
    pred[0, SM.LATENT] = ref[0, SM.LATENT]  # perfect at masked steps only
    pred[2, SM.LATENT] = ref[2, SM.LATENT]
    assert C.control_loss(ref, pred, mask, 0.001) == 0.0


def test_loss_hand_computed_unit_errors():
    ref = np.zeros((2, 7))
    ref[:, SM.LATENT] = [1.0, 0.0, 0.0]   # unit error against zero prediction
    pred = np.zeros((2, 7))
    assert C.control_loss(ref, pred, np.ones(2), 0.0) == pytest.approx(np.sqrt(2.0))
    # velocity regularizer alone
    pred[:, SM.JOINT_VEL] = 3.0
    val = C.control_loss(ref, pred, np.zeros(2), 0.5)
    assert val == pytest.approx(0.5 * np.sqrt(4 * 9.0))


def test_loss_tensor_and_array_paths_agree():
    rng = np.random.default_rng(2)
    ref, pred = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    mask = np.array([1.0, 0, 1, 0, 1])
    t_val = C.control_loss(ref, Tensor(pred.copy()), mask, 0.01).item()
    a_val = C.control_loss(ref, pred, mask, 0.01)
    assert t_val == pytest.approx(a_val, abs=1e-14)


def test_loss_contract_errors():
    with pytest.raises(ContractError):
        C.control_loss(np.zeros((3, 7)), np.zeros((4, 7)), np.ones(3), 0.0)
    with pytest.raises(ContractError):
        C.control_loss(np.zeros((3, 6)), np.zeros((3, 6)), np.ones(3), 0.0)
    with pytest.raises(ContractError):
        C.control_loss(np.zeros((3, 7)), np.zeros((3, 7)), np.array([1.0, 2.0, 0.0]), 0.0)


# ---------------------------------------------------------------------------
# Gradient exactness through rollout + loss
# ---------------------------------------------------------------------------


def test_control_gradient_matches_finite_differences():
    model = D.DpmpbModel(n_s=7, n_u=3, n_p=2, seed=3)
    rng = np.random.default_rng(4)
    s_t = rng.normal(size=7) * 0.5
    p_row = Tensor(rng.normal(size=(1, 2)) * 0.3)
    hidden = D.zero_hidden(model)
    u_t = Tensor(rng.normal(size=(3, 3)) * 0.5)
    s_ref = np.zeros((3, 7))
    s_ref[:, SM.LATENT] = rng.normal(size=(3, 3))
    mask = np.array([1.0, 0.0, 1.0])

    def f(u):
        pred = _rollout_taped(model, p_row, hidden, s_t, u)
        return C.control_loss(s_ref, pred, mask, 0.001)

    err = gradient_check(f, [u_t], n_probe=9, eps=1e-5, rng=np.random.default_rng(5))
    assert err < 1e-5


# ---------------------------------------------------------------------------
# The per-tick optimization
# ---------------------------------------------------------------------------


def _surrogate_setup(seed=0, n_seq=4):
    model = LinearModel(seed)
    rng = np.random.default_rng(seed + 100)
    s_t = rng.normal(size=7) * 0.3
    z_ref = rng.normal(size=3)
    u_prev = C.ControlSequence(rng.normal(size=(n_seq, 3)) * 0.1)
    mask = C.PeriodicMask.for_tick(0, n_seq, 2)
    return model, s_t, z_ref, u_prev, mask


def _initial_loss(model, s_t, z_ref, u_prev, mask, cfg):
    u0 = C.warm_start(u_prev).u_seq
    pred = _rollout_candidates(model, np.zeros(2), ZERO_HIDDEN, s_t, u0[None])
    s_ref = np.zeros((cfg.n_seq, 7))
    s_ref[:, SM.LATENT] = z_ref
    vals = C.control_loss(s_ref, pred[0], mask, cfg.w_loss)
    return vals


def test_optimize_descends_on_linear_surrogate():
    model, s_t, z_ref, u_prev, mask = _surrogate_setup()
    cfg = C.ControlConfig(n_seq=4, n_batch=30, gamma_max=1.0, n_iter=3, w_loss=0.001,
                          n_periodic=2)
    init = _initial_loss(model, s_t, z_ref, u_prev, mask, cfg)
    res = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    assert res.loss < 0.9 * init
    assert res.losses.shape == (3,) and res.gammas.shape == (3,)


def test_optimize_loss_never_increases_across_iterations():
    model, s_t, z_ref, u_prev, mask = _surrogate_setup(seed=7)
    cfg = C.ControlConfig(n_seq=4, n_batch=10, gamma_max=2.0, n_iter=5, n_periodic=2)
    res = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    assert np.all(np.diff(res.losses) <= 0.0)


def test_optimize_deterministic():
    model, s_t, z_ref, u_prev, mask = _surrogate_setup(seed=9)
    cfg = C.ControlConfig(n_seq=4, n_batch=8, n_iter=3, n_periodic=2)
    a = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    b = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    assert np.array_equal(a.sequence.u_seq, b.sequence.u_seq)
    assert a.loss == b.loss
    assert np.array_equal(a.gammas, b.gammas)


def test_optimize_keeps_incumbent_when_candidates_overshoot():
    model, s_t, z_ref, u_prev, mask = _surrogate_setup(seed=11)
    # a single absurdly large step always overshoots a quadratic bowl
    cfg = C.ControlConfig(n_seq=4, n_batch=1, gamma_max=1e4, n_iter=3, n_periodic=2)
    init = _initial_loss(model, s_t, z_ref, u_prev, mask, cfg)
    res = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    assert np.array_equal(res.gammas, np.zeros(3))     # incumbent kept every time
    assert res.loss == pytest.approx(init, rel=1e-12)
    assert np.array_equal(res.sequence.u_seq, C.warm_start(u_prev).u_seq)


def test_optimize_stationary_when_objective_is_annihilated():
    model, s_t, z_ref, u_prev, _ = _surrogate_setup(seed=13)
    cfg = C.ControlConfig(n_seq=4, n_batch=6, n_iter=2, w_loss=0.0, n_periodic=2)
    mask = np.zeros(4)  # no target, no regularizer -> zero gradient
    res = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    assert res.loss == 0.0
    assert np.array_equal(res.gammas, np.zeros(2))
    assert np.array_equal(res.sequence.u_seq, C.warm_start(u_prev).u_seq)


def test_optimize_respects_bounds_and_gain_lock():
    model, s_t, z_ref, u_prev, mask = _surrogate_setup(seed=15)
    cfg = C.ControlConfig(n_seq=4, n_batch=12, gamma_max=5.0, n_iter=3, n_periodic=2)
    lo, hi = -np.array([0.2, 0.2, 9.9]), np.array([0.2, 0.2, 9.9])
    res = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg,
                     u_lo=lo, u_hi=hi, fixed_k_n=0.25)
    u = res.sequence.u_seq
    assert np.all(u >= lo - 1e-12) and np.all(u <= hi + 1e-12)
    assert np.array_equal(u[:, SM.K_REF], np.full(4, 0.25))


def test_optimize_discards_diverging_candidates():
    model = FragileModel(seed=17, limit=3.0)
    rng = np.random.default_rng(18)
    s_t = rng.normal(size=7) * 0.2
    z_ref = rng.normal(size=3)
    u_prev = C.ControlSequence(np.zeros((4, 3)))
    mask = C.PeriodicMask.for_tick(0, 4, 2)
    # large top step sizes push some candidates past the blow-up limit
    cfg = C.ControlConfig(n_seq=4, n_batch=6, gamma_max=50.0, n_iter=2, n_periodic=2)
    res = C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    assert np.isfinite(res.loss)
    assert np.all(np.abs(res.sequence.u_seq) <= model.limit)


def test_optimize_raises_when_incumbent_rollout_blows_up():
    model = FragileModel(seed=19, limit=3.0)
    u_prev = C.ControlSequence(np.full((4, 3), 10.0))  # already past the limit
    mask = C.PeriodicMask.for_tick(0, 4, 2)
    cfg = C.ControlConfig(n_seq=4, n_batch=4, n_iter=1, n_periodic=2)
    with pytest.raises(C.OptimizationDivergedError):
        C.optimize(model, np.zeros(2), ZERO_HIDDEN, np.zeros(7), np.zeros(3),
                   u_prev, mask, cfg)


def test_optimize_contract_errors():
    model, s_t, z_ref, u_prev, mask = _surrogate_setup()
    cfg = C.ControlConfig(n_seq=4, n_batch=4, n_iter=1, n_periodic=2)
    with pytest.raises(ContractError):
        C.optimize(model, np.zeros(3), ZERO_HIDDEN, s_t, z_ref, u_prev, mask, cfg)
    with pytest.raises(ContractError):
        C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t[:5], z_ref, u_prev, mask, cfg)
    bad_prev = C.ControlSequence(np.zeros((3, 3)))  # horizon mismatch
    with pytest.raises(ContractError):
        C.optimize(model, np.zeros(2), ZERO_HIDDEN, s_t, z_ref, bad_prev, mask, cfg)


def test_config_validation():
    with pytest.raises(ContractError):
        C.ControlConfig(n_seq=0)
    with pytest.raises(ContractError):
        C.ControlConfig(gamma_max=0.0)
    with pytest.raises(ContractError):
        C.ControlConfig(w_loss=-0.1)


# ---------------------------------------------------------------------------
# Live loops on the simulated plant
# ---------------------------------------------------------------------------


def test_sim_plant_basics(plant_kit):
    world, material, plant = plant_kit
    obs = plant.observe()
    assert obs.image.shape == (96, 128)
    assert set(np.unique(obs.image)).issubset({0.0, 1.0})
    assert obs.theta.shape == (2,) and np.isfinite(obs.theta).all()
    lo, hi = plant.command_bounds()
    with pytest.raises(S.CommandOutOfBoundsError):
        C.SimPlant(world, material, plant.state).step([10.0, 0.0, 40.0])


def test_control_loop_runs_and_logs(tmp_path, plant_kit):
    world, material, _ = plant_kit
    plant = C.SimPlant.hanging(world, material, settle_s=0.6)
    model = loop_model()
    cfg = C.ControlConfig(n_seq=4, n_batch=5, n_iter=2, n_periodic=4)
    path = tmp_path / "telemetry.csv"
    z_ref = stub_encoder(plant.observe().image) + np.array([0.02, -0.01, 0.01])
    digest = D.weights_digest(model)
    tel = C.control_loop(plant, stub_encoder, model, np.zeros(2), z_ref, cfg,
                         n_ticks=6, telemetry_path=path)
    assert len(tel) == 6
    lo, hi = plant.command_bounds()
    for i, rec in enumerate(tel.records):
        assert rec.tick == i
        assert np.all(rec.u_raw >= lo - 1e-9) and np.all(rec.u_raw <= hi + 1e-9)
        assert np.isfinite(rec.latent_err) and np.isfinite(rec.loss)
    times = [rec.time for rec in tel.records]
    assert np.allclose(np.diff(times), 0.2, atol=1e-9)
    assert D.weights_digest(model) == digest
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["tick", "time_s", "latent_err"]
    assert len(rows) == 7
    for row in rows[1:]:  # every cell must parse as a plain float
        assert all(np.isfinite(float(cell)) for cell in row)
    # the telemetry buffer reloads as a training-ready episode
    ep = tel.to_episode("probe", 0)
    assert len(ep) == 6 and ep.states.shape == (6, 7)


def test_control_loop_flushes_partial_telemetry_on_fault(tmp_path, plant_kit):
    world, material, _ = plant_kit

    class FaultyPlant(C.SimPlant):
        def __init__(self, *a):
            super().__init__(*a)
            self.count = 0

        def step(self, u_raw):
            self.count += 1
            if self.count > 3:
                raise RuntimeError("actuator fault")
            super().step(u_raw)

    plant = FaultyPlant(world, material, world.initial_state())
    model = loop_model()
    cfg = C.ControlConfig(n_seq=4, n_batch=4, n_iter=1, n_periodic=4)
    path = tmp_path / "partial.csv"
    z_ref = stub_encoder(plant.observe().image)
    with pytest.raises(C.ControlAbortedError) as info:
        C.control_loop(plant, stub_encoder, model, np.zeros(2), z_ref, cfg,
                       n_ticks=10, telemetry_path=path)
    assert len(info.value.telemetry) == 3
    with open(path) as fh:
        assert len(list(csv.reader(fh))) == 4  # header + 3 completed ticks


def test_random_loop_telemetry(plant_kit):
    world, material, _ = plant_kit
    plant = C.SimPlant.hanging(world, material, settle_s=0.6)
    z_ref = stub_encoder(plant.observe().image)
    tel = C.random_loop(plant, stub_encoder, z_ref, n_ticks=8, seed=3)
    assert len(tel) == 8
    lo, hi = plant.command_bounds()
    for rec in tel.records:
        assert np.isnan(rec.loss) and np.isnan(rec.gamma)
        assert np.all(rec.u_raw >= lo) and np.all(rec.u_raw <= hi)
    assert np.isfinite(tel.latent_errors).all()


def test_integrated_loop_updates_bias_on_schedule(plant_kit):
    world, material, _ = plant_kit
    plant = C.SimPlant.hanging(world, material, settle_s=0.6)
    model = loop_model(seed=1)
    cfg = C.ControlConfig(n_seq=4, n_batch=4, n_iter=1, n_periodic=4)
    sched = C.EstimationSchedule(every_ticks=4, lr=0.05, momentum=0.9, epochs=2,
                                 n_expand=2)
    z_ref = stub_encoder(plant.observe().image)
    digest = D.weights_digest(model)
    p_hist, tel = C.integrated_loop(plant, stub_encoder, model, np.zeros(2), z_ref,
                                    cfg, n_ticks=10, schedule=sched)
    assert len(tel) == 10
    ticks = [t for t, _ in p_hist]
    assert ticks[0] == 0
    assert ticks[1:] == [4, 8]  # estimation fires on the cadence once buffered
    assert all(np.isfinite(p).all() for _, p in p_hist)
    assert D.weights_digest(model) == digest  # estimation never touches weights
