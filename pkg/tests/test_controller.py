import itertools
import math

import numpy as np
import pytest

import magsat as ms
from magsat import (
    AttitudeState,
    ControlSequence,
    DipoleCommand,
    MpcConfig,
    QuantizerLevels,
)
from magsat.controller import shift_warm_start


@pytest.fixture(scope="module")
def field_at(sso_elements):
    return ms.field_function(sso_elements)


@pytest.fixture(scope="module")
def detumble_cfg():
    return MpcConfig(
        q_diag=np.array([0.0, 0.0, 0.0, 0.0, 500.0, 1000.0, 250.0]),
        r_diag=np.array([1e-8, 1e-8, 1e-8]),
        horizon=10,
        ts=2.0,
        u_max=0.1,
        x_ref=AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3)),
    )


def random_instance(rng, horizon):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x0 = AttitudeState(q=q, omega=rng.uniform(-0.08, 0.08, size=3))
    qref = rng.normal(size=4)
    qref /= np.linalg.norm(qref)
    cfg = MpcConfig(
        q_diag=rng.uniform(0.0, 1000.0, size=7),
        r_diag=np.full(3, 1e-8),
        horizon=horizon,
        ts=2.0,
        u_max=0.1,
        x_ref=AttitudeState(q=qref, omega=np.zeros(3)),
    )
    t0 = float(rng.uniform(0.0, 5400.0))
    return x0, cfg, t0


# --- config validation -------------------------------------------------------------

def test_mpc_config_rejects_negative_state_weight():
    with pytest.raises(ValueError):
        MpcConfig(q_diag=np.array([-1.0, 0, 0, 0, 0, 0, 0]), r_diag=np.ones(3),
                  horizon=1, ts=1.0, u_max=0.1,
                  x_ref=AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3)))


def test_mpc_config_rejects_nonpositive_control_weight():
    with pytest.raises(ValueError):
        MpcConfig(q_diag=np.zeros(7), r_diag=np.array([0.0, 1.0, 1.0]),
                  horizon=1, ts=1.0, u_max=0.1,
                  x_ref=AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3)))


def test_mpc_config_rejects_denormalized_reference():
    with pytest.raises(ValueError):
        MpcConfig(q_diag=np.zeros(7), r_diag=np.ones(3), horizon=1, ts=1.0,
                  u_max=0.1,
                  x_ref=AttitudeState(q=np.array([0, 0.1, 0, 1.0]), omega=np.zeros(3)))


def test_mpc_config_rejects_bad_horizon_and_times():
    x_ref = AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3))
    with pytest.raises(ValueError):
        MpcConfig(q_diag=np.zeros(7), r_diag=np.ones(3), horizon=0, ts=1.0,
                  u_max=0.1, x_ref=x_ref)
    with pytest.raises(ValueError):
        MpcConfig(q_diag=np.zeros(7), r_diag=np.ones(3), horizon=1, ts=0.0,
                  u_max=0.1, x_ref=x_ref)
    with pytest.raises(ValueError):
        MpcConfig(q_diag=np.zeros(7), r_diag=np.ones(3), horizon=1, ts=1.0,
                  u_max=0.0, x_ref=x_ref)


def test_control_sequence_validation():
    with pytest.raises(ValueError):
        ControlSequence(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        ControlSequence(np.full((2, 3), np.nan))
    assert len(ControlSequence(np.zeros((4, 3)))) == 4


def test_shift_warm_start_repeats_last():
    seq = ControlSequence(np.arange(12, dtype=float).reshape(4, 3))
    shifted = shift_warm_start(seq)
    np.testing.assert_array_equal(shifted.dipoles[0:3], seq.dipoles[1:4])
    np.testing.assert_array_equal(shifted.dipoles[3], seq.dipoles[3])


# --- prediction ----------------------------------------------------------------------

def test_predict_equilibrium_stays_put(field_at, detumble_cfg, table_inertia):
    x0 = AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3))
    seq = ControlSequence(np.zeros((10, 3)))
    traj = ms.predict(x0, seq, field_at, 0.0, detumble_cfg, table_inertia, substeps=5)
    assert len(traj.states) == 11
    for state in traj.states:
        np.testing.assert_allclose(state.q, x0.q, atol=1e-15)
        np.testing.assert_allclose(state.omega, np.zeros(3), atol=1e-18)
    np.testing.assert_allclose(traj.times, 2.0 * np.arange(11), atol=0)


def test_predict_single_step_equals_integrator(field_at, table_inertia):
    rng = np.random.default_rng(61)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x0 = AttitudeState(q=q, omega=rng.uniform(-0.05, 0.05, size=3))
    cfg = MpcConfig(q_diag=np.zeros(7), r_diag=np.ones(3), horizon=1, ts=2.0,
                    u_max=0.1,
                    x_ref=AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3)))
    m = np.array([0.07, -0.03, 0.05])
    traj = ms.predict(x0, ControlSequence(m.reshape(1, 3)), field_at, 100.0, cfg,
                      table_inertia, substeps=20)
    direct = ms.propagate(x0, DipoleCommand(m), field_at, 100.0, 2.0, 20, table_inertia)
    np.testing.assert_array_equal(traj.states[1].q, direct.q)
    np.testing.assert_array_equal(traj.states[1].omega, direct.omega)


def test_predict_substep_halving_agrees(field_at, detumble_cfg, table_inertia):
    rng = np.random.default_rng(67)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x0 = AttitudeState(q=q, omega=rng.uniform(-0.08, 0.08, size=3))
    seq = ControlSequence(rng.uniform(-0.1, 0.1, size=(10, 3)))
    t1 = ms.predict(x0, seq, field_at, 0.0, detumble_cfg, table_inertia, substeps=10)
    t2 = ms.predict(x0, seq, field_at, 0.0, detumble_cfg, table_inertia, substeps=20)
    end1 = t1.states[-1].as_array()
    end2 = t2.states[-1].as_array()
    assert np.max(np.abs(end1 - end2)) < 1e-9


def test_predict_rejects_length_mismatch(field_at, detumble_cfg, table_inertia):
    x0 = AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3))
    with pytest.raises(ValueError):
        ms.predict(x0, ControlSequence(np.zeros((3, 3))), field_at, 0.0,
                   detumble_cfg, table_inertia)


# --- cost ------------------------------------------------------------------------------

def test_total_cost_zero_at_reference(field_at, detumble_cfg, table_inertia):
    x0 = detumble_cfg.x_ref
    seq = ControlSequence(np.zeros((10, 3)))
    traj = ms.predict(x0, seq, field_at, 0.0, detumble_cfg, table_inertia, substeps=5)
    assert ms.total_cost(traj, seq, detumble_cfg) == 0.0


def test_total_cost_single_step_rate_weight():
    # one step, only the x-rate weighted at 500, error 0.01 rad/s, Ts = 2 s:
    # J = 500 * 0.01^2 * 2 = 0.1
    x_ref = AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3))
    cfg = MpcConfig(q_diag=np.array([0, 0, 0, 0, 500.0, 0, 0]), r_diag=np.ones(3),
                    horizon=1, ts=2.0, u_max=0.1, x_ref=x_ref)
    x1 = AttitudeState(q=x_ref.q, omega=np.array([0.01, 0.0, 0.0]))
    traj = ms.PredictedTrajectory(states=(x_ref, x1), times=np.array([0.0, 2.0]))
    seq = ControlSequence(np.zeros((1, 3)))
    assert math.isclose(ms.total_cost(traj, seq, cfg), 0.1, rel_tol=1e-12)


def test_total_cost_linear_in_state_weights(field_at, table_inertia):
    rng = np.random.default_rng(71)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x0 = AttitudeState(q=q, omega=rng.uniform(-0.05, 0.05, size=3))
    x_ref = AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3))
    qd = rng.uniform(0.0, 100.0, size=7)
    seq = ControlSequence(np.zeros((3, 3)))
    costs = []
    for scale in (1.0, 2.0):
        cfg = MpcConfig(q_diag=scale * qd, r_diag=np.ones(3), horizon=3, ts=2.0,
                        u_max=0.1, x_ref=x_ref)
        traj = ms.predict(x0, seq, field_at, 0.0, cfg, table_inertia, substeps=5)
        costs.append(ms.total_cost(traj, seq, cfg))
    assert math.isclose(costs[1], 2.0 * costs[0], rel_tol=1e-12)


def test_total_cost_nonnegative_random(field_at, table_inertia):
    rng = np.random.default_rng(73)
    for _ in range(10):
        x0, cfg, t0 = random_instance(rng, horizon=2)
        seq = ControlSequence(rng.uniform(-0.1, 0.1, size=(2, 3)))
        traj = ms.predict(x0, seq, field_at, t0, cfg, table_inertia, substeps=5)
        assert ms.total_cost(traj, seq, cfg) >= 0.0


# --- gradient ----------------------------------------------------------------------------

def central_difference_gradient(x0, seq, t0, field_at, cfg, inertia, substeps):
    h = 1e-6 * cfg.u_max
    out = np.zeros_like(seq.dipoles)
    for i in range(seq.dipoles.shape[0]):
        for j in range(3):
            up = seq.dipoles.copy()
            dn = seq.dipoles.copy()
            up[i, j] += h
            dn[i, j] -= h
            sp = ControlSequence(up)
            sn = ControlSequence(dn)
            jp = ms.total_cost(
                ms.predict(x0, sp, field_at, t0, cfg, inertia, substeps=substeps),
                sp, cfg,
            )
            jn = ms.total_cost(
                ms.predict(x0, sn, field_at, t0, cfg, inertia, substeps=substeps),
                sn, cfg,
            )
            out[i, j] = (jp - jn) / (2.0 * h)
    return out


def test_gradient_zero_at_reference(field_at, detumble_cfg, table_inertia):
    x0 = detumble_cfg.x_ref
    seq = ControlSequence(np.zeros((10, 3)))
    g = ms.gradient(x0, seq, 0.0, field_at, detumble_cfg, table_inertia, substeps=5)
    assert np.max(np.abs(g)) < 1e-10


def test_gradient_matches_central_differences(field_at, table_inertia):
    # relative error taken in norm: the difference-quotient oracle carries an
    # absolute roundoff floor of ~J*eps/h that swamps tiny components
    rng = np.random.default_rng(79)
    for trial in range(12):
        horizon = int(rng.integers(1, 4))
        x0, cfg, t0 = random_instance(rng, horizon)
        seq = ControlSequence(rng.uniform(-0.09, 0.09, size=(horizon, 3)))
        g = ms.gradient(x0, seq, t0, field_at, cfg, table_inertia, substeps=5)
        fd = central_difference_gradient(x0, seq, t0, field_at, cfg, table_inertia, 5)
        assert np.linalg.norm(g - fd) < 1e-4 * np.linalg.norm(fd)


def test_gradient_control_penalty_scales_with_r(field_at, table_inertia):
    rng = np.random.default_rng(83)
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x0 = AttitudeState(q=q, omega=rng.uniform(-0.05, 0.05, size=3))
    x_ref = AttitudeState(q=np.array([0, 0, 0, 1.0]), omega=np.zeros(3))
    seq = ControlSequence(rng.uniform(-0.08, 0.08, size=(2, 3)))
    grads = []
    for r in (1e-4, 1e-3):
        cfg = MpcConfig(q_diag=np.full(7, 10.0), r_diag=np.full(3, r), horizon=2,
                        ts=2.0, u_max=0.1, x_ref=x_ref)
        grads.append(ms.gradient(x0, seq, 0.0, field_at, cfg, table_inertia, substeps=5))
    # trajectory is unchanged by R, so the gradient difference is exactly the
    # control-penalty difference 2*Ts*(R2 - R1)*u
    expected = 2.0 * 2.0 * (1e-3 - 1e-4) * seq.dipoles
    np.testing.assert_allclose(grads[1] - grads[0], expected, rtol=1e-9)


# --- solve ----------------------------------------------------------------------------------

def test_solve_at_reference_returns_zero_control(field_at, detumble_cfg, table_inertia):
    res = ms.solve(detumble_cfg.x_ref, 0.0, field_at, detumble_cfg, table_inertia,
                   substeps=5)
    assert res.cost <= 0.0 + 1e-300
    assert res.zero_cost == 0.0
    assert np.max(np.abs(res.command.m)) <= 1e-6 * detumble_cfg.u_max
    assert not res.degraded
    assert res.iterations == 0


def test_solve_respects_box_and_candidates(field_at, table_inertia):
    rng = np.random.default_rng(89)
    for _ in range(5):
        x0, cfg, t0 = random_instance(rng, horizon=3)
        warm = ControlSequence(rng.uniform(-0.1, 0.1, size=(3, 3)))
        res = ms.solve(x0, t0, field_at, cfg, table_inertia, warm=warm, substeps=5)
        assert np.max(np.abs(res.sequence.dipoles)) <= cfg.u_max
        assert res.cost <= res.zero_cost
        assert res.warm_cost is not None
        assert res.cost <= res.warm_cost


def test_solve_cost_matches_public_cost_function(field_at, table_inertia):
    rng = np.random.default_rng(97)
    x0, cfg, t0 = random_instance(rng, horizon=3)
    res = ms.solve(x0, t0, field_at, cfg, table_inertia, substeps=5)
    traj = ms.predict(x0, res.sequence, field_at, t0, cfg, table_inertia, substeps=5)
    assert ms.total_cost(traj, res.sequence, cfg) == res.cost


def test_solve_deterministic(field_at, table_inertia):
    rng = np.random.default_rng(101)
    x0, cfg, t0 = random_instance(rng, horizon=3)
    r1 = ms.solve(x0, t0, field_at, cfg, table_inertia, substeps=5)
    r2 = ms.solve(x0, t0, field_at, cfg, table_inertia, substeps=5)
    np.testing.assert_array_equal(r1.sequence.dipoles, r2.sequence.dipoles)
    assert r1.cost == r2.cost
    assert r1.iterations == r2.iterations


def test_solve_detumble_first_step_reduces_rates(field_at, detumble_cfg, table_inertia):
    x0 = AttitudeState(
        q=np.array([0, 0, 0, 1.0]),
        omega=np.radians([4.0, 3.0, -3.0]),
    )
    res = ms.solve(x0, 0.0, field_at, detumble_cfg, table_inertia, substeps=5)
    assert np.max(np.abs(res.command.m)) > 0.0
    traj = ms.predict(x0, res.sequence, field_at, 0.0, detumble_cfg, table_inertia,
                      substeps=5)
    assert np.linalg.norm(traj.states[-1].omega) < np.linalg.norm(x0.omega)


def test_solve_degraded_flag_when_capped(field_at, detumble_cfg, table_inertia):
    x0 = AttitudeState(
        q=np.array([0, 0, 0, 1.0]),
        omega=np.radians([4.0, 3.0, -3.0]),
    )
    res = ms.solve(x0, 0.0, field_at, detumble_cfg, table_inertia, substeps=5,
                   max_iterations=1)
    assert res.degraded
    assert res.cost <= res.zero_cost


def test_solve_rejects_warm_start_violating_bound(field_at, detumble_cfg, table_inertia):
    warm = ControlSequence(np.full((10, 3), 0.2))
    with pytest.raises(ValueError):
        ms.solve(detumble_cfg.x_ref, 0.0, field_at, detumble_cfg, table_inertia,
                 warm=warm, substeps=5)


def test_solve_rejects_warm_start_length_mismatch(field_at, detumble_cfg, table_inertia):
    warm = ControlSequence(np.zeros((4, 3)))
    with pytest.raises(ValueError):
        ms.solve(detumble_cfg.x_ref, 0.0, field_at, detumble_cfg, table_inertia,
                 warm=warm, substeps=5)


def test_solve_single_step_beats_quantizer_grid(field_at, table_inertia):
    # the continuous box contains the seven-level grid, so the solver must do
    # at least as well as exhaustive enumeration over it
    rng = np.random.default_rng(103)
    for _ in range(5):
        x0, cfg, t0 = random_instance(rng, horizon=1)
        res = ms.solve(x0, t0, field_at, cfg, table_inertia, substeps=5)
        levels = QuantizerLevels(cfg.u_max).levels
        best_grid = math.inf
        for m in itertools.product(levels, repeat=3):
            seq = ControlSequence(np.array(m).reshape(1, 3))
            traj = ms.predict(x0, seq, field_at, t0, cfg, table_inertia, substeps=5)
            best_grid = min(best_grid, ms.total_cost(traj, seq, cfg))
        assert res.cost <= best_grid + 1e-12 * (1.0 + abs(best_grid))


def test_solve_warm_start_chain(field_at, detumble_cfg, table_inertia):
    # closed-loop style: shifted previous solution is never beaten by the
    # returned cost
    state = AttitudeState(
        q=np.array([0, 0, 0, 1.0]),
        omega=np.radians([4.0, 3.0, -3.0]),
    )
    warm = None
    for k in range(3):
        t = 2.0 * k
        res = ms.solve(state, t, field_at, detumble_cfg, table_inertia, warm=warm,
                       substeps=5)
        if warm is not None:
            assert res.warm_cost is not None
            assert res.cost <= res.warm_cost
        state = ms.propagate(state, res.command, field_at, t, 2.0, 20, table_inertia)
        warm = shift_warm_start(res.sequence)
