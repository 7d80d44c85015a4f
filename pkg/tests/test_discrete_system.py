from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from graphlim.discrete_system import (DiscreteState, MonitorWarning, SolverAbort,
                                      discrete_assumption_check, duhamel_check, integrate, rhs)
from graphlim.envelopes import AprioriEnvelope
from graphlim.grid import Graphon, StepFunction1D, StepFunction2D, UnitGrid, cell_average_1d, cell_average_2d, embed
from graphlim.model_defs import (ForcingField, InteractionKernel, ModelSpec, WeightLaw,
                                 hnp_model, kuramoto_adaptive)

KUR = kuramoto_adaptive(0.5, 0.3, 0.2, 0.5)
W = Graphon(lambda x, y: np.exp(-(x - y) ** 2), bound=1.0)


def _state(N, u0=lambda x: 2 * np.pi * x):
    return DiscreteState(0.0, cell_average_1d(u0, N), cell_average_2d(W, N))


def _kuramoto_rhs(N, omega=0.5, alpha=0.3, beta=0.2, eps=0.5):
    def f(t, y):
        phi, kappa = y[:N], y[N:].reshape(N, N)
        diff = phi[None, :] - phi[:, None]          # phi_l - phi_k
        dphi = omega + np.mean(kappa * (-np.sin(diff + alpha)), axis=1)
        dk = -eps * (np.sin(phi[:, None] - phi[None, :] + beta) + kappa)
        return np.concatenate([dphi, dk.ravel()])
    return f


def test_rhs_matches_hand_coded_kuramoto():
    s = _state(5)
    du, dK = rhs(KUR, s)
    y = np.concatenate([s.u.values[:, 0], s.K.values.ravel()])
    ref = _kuramoto_rhs(5)(0.0, y)
    np.testing.assert_allclose(du[:, 0], ref[:5], atol=1e-14)
    np.testing.assert_allclose(dK.ravel(), ref[5:], atol=1e-14)


def test_integrate_matches_high_order_reference():
    N = 6
    s = _state(N)
    traj = integrate(KUR, s, 1.0, 1e-3, store_every=100)
    y0 = np.concatenate([s.u.values[:, 0], s.K.values.ravel()])
    sol = solve_ivp(_kuramoto_rhs(N), (0, 1), y0, method="DOP853", rtol=1e-12, atol=1e-13,
                    t_eval=traj.times)
    np.testing.assert_allclose(traj.u[:, :, 0], sol.y[:N].T, atol=1e-10)
    np.testing.assert_allclose(traj.K.reshape(len(traj.times), -1), sol.y[N:].T, atol=1e-10)


def test_rk4_step_halving_ratio_is_fourth_order():
    s = _state(8)
    finals = [integrate(KUR, s, 1.0, dt, monitor=False) for dt in (0.1, 0.05, 0.025)]
    d1 = np.abs(finals[0].u[-1] - finals[1].u[-1]).max() + np.abs(finals[0].K[-1] - finals[1].K[-1]).max()
    d2 = np.abs(finals[1].u[-1] - finals[2].u[-1]).max() + np.abs(finals[1].K[-1] - finals[2].K[-1]).max()
    assert 12 <= d1 / d2 <= 20


def test_storage_schedule_includes_final_time():
    traj = integrate(KUR, _state(4), 0.35, 0.01, store_every=10)
    np.testing.assert_allclose(traj.times, [0.0, 0.1, 0.2, 0.3, 0.35], atol=1e-12)
    assert traj.u.shape == (5, 4, 1) and traj.K.shape == (5, 4, 4)


def test_synchronous_state_stays_synchronous():
    # equal phases and constant weights: every oscillator follows the same ODE
    phi0 = np.full(4, 0.7)
    u, K = embed(phi0, np.full((4, 4), 0.5))
    traj = integrate(KUR, DiscreteState(0.0, u, K), 1.0, 1e-2)
    assert np.ptp(traj.u[-1]) < 1e-14
    assert np.ptp(traj.K[-1]) < 1e-14


def test_envelope_monitors_hold_on_kuramoto():
    traj = integrate(KUR, _state(8), 2.0, 1e-2)
    assert traj.monitors_ok


def _linear_growth_model(B=1.0):
    return ModelSpec(
        g=InteractionKernel(lambda t, xi, eta: np.ones(np.broadcast_shapes(xi.shape, eta.shape)),
                            B_g=1.0, L_g=0.0),
        f=ForcingField(lambda t, x, u: B * (1.0 + u(x)), B_f=B, L_f=B, explicit_position=False),
        lam=WeightLaw(lambda t, x, y, K, u: B * (1.0 + K(x, y)), B_Lambda=B, L_Lambda=B,
                      explicit_position=False),
        name="linear_growth",
    )


def test_equal_rate_envelope_on_a_saturating_solution():
    # K follows its envelope exactly; 1 + u(1) = 2e + 1 exceeds e + 2
    m = _linear_growth_model()
    u, K = embed(np.zeros(3), np.ones((3, 3)))
    traj = integrate(m, DiscreteState(0.0, u, K), 1.0, 1e-3, store_every=100)
    assert traj.monitors_ok
    assert traj.K[-1, 0, 0] == pytest.approx(2 * math.e - 1, rel=1e-12)
    assert 1 + traj.u[-1, 0, 0] == pytest.approx(2 * math.e + 1, rel=1e-12)
    assert 1 + traj.u[-1, 0, 0] > math.e + 2


def test_monitor_violation_warns_without_aborting():
    m = ModelSpec(
        g=KUR.g,
        f=ForcingField(lambda t, x, u: np.full(np.shape(x) + (1,), 5.0), B_f=0.0, L_f=0.0,
                       explicit_position=False),
        lam=KUR.lam,
    )
    with pytest.warns(MonitorWarning):
        traj = integrate(m, _state(4), 0.5, 0.05)
    assert not traj.monitors_ok
    assert traj.times[-1] == pytest.approx(0.5)


def test_pole_aborts_with_last_finite_time():
    pole = ForcingField(lambda t, x, u: np.full(np.shape(x) + (1,), np.sqrt(0.3 - t)),
                        B_f=1.0, L_f=0.0, explicit_position=False)
    m = ModelSpec(g=KUR.g, f=pole, lam=KUR.lam)
    with pytest.raises(SolverAbort) as info:
        integrate(m, _state(4), 1.0, 0.01, store_every=7)
    exc = info.value
    assert exc.diagnostic["field"] == "u"
    # sqrt(0.3 - t) is still finite at t = 0.3; the first RK4 stage past it is not
    assert exc.diagnostic["last_finite_time"] == pytest.approx(0.3)
    assert exc.trajectory.aborted
    assert exc.trajectory.times[-1] == pytest.approx(0.3)
    assert np.all(np.isfinite(exc.trajectory.u))


def test_integrate_rejects_bad_arguments():
    with pytest.raises(ValueError):
        integrate(KUR, _state(4), 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate(KUR, _state(4), 1.0, 0.1, store_every=0)
    bad = DiscreteState(0.0, StepFunction1D(2, np.ones((2, 2))), StepFunction2D(2, np.ones((2, 2))))
    with pytest.raises(ValueError):
        integrate(KUR, bad, 1.0, 0.1)


def test_duhamel_formula_matches_direct_weights():
    m = hnp_model(np.sin, 0.5, [0.1, -0.2, 0.3, 0.0], Gamma_bound=1.0, Gamma_lipschitz=1.0)
    s = DiscreteState(0.0, cell_average_1d(lambda x: 2 * np.pi * x, 4),
                      cell_average_2d(lambda x, y: 0.5 + 0.5 * np.cos(np.pi * (x - y)), 4))
    traj = integrate(m, s, 1.0, 5e-4)
    assert duhamel_check(np.sin, 0.5, traj) <= 5e-6
    with pytest.raises(ValueError):
        duhamel_check(np.sin, 0.5, integrate(KUR, _state(4), 0.1, 0.01))


def test_results_do_not_depend_on_storage_cadence():
    a = integrate(KUR, _state(8), 0.5, 0.01, store_every=1)
    b = integrate(KUR, _state(8), 0.5, 0.01, store_every=25)
    np.testing.assert_array_equal(a.u[-1], b.u[-1])
    np.testing.assert_array_equal(a.K[-1], b.K[-1])


def test_trajectory_csv_layout(tmp_path):
    traj = integrate(KUR, _state(3), 0.2, 0.1)
    pu, pK = traj.write_csv(tmp_path)
    rows = pu.read_text().splitlines()
    assert rows[0] == "t,u_0,u_1,u_2"
    assert len(rows) == 1 + len(traj.times)
    assert len(pK.read_text().splitlines()[1].split(",")) == 1 + 9
    assert traj.manifest()["monitor_flags"] == [True] * 3


@pytest.mark.parametrize("N", [2, 5, 8])
def test_discrete_bounds_hold_for_kuramoto(N):
    rep = discrete_assumption_check(KUR, UnitGrid(N), n_samples=200, seed=N)
    assert rep.passed, rep.ratios


def test_weight_rate_sum_needs_the_squared_cell_count():
    # kappa = 0 and a phase lag of pi/2 make every cell rate equal to -eps cos(phi_k - phi_l);
    # for equal phases sum |Lambda_kl|^2 = eps^2 N^2, above eps^2 N for N > 1
    m = kuramoto_adaptive(0.0, 0.0, np.pi / 2, 0.5)
    N = 6
    u, K = embed(np.zeros(N), np.zeros((N, N)))
    _, dK = rhs(m, DiscreteState(0.0, u, K))
    total = float(np.sum(dK**2))
    assert total == pytest.approx(0.25 * N**2)
    assert total > 0.25 * N
    rep = discrete_assumption_check(m, UnitGrid(N), n_samples=200, seed=1)
    assert rep.passed
    assert rep.informational["stated_lambda_sum"] >= 1.0


def test_envelope_matches_closed_form_helper():
    s = _state(4, lambda x: 0 * x + 1.0)
    env = AprioriEnvelope(B_f=0.5, B_g=1.0, B_Lambda=0.5, u_t0=1.0, K_t0=s.K.sup_norm())
    rec = integrate(KUR, s, 0.2, 0.1).monitors[-1]
    assert rec.K_bound == pytest.approx(float(env.K_bound(0.2)), rel=1e-14)
    assert rec.u_bound == pytest.approx(float(env.u_bound(0.2)), rel=1e-14)
