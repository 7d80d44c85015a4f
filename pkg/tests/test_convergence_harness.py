from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graphlim.continuum_solver import mol_solve
from graphlim.convergence_harness import (CSV_COLUMNS, StudyConfig, fit_rate, gronwall_envelope,
                                          residuals, run_study)
from graphlim.discrete_system import SolverAbort
from graphlim.grid import Graphon, cell_average_1d, cell_average_2d
from graphlim.model_defs import (ForcingField, InteractionKernel, ModelSpec, WeightLaw,
                                 kuramoto_adaptive)

KUR = kuramoto_adaptive(0.5, 0.3, 0.2, 0.5)
ZERO_C = {"L_g": 0.0, "L_f": 0.0, "L_Lambda": 0.0, "B_g": 0.0}


def _position_model():
    # f(t, x, u) = x, Lambda(t, x, y) = x + y, no interaction
    return ModelSpec(
        g=InteractionKernel(lambda t, a, b: 0 * (a + b), 0.0, 0.0),
        f=ForcingField(lambda t, x, u: np.asarray(x)[..., None] + 0 * u(x), 1.0, 0.0),
        lam=WeightLaw(lambda t, x, y, K, u: x + y + 0 * K(x, y), 2.0, 0.0),
    )


def test_envelope_examples():
    assert gronwall_envelope(ZERO_C, 0.0, 0.0, 1.0, 3.0) == 0.0
    # exponent (B_g + 1) T = 2
    c = dict(ZERO_C, B_g=1.0)
    assert gronwall_envelope(c, 1e-4, 0.0, 1.0, 0.0) == pytest.approx(1e-4 * math.e**2)
    with pytest.raises(ValueError):
        gronwall_envelope(c, -1.0, 0.0, 1.0, 0.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 2), st.floats(0, 2), st.floats(0.01, 1))
def test_envelope_is_monotone(init, res, T, ksup, bump):
    c = KUR.constants
    base = gronwall_envelope(c, init, res, T, ksup)
    for args in ((init + bump, res, T, ksup), (init, res + bump, T, ksup),
                 (init, res, T + bump, ksup), (init, res, T, ksup + bump)):
        assert gronwall_envelope(c, *args) >= base


def test_fit_rate_examples():
    fit = fit_rate([(N, 1.0 / N**2) for N in (8, 16, 32)])
    assert fit.slope == pytest.approx(-1.0, abs=1e-12) and fit.r2 == pytest.approx(1.0)
    assert fit_rate([(N, 0.3) for N in (4, 8, 16)]).slope == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    noisy = [(N, 2.0 * N**-2.0 * (1 + 0.01 * rng.standard_normal())) for N in (4, 8, 16, 32, 64)]
    assert -1.05 <= fit_rate(noisy).slope <= -0.95


def test_fit_rate_drops_nonpositive_and_needs_three_points():
    with pytest.warns(UserWarning):
        fit = fit_rate([(4, 0.0), (8, 1 / 64), (16, 1 / 256), (32, 1 / 1024)])
    assert fit.slope == pytest.approx(-1.0)
    with pytest.warns(UserWarning):
        assert fit_rate([(4, 1.0), (8, -1.0), (16, 0.1)]) is None


def test_residuals_of_identity_forcing():
    m = _position_model()
    M = 64
    ref = mol_solve(m, cell_average_1d(lambda x: 0 * x, M), cell_average_2d(lambda x, y: 0 * x, M),
                    0.1, 0.05, monitor=False)
    for N in (2, 4, 16):
        r, R = residuals(m, ref, N)
        np.testing.assert_allclose(r, 1.0 / (2 * math.sqrt(3) * N), rtol=1e-12)
        # x + y has deviation (x - x_k) + (y - y_l): two orthogonal copies
        np.testing.assert_allclose(R, math.sqrt(2) / (2 * math.sqrt(3) * N), rtol=1e-12)
    with pytest.raises(ValueError):
        residuals(m, ref, 3)


def test_position_free_laws_have_zero_residuals():
    m = ModelSpec(
        g=KUR.g,
        f=ForcingField(lambda t, x, u: np.full(np.shape(x) + (1,), np.cos(t)), 1.0, 0.0),
        lam=WeightLaw(lambda t, x, y, K, u: np.full(np.broadcast_shapes(np.shape(x), np.shape(y)),
                                                    0.3 * t), 1.0, 0.0),
    )
    ref = mol_solve(m, cell_average_1d(lambda x: 2 * np.pi * x, 16),
                    cell_average_2d(lambda x, y: np.exp(-(x - y) ** 2), 16), 0.1, 0.05,
                    monitor=False)
    r, R = residuals(m, ref, 4)
    assert np.all(r <= 1e-14) and np.all(R <= 1e-14)


@pytest.mark.filterwarnings("ignore:dropped")
def test_homogeneous_study_is_exact():
    cfg = StudyConfig(KUR, Graphon(lambda x, y: 0.6 + 0 * x, bound=1.0), lambda x: 0 * x + 0.3,
                      N_list=(2, 4, 8), M_ref=32, T=0.5, dt=0.01, store_every=10)
    with pytest.warns(UserWarning, match="no rate"):
        rep = run_study(cfg)
    assert rep.fit is None
    assert all(r.e_sup <= 1e-10 for r in rep.rows)


def _small_cfg(**kw):
    base = dict(model=KUR, W=Graphon(lambda x, y: np.exp(-(x - y) ** 2), bound=1.0),
                u0=lambda x: 2 * np.pi * x, N_list=(2, 4, 8), M_ref=32, T=0.3, dt=0.01,
                store_every=5)
    base.update(kw)
    return StudyConfig(**base)


def test_small_study_converges_under_its_envelope(tmp_path):
    rep = run_study(_small_cfg())
    assert rep.strictly_decreasing and rep.envelope_dominates and rep.reference_monitors_ok
    assert rep.reduction < 0.1
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert [ln.split(",")[0] for ln in lines[1:]] == ["2", "4", "8"]
    summary = rep.summary("abc")
    assert summary["config_hash"] == "abc" and summary["slope"] < 0


def test_thread_count_does_not_change_results():
    a = run_study(_small_cfg(), threads=1)
    b = run_study(_small_cfg(), threads=3)
    assert [r.e_sup for r in a.rows] == [r.e_sup for r in b.rows]
    assert [r.envelope for r in a.rows] == [r.envelope for r in b.rows]


def test_reference_abort_is_fatal():
    pole = ForcingField(lambda t, x, u: np.full(np.shape(x) + (1,), np.sqrt(0.1 - t)),
                        1.0, 0.0, explicit_position=False)
    m = ModelSpec(g=KUR.g, f=pole, lam=KUR.lam)
    with pytest.raises(SolverAbort):
        run_study(_small_cfg(model=m))


@pytest.mark.parametrize("kw", [dict(N_list=(3, 4)), dict(M_ref=16, N_list=(2, 8)),
                                dict(N_list=()), dict(dt=0.0)])
def test_study_config_validation(kw):
    with pytest.raises(ValueError):
        _small_cfg(**kw)
