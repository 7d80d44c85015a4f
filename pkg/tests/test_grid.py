from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphlim.grid import (Graphon, StepFunction1D, StepFunction2D, UnitGrid, cell_average_1d,
                           cell_average_2d, embed, from_binary, from_csv, gauss_unit,
                           l2_distance_1d, l2_distance_2d, restrict, to_binary, to_csv)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_cells_are_half_open():
    g = UnitGrid(4)
    assert list(g.index([0.0, 0.2499999, 0.25, 0.5, 0.999999])) == [0, 0, 1, 2, 3]
    with pytest.raises(ValueError):
        g.index(1.0)
    with pytest.raises(ValueError):
        g.index(-1e-12)


@pytest.mark.parametrize("q", [1, 2, 4, 7])
def test_gauss_unit_integrates_monomials(q):
    x, w = gauss_unit(q)
    for p in range(2 * q):
        assert np.dot(w, x**p) == pytest.approx(1.0 / (p + 1), abs=1e-14)


def test_quadrature_points_weights_sum_to_one():
    pts, w = UnitGrid(5).quadrature_points(3)
    assert pts.shape == (5, 3)
    assert w.sum() == pytest.approx(1.0)
    assert np.all((pts >= 0) & (pts < 1))


def test_cell_average_1d_of_identity_is_centers():
    f = cell_average_1d(lambda x: x, 8)
    np.testing.assert_allclose(f.values[:, 0], UnitGrid(8).centers, atol=1e-15)


def test_cell_average_2d_matches_antiderivative():
    # int over a cell of x^2 y^3, divided by h^2
    N = 6
    e = UnitGrid(N).edges
    a = (e[1:] ** 3 - e[:-1] ** 3) / 3 * N
    b = (e[1:] ** 4 - e[:-1] ** 4) / 4 * N
    got = cell_average_2d(lambda x, y: x**2 * y**3, N)
    np.testing.assert_allclose(got.values, np.outer(a, b), atol=1e-14)


def test_step_function_evaluation_and_norms():
    f = StepFunction1D(4, [1.0, -2.0, 0.0, 3.0])
    assert f(0.3)[0] == -2.0
    assert f.l2_norm() == pytest.approx(math.sqrt((1 + 4 + 0 + 9) / 4))
    assert f.sup_norm() == 3.0
    K = StepFunction2D(2, [[1.0, 2.0], [3.0, 4.0]])
    assert K(0.7, 0.1) == 3.0
    assert K.l2_norm() == pytest.approx(math.sqrt(30 / 4))
    np.testing.assert_allclose(K.column_mean().values[:, 0], [2.0, 3.0])
    np.testing.assert_allclose(K.row(0.9).values[:, 0], [3.0, 4.0])


def test_embed_and_restrict_invert_refinement():
    rng = np.random.default_rng(1)
    phi, kappa = rng.normal(size=5), rng.normal(size=(5, 5))
    u, K = embed(phi, kappa)
    np.testing.assert_array_equal(restrict(u.refine(3), 5).values, u.values)
    np.testing.assert_allclose(restrict(K.refine(4), 5).values, K.values, atol=1e-15)
    with pytest.raises(ValueError):
        restrict(u.refine(3), 4)


def test_cell_average_of_step_function_is_exact_restriction():
    fine = StepFunction2D(8, np.arange(64.0).reshape(8, 8))
    np.testing.assert_allclose(cell_average_2d(fine, 4).values, restrict(fine, 4).values)


def test_graphon_guards():
    with pytest.raises(ValueError):
        Graphon(lambda x, y: x * y)
    W = Graphon(lambda x, y: 2.0 + 0 * x, bound=1.0)
    with pytest.raises(ValueError, match="bound"):
        cell_average_2d(W, 2)
    bad = Graphon(lambda x, y: np.nan * x, bound=1.0)
    with pytest.raises(ValueError):
        cell_average_2d(bad, 2)


def test_l2_distance_product_kernel_to_its_mean():
    # int (xy - 1/4)^2 = 1/9 - 1/8 + 1/16 = 7/144
    W = Graphon(lambda x, y: x * y, bound=1.0)
    c = StepFunction2D(1, [[0.25]])
    assert l2_distance_2d(W, c) == pytest.approx(math.sqrt(7 / 144), abs=1e-12)


def test_l2_distance_between_step_functions_uses_common_refinement():
    a = StepFunction1D(2, [0.0, 1.0])
    b = StepFunction1D(3, [0.0, 0.0, 0.0])
    assert l2_distance_1d(a, b) == pytest.approx(math.sqrt(0.5))
    c = StepFunction1D(3, [1.0, 1.0, 1.0])
    # |a - c|^2 = 1 on [0, 1/2), 0 elsewhere
    assert l2_distance_1d(a, c) == pytest.approx(math.sqrt(0.5))


@settings(max_examples=40, deadline=None)
@given(values=arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 3)), elements=finite))
def test_csv_and_binary_round_trip_1d(values, tmp_path_factory):
    d = tmp_path_factory.mktemp("rt")
    f = StepFunction1D(values.shape[0], values)
    to_csv(f, d / "f.csv")
    to_binary(f, d / "f.bin")
    np.testing.assert_array_equal(from_csv(d / "f.csv").values, f.values)
    np.testing.assert_array_equal(from_binary(d / "f.bin").values, f.values)


@settings(max_examples=30, deadline=None)
@given(values=st.integers(1, 5).flatmap(lambda n: arrays(float, (n, n), elements=finite)))
def test_csv_and_binary_round_trip_2d(values, tmp_path_factory):
    d = tmp_path_factory.mktemp("rt2")
    K = StepFunction2D(values.shape[0], values)
    to_csv(K, d / "K.csv")
    to_binary(K, d / "K.bin")
    np.testing.assert_array_equal(from_csv(d / "K.csv").values, K.values)
    np.testing.assert_array_equal(from_binary(d / "K.bin").values, K.values)


def test_binary_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        from_binary(p)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4))
def test_restriction_preserves_integral(N, r):
    rng = np.random.default_rng(N * 31 + r)
    fine = StepFunction2D(N * r, rng.normal(size=(N * r, N * r)))
    assert restrict(fine, N).values.mean() == pytest.approx(fine.values.mean(), abs=1e-12)
