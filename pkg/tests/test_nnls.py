import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls as scipy_nnls

from pulsedint._nnls import RankDeficientError, nnls


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 14), st.integers(1, 14), st.integers(0, 2**32 - 1))
def test_matches_reference_solver(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    try:
        x, rnorm, _ = nnls(A, b)
    except RankDeficientError:
        return
    ref, _ = scipy_nnls(A, b)
    assert np.all(x >= 0)
    # compare achieved residuals; the reference's reported norm is not always exact
    assert rnorm <= np.linalg.norm(A @ ref - b) + 1e-9
    assert rnorm == pytest.approx(np.linalg.norm(A @ x - b))


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 12), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_kkt_conditions(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    try:
        x, _, passive = nnls(A, b)
    except RankDeficientError:
        return
    grad = A.T @ (b - A @ x)
    scale = np.linalg.norm(A, axis=0) * max(1.0, np.linalg.norm(b))
    assert np.all(grad[~passive] <= 1e-8 * scale[~passive])
    assert np.all(np.abs(grad[passive]) <= 1e-8 * scale[passive])


def test_unconstrained_solution_is_returned_when_positive():
    A = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    x_true = np.array([0.5, 1.5])
    x, rnorm, passive = nnls(A, A @ x_true)
    np.testing.assert_allclose(x, x_true, atol=1e-12)
    assert rnorm < 1e-12 and passive.all()


def test_negative_direction_is_clamped():
    x, _, _ = nnls(np.eye(2), np.array([1.0, -1.0]))
    np.testing.assert_allclose(x, [1.0, 0.0])


def test_zero_column_stays_zero():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    x, _, passive = nnls(A, np.array([1.0, 1.0]))
    np.testing.assert_allclose(x, [1.0, 0.0])
    assert not passive[1]


def test_ties_go_to_lowest_index():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    x, _, _ = nnls(A, np.array([1.0, 1.0]))
    np.testing.assert_allclose(x, [1.0, 0.0])


def test_rank_deficient_active_set_raises():
    A = np.array([[1.0, 1.0], [0.0, 1e-13]])
    b = np.array([2.0, 1e-13])
    # a near-parallel column only enters when the stopping tolerance is off
    with pytest.raises(RankDeficientError) as info:
        nnls(A, b, tol=0.0)
    assert info.value.condition > 1e12


def test_shape_and_finiteness_checks():
    with pytest.raises(ValueError):
        nnls(np.ones((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        nnls(np.array([[np.nan]]), np.ones(1))
