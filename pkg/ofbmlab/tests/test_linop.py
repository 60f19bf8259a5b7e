import numpy as np
import pytest
from scipy.linalg import expm

from ofbmlab.services.linop import (
    LinearOperator,
    adjoint,
    dominates,
    mat_pow,
    mat_pow_batch,
    norm_growth_profile,
    operator_norm,
    spectral_bounds,
)
from ofbmlab.utils.exceptions import DomainError, InputError


def test_mat_pow_diagonal_matches_scalar_powers():
    P = mat_pow(4.0, LinearOperator.diag([0.5, 0.75]))
    assert np.allclose(P.entries, np.diag([2.0, 4.0**0.75]), rtol=1e-13)


def test_mat_pow_of_one_is_identity():
    D = LinearOperator(np.array([[0.7, 0.2], [-0.1, 0.6]]))
    assert np.allclose(mat_pow(1.0, D).entries, np.eye(2), atol=1e-15)


def test_mat_pow_agrees_with_expm_for_non_normal_exponent():
    D = LinearOperator(np.array([[0.6, 0.3], [0.0, 0.8]]))
    for c in (1e-4, 0.3, 7.0, 4096.0):
        expected = expm(np.log(c) * D.entries)
        assert np.allclose(mat_pow(c, D).entries, expected, rtol=1e-12, atol=1e-14)


def test_mat_pow_group_law():
    D = LinearOperator(np.array([[0.7, 0.1], [0.2, 0.65]]))
    lhs = mat_pow(6.0, D).entries
    rhs = mat_pow(2.0, D).entries @ mat_pow(3.0, D).entries
    assert np.allclose(lhs, rhs, rtol=1e-12)


def test_mat_pow_batch_matches_single_calls():
    D = LinearOperator(np.array([[0.6, 0.2], [0.0, 0.9]]))
    cs = [0.01, 0.5, 2.0, 100.0]
    batch = mat_pow_batch(cs, D)
    assert batch.shape == (4, 2, 2)
    for c, P in zip(cs, batch):
        assert np.allclose(P, expm(np.log(c) * D.entries), rtol=1e-12)


def test_mat_pow_rejects_nonpositive_base():
    with pytest.raises(DomainError):
        mat_pow(0.0, LinearOperator.identity(2))
    with pytest.raises(DomainError):
        mat_pow(-1.0, LinearOperator.identity(2))


def test_mat_pow_rejects_non_finite_input():
    with pytest.raises(InputError):
        mat_pow(np.inf, LinearOperator.identity(2))
    with pytest.raises(InputError):
        mat_pow(2.0, LinearOperator(np.array([[np.nan, 0.0], [0.0, 1.0]])))


def test_operator_norm_is_largest_singular_value():
    A = LinearOperator(np.array([[3.0, 0.0], [4.0, 5.0]]))
    assert operator_norm(A) == pytest.approx(np.linalg.norm(A.entries, 2), rel=1e-12)


def test_spectral_bounds_use_real_parts():
    rotation = LinearOperator(np.array([[0.7, -0.3], [0.3, 0.7]]))
    bounds = spectral_bounds(rotation)
    assert bounds.lambda_min == pytest.approx(0.7)
    assert bounds.lambda_max == pytest.approx(0.7)
    assert bounds.inside(0.5, 1.0)
    assert not spectral_bounds(LinearOperator.diag([0.4, 0.8])).inside(0.5, 1.0)


def test_adjoint_and_dominates():
    A = LinearOperator(np.array([[1.0, 2.0], [0.0, -1.0]]))
    assert np.array_equal(adjoint(A).entries, A.entries.T)
    assert dominates(LinearOperator.identity(2), A)
    assert not dominates(A, LinearOperator.identity(2))


def test_from_rows_accepts_flat_row_major():
    A = LinearOperator.from_rows([1.0, 2.0, 3.0, 4.0], 2)
    assert np.array_equal(A.entries, [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(InputError):
        LinearOperator.from_rows([1.0, 2.0, 3.0])


def test_norm_growth_profile_stays_bounded():
    D = LinearOperator(np.array([[0.6, 0.2], [0.0, 0.8]]))
    profile = norm_growth_profile(D, delta=0.05)
    assert np.all(np.isfinite(profile["small"]))
    assert profile["small"].max() < 50.0
    assert profile["large"].max() < 50.0


def test_operator_norm_of_shear():
    assert operator_norm(LinearOperator(np.array([[1.0, 1.0], [0.0, 1.0]]))) == pytest.approx(
        np.sqrt((3 + np.sqrt(5)) / 2), abs=1e-12)


def test_spectral_bounds_of_rotation_are_zero():
    bounds = spectral_bounds(LinearOperator(np.array([[0.0, -1.0], [1.0, 0.0]])))
    assert bounds.lambda_min == pytest.approx(0.0, abs=1e-14)
    assert bounds.lambda_max == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("c", [0.1, 3.0, 250.0])
def test_spectral_bounds_of_diagonal_power(c):
    bounds = spectral_bounds(mat_pow(c, LinearOperator.diag([0.6, 0.8])))
    expected = sorted([c**0.6, c**0.8])
    assert bounds.lambda_min == pytest.approx(expected[0], rel=1e-12)
    assert bounds.lambda_max == pytest.approx(expected[1], rel=1e-12)


def test_norm_is_submultiplicative_and_sandwiched():
    rng = np.random.default_rng(21)
    for d in (2, 3, 5):
        for _ in range(50):
            A = LinearOperator(rng.standard_normal((d, d)))
            B = LinearOperator(rng.standard_normal((d, d)))
            assert operator_norm(A @ B) <= operator_norm(A) * operator_norm(B) + 1e-12
            largest = np.max(np.abs(A.entries))
            assert largest <= operator_norm(A) + 1e-12
            assert operator_norm(A) <= d**1.5 * largest + 1e-12
