import numpy as np
import pytest

from ofbmlab.services import corr
from ofbmlab.services.linop import LinearOperator
from ofbmlab.utils.exceptions import DomainError, InputError, ModelDomainError


def test_ofgn_scalar_lag_one(ofgn_scalar):
    assert ofgn_scalar.lag(1)[0, 0] == pytest.approx(0.5 * (2**1.5 - 2), rel=1e-12)
    assert ofgn_scalar.lag(1)[0, 0] == pytest.approx(0.41421, abs=1e-5)


def test_ofgn_lag_zero_is_gamma(ofgn_diag):
    assert np.allclose(ofgn_diag.lag(0), np.eye(2))


def test_negative_lags_are_transposes():
    D = LinearOperator(np.array([[0.7, 0.1], [0.0, 0.8]]))
    model = corr.ofgn_model(D, np.array([[1.0, 0.3], [0.3, 1.0]]))
    assert np.allclose(model.lag(-3), model.lag(3).T)


def test_ofgn_rejects_exponent_outside_long_memory_box():
    with pytest.raises(ModelDomainError):
        corr.ofgn_model(LinearOperator.diag([0.4, 0.8]), np.eye(2))
    model = corr.ofgn_model(LinearOperator.diag([0.4, 0.8]), np.eye(2), long_memory=False)
    assert model.family == "ofgn"


def test_ofgn_rejects_indefinite_gamma(diag_D):
    with pytest.raises(InputError):
        corr.ofgn_model(diag_D, np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("N", [10, 100, 1000])
def test_double_sum_telescopes(ofgn_diag, N):
    expected = np.diag([N**1.2, N**1.6])
    error = np.linalg.norm(corr.double_sum(ofgn_diag, N) - expected) / np.linalg.norm(expected)
    assert error < 1e-8


def test_double_sum_of_white_noise():
    model = corr.white_noise_model(np.diag([2.0, 3.0]), LinearOperator.diag([0.5, 0.5]))
    assert np.allclose(corr.double_sum(model, 100), 100 * np.diag([2.0, 3.0]))
    with pytest.raises(DomainError):
        corr.double_sum(model, 0)


def test_block_toeplitz_layout(ofgn_diag):
    T = corr.block_toeplitz(ofgn_diag, 3)
    assert T.shape == (6, 6)
    assert np.allclose(T, T.T)
    assert np.allclose(T[0:2, 4:6], ofgn_diag.lag(2))
    assert np.allclose(T[4:6, 0:2], ofgn_diag.lag(2).T)


def test_embedding_is_psd_for_shipped_model(ofgn_diag):
    ok, smallest = corr.check_psd(ofgn_diag, 4096)
    assert ok
    assert smallest >= -1e-8


def test_embedding_size_is_power_of_two():
    assert corr.embedding_size(1) == 2
    assert corr.embedding_size(5) == 8
    assert corr.embedding_size(4096) == 8192


def test_condition_h_passes_for_ofgn(ofgn_diag):
    report = corr.check_condition_h(ofgn_diag, 1, [64, 256, 1024, 4096])
    assert report.passes_sum_bound
    assert report.passes_decay
    assert report.passes_exact_asymptotic
    assert report.passed


def test_condition_h_white_noise_fails_exact_asymptotic(diag_D):
    model = corr.white_noise_model(np.eye(2), diag_D)
    report = corr.check_condition_h(model, 1, [64, 256, 1024, 4096])
    assert report.passes_sum_bound
    assert report.passes_decay
    assert not report.passes_exact_asymptotic


def test_condition_h_input_checks(ofgn_diag):
    with pytest.raises(InputError):
        corr.check_condition_h(ofgn_diag, 1, [])
    with pytest.raises(DomainError):
        corr.check_condition_h(ofgn_diag, 0, [16])


def test_table_model_zero_beyond_last_lag(diag_D):
    lags = [np.eye(2), 0.25 * np.eye(2)]
    model = corr.table_model(lags, diag_D, np.eye(2))
    assert np.allclose(model.lag(1), 0.25 * np.eye(2))
    assert np.allclose(model.lag(5), 0.0)


def test_model_document_round_trip(tmp_path, ofgn_diag):
    path = tmp_path / "model.json"
    ofgn_diag.save(path)
    loaded = corr.load_model(path)
    assert loaded.model_id == ofgn_diag.model_id
    assert np.allclose(loaded.lags(20), ofgn_diag.lags(20))


def test_model_from_document_rejects_missing_fields():
    with pytest.raises(InputError):
        corr.model_from_document({"dim": 2, "D": [0.6, 0, 0, 0.8]})


def test_short_memory_half_exponent_is_white():
    model = corr.ofgn_model(LinearOperator.diag([0.5]), np.eye(1), long_memory=False)
    assert model.lag(0)[0, 0] == pytest.approx(1.0, rel=1e-12)
    for n in range(1, 11):
        assert abs(model.lag(n)[0, 0]) < 1e-12


def test_half_exponent_needs_short_memory_flag():
    with pytest.raises(ModelDomainError):
        corr.ofgn_model(LinearOperator.diag([0.5]), np.eye(1))
