import numpy as np
import pytest

from ofbmlab.services import approx, corr, gaussgen
from ofbmlab.services.hermite import HermiteCoefficientTable, MultiIndex, NonlinearFunctional
from ofbmlab.services.linop import LinearOperator
from ofbmlab.services.stats import cov_estimate
from ofbmlab.utils.exceptions import ContractError, DomainError, InputError, ModelDomainError


@pytest.fixture
def seq(ofgn_diag):
    return gaussgen.synthesize(ofgn_diag, 64, seed=9)


@pytest.fixture
def cubic_table():
    return HermiteCoefficientTable(2, 6, {MultiIndex((3, 0)): np.array([1.0, 0.0])})


def _spec(G, model, D, N, replicates, **kwargs):
    return approx.EnsembleSpec(G=G, model=model, D=D, N=N, replicates=replicates, master_seed=17, **kwargs)


def test_step_counts_floor_with_round_off():
    assert list(approx.step_counts(10, [0.0, 0.3, 0.7, 1.0])) == [0, 3, 7, 10]
    with pytest.raises(DomainError):
        approx.step_counts(10, [1.5])


def test_reduced_path_of_identity_is_full_path(identity_table, seq, diag_D):
    times = approx.default_times(64)
    G = NonlinearFunctional.from_table(identity_table)
    full = approx.partial_sum_path(G, seq, diag_D, times)
    assert np.array_equal(approx.reduced_path(identity_table, 1, seq, diag_D, times), full)
    assert np.all(approx.tail_path(identity_table, 1, seq, diag_D, times) == 0.0)


def test_band_partition_is_exact(acceptance_table, seq, diag_D):
    times = approx.default_times(64)
    full = approx.partial_sum_path(NonlinearFunctional.from_table(acceptance_table), seq, diag_D, times)
    head = approx.reduced_path(acceptance_table, 1, seq, diag_D, times)
    tail = approx.tail_path(acceptance_table, 1, seq, diag_D, times)
    assert np.allclose(head + tail, full, atol=1e-12)
    assert not np.allclose(tail, 0.0)


def test_paths_start_at_zero(acceptance_table, seq, diag_D):
    times = approx.default_times(64)
    assert np.all(approx.partial_sum_path(NonlinearFunctional.from_table(acceptance_table), seq, diag_D, times)[0] == 0)
    assert np.all(approx.tail_path(acceptance_table, 1, seq, diag_D, times)[0] == 0)


def test_single_high_order_term(cubic_table, seq, diag_D):
    times = approx.default_times(64)
    full = approx.partial_sum_path(NonlinearFunctional.from_table(cubic_table), seq, diag_D, times)
    assert np.allclose(approx.tail_path(cubic_table, 1, seq, diag_D, times), full)
    with pytest.raises(DomainError):
        approx.reduced_path(cubic_table, 1, seq, diag_D, times)


def test_partial_sum_path_needs_mean_zero(seq, diag_D):
    offset = HermiteCoefficientTable(2, 2, {MultiIndex((0, 0)): np.array([1.0, 0.0])})
    with pytest.raises(ContractError):
        approx.partial_sum_path(NonlinearFunctional.from_table(offset), seq, diag_D, approx.default_times(64))


def test_single_replicate_reproduces_partial_sum_path(identity_table, ofgn_diag, diag_D):
    G = NonlinearFunctional.from_table(identity_table)
    ens = approx.ensemble(_spec(G, ofgn_diag, diag_D, 32, 1))
    seed = ens.meta["seeds"][0]
    path = approx.partial_sum_path(G, gaussgen.synthesize(ofgn_diag, 32, seed), diag_D, approx.default_times(32))
    assert np.allclose(ens.paths[0], path)
    assert ens.meta["N"] == 32
    assert ens.meta["model_id"] == ofgn_diag.model_id


def test_ensemble_identical_across_thread_counts(acceptance_table, ofgn_diag, diag_D):
    G = NonlinearFunctional.from_table(acceptance_table)
    one = approx.ensemble_bands(_spec(G, ofgn_diag, diag_D, 64, 12), threads=1)
    four = approx.ensemble_bands(_spec(G, ofgn_diag, diag_D, 64, 12), threads=4)
    for band in ("full", "head_m", "tail_m"):
        assert np.array_equal(one[band].paths, four[band].paths)
        assert one[band].meta == four[band].meta


def test_identity_covariance_is_exact_at_every_n(identity_table, ofgn_diag, diag_D):
    G = NonlinearFunctional.from_table(identity_table)
    for N in (16, 128):
        assert np.allclose(approx.band_covariance(identity_table, ofgn_diag, N), np.eye(2), atol=1e-10)
        ens = approx.ensemble(_spec(G, ofgn_diag, diag_D, N, 400))
        est = cov_estimate(ens, 1.0)
        assert np.all(np.abs(est.cov - np.eye(2)) <= 3.5 * est.se)


def test_tail_energy_ratio_decreases(acceptance_table, ofgn_diag):
    ratios = [approx.tail_energy_ratio(acceptance_table, ofgn_diag, N, 1) for N in (256, 1024, 4096)]
    assert ratios[0] > ratios[1] > ratios[2]
    # the H_3 term decays like N^{-0.2}
    assert ratios[2] == pytest.approx(0.75 * 4096**-0.2, rel=0.05)


def test_monte_carlo_tail_energy_matches_exact(acceptance_table, ofgn_diag, diag_D):
    N, R = 256, 400
    G = NonlinearFunctional.from_table(acceptance_table)
    bands = approx.ensemble_bands(_spec(G, ofgn_diag, diag_D, N, R), ("tail_m",))
    energy = np.sum(bands["tail_m"].values_at(1.0) ** 2, axis=1)
    exact = np.trace(approx.band_covariance(acceptance_table, ofgn_diag, N, "tail_m", 1))
    assert abs(energy.mean() - exact) <= 3 * energy.std(ddof=1) / np.sqrt(R)


def test_band_covariance_needs_diagonal_model(acceptance_table):
    D = LinearOperator(np.array([[0.7, 0.1], [0.0, 0.8]]))
    model = corr.ofgn_model(D, np.array([[1.0, 0.3], [0.3, 1.0]]))
    with pytest.raises(ModelDomainError):
        approx.band_covariance(acceptance_table, model, 16)


def test_sum_covariance_ratio_is_one_for_identity(identity_table, ofgn_diag):
    assert approx.sum_covariance_ratio(identity_table, ofgn_diag, 512) == pytest.approx(1.0, rel=1e-9)


def test_ensemble_spec_validation(identity_table, ofgn_diag, diag_D):
    G = NonlinearFunctional.from_table(identity_table)
    with pytest.raises(DomainError):
        _spec(G, ofgn_diag, diag_D, 16, 0)
    with pytest.raises(InputError):
        _spec(G, ofgn_diag, diag_D, 16, 2, band="middle")
    with pytest.raises(InputError):
        _spec(G, ofgn_diag, LinearOperator.diag([0.7]), 16, 2)


def test_increments_are_stationary_in_law(acceptance_table, ofgn_diag, diag_D):
    G = NonlinearFunctional.from_table(acceptance_table)
    ens = approx.ensemble(_spec(G, ofgn_diag, diag_D, 64, 400))
    early = ens.values_at(0.25) - ens.values_at(0.0)
    late = ens.values_at(0.75) - ens.values_at(0.5)
    R = early.shape[0]
    for i in range(2):
        for j in range(2):
            # paired per-replicate difference of the two second moments
            w = early[:, i] * early[:, j] - late[:, i] * late[:, j]
            assert abs(w.mean()) <= 3.5 * w.std(ddof=1) / np.sqrt(R), (i, j)


def test_ensemble_means_are_zero(acceptance_table, ofgn_diag, diag_D):
    G = NonlinearFunctional.from_table(acceptance_table)
    ens = approx.ensemble(_spec(G, ofgn_diag, diag_D, 64, 400))
    for t in (0.25, 0.5, 1.0):
        X = ens.values_at(t)
        se = X.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
        assert np.all(np.abs(X.mean(axis=0)) <= 3.5 * se), t
