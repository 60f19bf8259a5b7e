"""
Approximating processes built from partial sums of a nonlinear functional.

Z_N(t) = N^{-D} sum_{i <= floor(N t)} G(X_i), the reduced path keeps only the
order-m band of G's Hermite expansion and the tail path keeps orders above m.
Paths are step functions of t and vanish for t < 1/N.
"""

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ofbmlab.models import GaussianSequence, PathEnsemble
from ofbmlab.services.corr import CorrelationModel, normalization_target
from ofbmlab.services.gaussgen import synthesize
from ofbmlab.services.hermite import (
    HermiteCoefficientTable,
    NonlinearFunctional,
    evaluate_truncated,
    hermite_rank,
)
from ofbmlab.services.linop import LinearOperator, mat_pow, operator_norm
from ofbmlab.utils.constants import BANDS
from ofbmlab.utils.exceptions import ContractError, DomainError, InputError, ModelDomainError
from ofbmlab.utils.logger import logger
from ofbmlab.utils.pool import map_ordered
from ofbmlab.utils.rng import derive_seed


def default_times(N: int) -> np.ndarray:
    """The grid {k / N : k = 0..N}."""
    return np.arange(N + 1, dtype=float) / N


def step_counts(N: int, times) -> np.ndarray:
    """floor(N t) for every t, robust to k/N round-off."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > 1):
        raise DomainError("times must lie in [0, 1]")
    return np.floor(N * times + 1e-9).astype(int)


def table_id(table: HermiteCoefficientTable) -> str:
    payload = json.dumps(table.to_document(), sort_keys=True).encode("utf-8")
    return hashlib.sha1(payload).hexdigest()[:16]


def _normalized_path(Y: np.ndarray, D: LinearOperator, times) -> np.ndarray:
    N = Y.shape[0]
    sums = np.vstack([np.zeros((1, Y.shape[1])), np.cumsum(Y, axis=0)])
    scale = mat_pow(N, -D).entries
    return sums[step_counts(N, times)] @ scale.T


def _band_range(table: HermiteCoefficientTable, band: str, m: int) -> Optional[tuple[int, int]]:
    """Order range of a band, None when the band is empty by construction."""
    if band == "full":
        return 0, table.max_order
    if band == "head_m":
        return m, m
    if band == "tail_m":
        return (m + 1, table.max_order) if m < table.max_order else None
    raise InputError(f"unknown band {band!r}; choose from {BANDS}")


def _mean_zero_table(table: HermiteCoefficientTable) -> None:
    if not table.is_mean_zero():
        logger.error(f"Coefficient table has nonzero order-0 term {table.order_zero()}")
        raise ContractError("path operators need a mean-zero functional")


def partial_sum_path(G: NonlinearFunctional, seq: GaussianSequence, D: LinearOperator, times) -> np.ndarray:
    """
    Z_N(t) on ``times`` with N the sequence length; shape (T, d).

    Raises:
        ContractError: when G is not mean-zero.
    """
    G.check_mean_zero()
    return _normalized_path(G(seq.values), D, times)


def band_path(table: HermiteCoefficientTable, band: str, m: int, seq: GaussianSequence,
              D: LinearOperator, times) -> np.ndarray:
    _mean_zero_table(table)
    orders = _band_range(table, band, m)
    if orders is None:
        return np.zeros((np.size(times), table.dim))
    return _normalized_path(evaluate_truncated(table, seq.values, *orders), D, times)


def reduced_path(table: HermiteCoefficientTable, m: Optional[int], seq: GaussianSequence,
                 D: LinearOperator, times) -> np.ndarray:
    """
    Z_{N,m}(t): the order-m band of G summed and normalized.

    Raises:
        DomainError: when the table has no coefficient of order m.
    """
    m = hermite_rank(table) if m is None else m
    if m < 1 or m > table.max_order or not table.band(m, m):
        logger.error(f"Order-{m} band of the table is empty")
        raise DomainError(f"the order-{m} band is empty")
    return band_path(table, "head_m", m, seq, D, times)


def tail_path(table: HermiteCoefficientTable, m: Optional[int], seq: GaussianSequence,
              D: LinearOperator, times) -> np.ndarray:
    """Z~_{N,m}(t): orders m+1 and above; identically zero when that band is empty."""
    m = hermite_rank(table) if m is None else m
    if m < 1:
        raise DomainError("m must be at least 1")
    return band_path(table, "tail_m", m, seq, D, times)


@dataclass
class EnsembleSpec:
    """
    Inputs of a Monte Carlo ensemble of approximating paths.

    Attributes:
        G (NonlinearFunctional): The functional applied to each X_i.
        model (CorrelationModel): Law of the Gaussian inputs.
        D (LinearOperator): Normalizing exponent.
        N (int): Sequence length.
        replicates (int): Number of independent paths.
        master_seed (int): Seed from which replicate seeds are derived.
        times (np.ndarray, optional): Output grid, defaults to {k / N}.
        band (str): ``full``, ``head_m`` or ``tail_m``.
        m (int, optional): Band order, defaults to the Hermite rank.
        method (str): Synthesis method passed to gaussgen.
    """
    G: NonlinearFunctional
    model: CorrelationModel
    D: LinearOperator
    N: int
    replicates: int
    master_seed: int
    times: Optional[np.ndarray] = None
    band: str = "full"
    m: Optional[int] = None
    method: str = "auto"

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("replicates must be at least 1")
        if self.N < 1:
            raise DomainError("N must be at least 1")
        if self.band not in BANDS:
            raise InputError(f"unknown band {self.band!r}; choose from {BANDS}")
        if self.G.dim != self.model.dim or self.D.dim != self.model.dim:
            raise InputError("G, the model and D must share one dimension")
        self.times = default_times(self.N) if self.times is None else np.asarray(self.times, dtype=float)
        step_counts(self.N, self.times)

    def resolved_m(self) -> int:
        return hermite_rank(self.G.table()) if self.m is None else self.m

    def meta(self, band: str, seeds: list[int]) -> dict:
        return {
            "N": self.N,
            "D": self.D.to_rows(),
            "table_id": table_id(self.G.table()),
            "functional": self.G.name,
            "model_id": self.model.model_id,
            "master_seed": int(self.master_seed),
            "seeds": seeds,
            "band": band,
            "m": self.resolved_m(),
            "replicates": self.replicates,
        }


def _replicate_bands(spec: EnsembleSpec, bands: tuple[str, ...], seed: int) -> dict[str, np.ndarray]:
    seq = synthesize(spec.model, spec.N, seed, method=spec.method)
    table = spec.G.table()
    m = spec.resolved_m()
    out = {}
    for band in bands:
        if band == "full" and not spec.G.is_table:
            out[band] = partial_sum_path(spec.G, seq, spec.D, spec.times)
        elif band == "head_m":
            out[band] = reduced_path(table, m, seq, spec.D, spec.times)
        else:
            out[band] = band_path(table, band, m, seq, spec.D, spec.times)
    return out


def ensemble_bands(spec: EnsembleSpec, bands: tuple[str, ...] = BANDS,
                   threads: Optional[int] = None) -> dict[str, PathEnsemble]:
    """Several bands computed from the same Gaussian inputs, replicate by replicate."""
    spec.G.check_mean_zero()
    seeds = [derive_seed(spec.master_seed, r) for r in range(spec.replicates)]
    logger.info(
        f"Ensemble start: N={spec.N} replicates={spec.replicates} bands={list(bands)} "
        f"model={spec.model.model_id} functional={spec.G.name}"
    )
    results = map_ordered(lambda seed: _replicate_bands(spec, bands, seed), seeds, threads)
    ensembles = {
        band: PathEnsemble(spec.times.copy(), np.stack([r[band] for r in results]), spec.meta(band, seeds))
        for band in bands
    }
    logger.info(f"Ensemble finished: N={spec.N} replicates={spec.replicates}")
    return ensembles


def ensemble(spec: EnsembleSpec, threads: Optional[int] = None) -> PathEnsemble:
    """Independent replicates of the requested band with derived per-replicate seeds."""
    return ensemble_bands(spec, (spec.band,), threads)[spec.band]


def _diagonal_correlations(model: CorrelationModel, N: int) -> np.ndarray:
    lags = model.lags(max(N - 1, 0))
    diag = np.diagonal(lags, axis1=1, axis2=2)
    off = lags - diag[:, :, None] * np.eye(model.dim)[None]
    if np.max(np.abs(off)) > 1e-14 or not np.allclose(diag[0], 1.0, atol=1e-12):
        raise ModelDomainError("exact band covariance needs diagonal lags with unit variances")
    return diag


def band_covariance(table: HermiteCoefficientTable, model: CorrelationModel, N: int, band: str = "full",
                    m: Optional[int] = None, D: Optional[LinearOperator] = None,
                    normalized: bool = True) -> np.ndarray:
    """
    Exact covariance of the band partial sum at t = 1 for diagonal-lag models.

    Mehler's formula factorizes over independent coordinates:
    E[e_L(X_i) e_K(X_j)] = delta_{LK} L! prod_n rho_n(i - j)^{l_n}. With
    ``normalized`` the result is N^{-D} E[S S^T] N^{-D*}.
    """
    if N < 1:
        raise DomainError("N must be at least 1")
    m = hermite_rank(table) if m is None and band != "full" else m
    orders = _band_range(table, band, m if m is not None else 0)
    rho = _diagonal_correlations(model, N)
    cov = np.zeros((table.dim, table.dim))
    if orders is not None:
        counts = N - np.arange(N, dtype=float)
        for L, coeff in table.band(*orders).items():
            prod = np.prod(rho ** np.asarray(L.l, dtype=float)[None, :], axis=1)
            weight = counts[0] * prod[0] + 2.0 * np.dot(counts[1:], prod[1:])
            cov += L.factorial * weight * np.outer(coeff, coeff)
    if not normalized:
        return cov
    scale = mat_pow(N, -(D or model.target_D)).entries
    return scale @ cov @ scale.T


def sum_covariance_ratio(table: HermiteCoefficientTable, model: CorrelationModel, N: int) -> float:
    """||E[S_N S_N^T]|| / ||N^D Gamma N^{D*}||, bounded in N under Condition H."""
    raw = band_covariance(table, model, N, "full", normalized=False)
    return operator_norm(LinearOperator(raw)) / operator_norm(LinearOperator(normalization_target(model, N)))


def tail_energy_ratio(table: HermiteCoefficientTable, model: CorrelationModel, N: int,
                      m: Optional[int] = None) -> float:
    """E||Z~_{N,m}(1)||^2 / E||Z_{N,m}(1)||^2 from the exact band covariances."""
    head = band_covariance(table, model, N, "head_m", m)
    tail = band_covariance(table, model, N, "tail_m", m)
    return float(np.trace(tail) / np.trace(head))
