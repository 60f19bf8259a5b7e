"""
Statistical verification of path ensembles.

Covariance and moment estimators with jackknife standard errors, the
tightness-exponent fit, whitening, and the energy-distance two-sample test.
"""

from dataclasses import dataclass
from math import factorial
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg
from scipy import stats as sps
from scipy.spatial.distance import cdist

from ofbmlab.experiments.schemas import VerificationReport
from ofbmlab.models import PathEnsemble
from ofbmlab.services.hermite import gaussian_expectation
from ofbmlab.utils.exceptions import DomainError, InputError
from ofbmlab.utils.logger import logger
from ofbmlab.utils.rng import make_generator
from ofbmlab.utils.settings import settings


@dataclass
class CovarianceEstimate:
    cov: np.ndarray
    se: np.ndarray
    replicates: int


@dataclass
class MomentRatio:
    ratio: float
    se: float
    gaussian_reference: float
    degenerate: bool = False


@dataclass
class TightnessFit:
    """Weighted least-squares fit of log E||Z(t) - Z(s)||^{2 alpha} on log(t - s)."""
    slope: float
    intercept: float
    ci_half_width: float
    threshold: float
    passed: bool
    log_lengths: np.ndarray
    log_moments: np.ndarray


@dataclass
class EnergyTest:
    statistic: float
    p_value: float
    permutations: int


def _sample_cov(X: np.ndarray) -> np.ndarray:
    centered = X - X.mean(axis=0)
    return centered.T @ centered / (X.shape[0] - 1)


def cov_estimate(ensemble: PathEnsemble, t: float) -> CovarianceEstimate:
    """
    Unbiased sample covariance of the path values at t with jackknife standard errors.

    Raises:
        DomainError: when t is off the grid or fewer than 2 replicates exist.
    """
    X = ensemble.values_at(t)
    R = X.shape[0]
    if R < 2:
        raise DomainError("covariance estimation needs at least 2 replicates")
    cov = _sample_cov(X)
    if R < 3:
        return CovarianceEstimate(cov, np.full(cov.shape, np.inf), R)

    # leave-one-out covariances in closed form
    total = X.sum(axis=0)
    second = X.T @ X
    loo_mean = (total[None, :] - X) / (R - 1)
    loo_second = second[None] - X[:, :, None] * X[:, None, :]
    loo_cov = (loo_second - (R - 1) * loo_mean[:, :, None] * loo_mean[:, None, :]) / (R - 2)
    spread = loo_cov - loo_cov.mean(axis=0)
    se = np.sqrt((R - 1) / R * np.sum(spread**2, axis=0))
    return CovarianceEstimate(cov, se, R)


def _cumulant_moment(eigvals: np.ndarray, order: int) -> float:
    """E[Q^order] for Q = sum_k lambda_k g_k^2 from its cumulants 2^{n-1} (n-1)! sum lambda^n."""
    kappa = [0.0] + [2.0 ** (n - 1) * factorial(n - 1) * float(np.sum(eigvals**n)) for n in range(1, order + 1)]
    moments = [1.0]
    for n in range(1, order + 1):
        moments.append(sum(
            factorial(n - 1) // (factorial(k - 1) * factorial(n - k)) * kappa[k] * moments[n - k]
            for k in range(1, n + 1)
        ))
    return moments[order]


def gaussian_moment_reference(C: np.ndarray, alpha: float) -> float:
    """E||Z||^{2 alpha} / ||C||^alpha for Z ~ N(0, C)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    eigvals = np.clip(linalg.eigvalsh(0.5 * (C + C.T)), 0.0, None)
    top = float(eigvals[-1])
    if top <= 0:
        return float("inf")
    if float(alpha).is_integer():
        return _cumulant_moment(eigvals / top, int(alpha))
    root = np.sqrt(eigvals / top)
    value = gaussian_expectation(lambda P: np.sum((P * root) ** 2, axis=-1) ** alpha, C.shape[0])
    return float(value)


def moment_ratio(ensemble: PathEnsemble, t: float, alpha: float) -> MomentRatio:
    """
    Monte Carlo E||S||^{2 alpha} / ||E[S S^T]||^alpha with a jackknife standard error.

    A degenerate second moment is flagged and the ratio reported as infinity.
    """
    if alpha < 1:
        raise DomainError("alpha must be at least 1")
    X = ensemble.values_at(t)
    R = X.shape[0]
    second = X.T @ X / R
    reference = gaussian_moment_reference(second, alpha)
    norm = float(linalg.eigvalsh(second)[-1])
    if norm <= 1e-300:
        logger.warning(f"Degenerate second moment at t = {t}; moment ratio reported as infinity")
        return MomentRatio(float("inf"), float("nan"), reference, degenerate=True)

    powers = np.sum(X**2, axis=1) ** alpha
    ratio = float(powers.mean() / norm**alpha)
    if R < 2:
        return MomentRatio(ratio, float("nan"), reference)
    loo_num = (powers.sum() - powers) / (R - 1)
    loo_second = (R * second[None] - X[:, :, None] * X[:, None, :]) / (R - 1)
    loo_norm = np.linalg.eigvalsh(loo_second)[:, -1]
    loo = loo_num / loo_norm**alpha
    se = float(np.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2)))
    return MomentRatio(ratio, se, reference)


def moment_bound_report(ensemble: PathEnsemble, t: float, alpha: float, tolerance: float = 0.25) -> VerificationReport:
    """Bound-form moment check: the ratio stays within ``tolerance`` of the Gaussian reference."""
    result = moment_ratio(ensemble, t, alpha)
    deviation = abs(result.ratio / result.gaussian_reference - 1.0) if not result.degenerate else float("inf")
    return VerificationReport(
        test=f"moment_ratio(alpha={alpha}, t={t})",
        statistic=deviation,
        threshold=tolerance,
        passed=bool(deviation <= tolerance),
        standard_error=result.se / result.gaussian_reference if not result.degenerate else None,
        replicates=ensemble.replicates,
        details={"ratio": result.ratio, "gaussian_reference": result.gaussian_reference,
                 "degenerate": result.degenerate},
    )


def tightness_exponent(ensemble: PathEnsemble, pairs: Sequence[tuple[float, float]], alpha: float,
                       lambda_min: float, delta: Optional[float] = None) -> TightnessFit:
    """
    Slope of log E||Z(t) - Z(s)||^{2 alpha} against log(t - s).

    Passes when the slope is at least 2 alpha (lambda_min - delta) minus the 95%
    confidence half-width.

    Raises:
        DomainError: with fewer than 3 pairs, unordered pairs, or windows below 1/N.
    """
    delta = settings.TIGHTNESS_DELTA if delta is None else delta
    if len(pairs) < 3:
        raise DomainError("tightness fit needs at least 3 (s, t) pairs")
    N = ensemble.meta.get("N")
    lengths, means, ses = [], [], []
    for s, t in pairs:
        if not s < t:
            raise DomainError(f"pair ({s}, {t}) is not strictly ordered")
        if N is not None and N * (t - s) < 1:
            raise DomainError(f"window ({s}, {t}) is shorter than 1/N")
        inc = ensemble.values_at(t) - ensemble.values_at(s)
        powers = np.sum(inc**2, axis=1) ** alpha
        lengths.append(t - s)
        means.append(powers.mean())
        ses.append(powers.std(ddof=1) / np.sqrt(powers.size))

    x = np.log(lengths)
    y = np.log(means)
    y_se = np.asarray(ses) / np.asarray(means)
    if np.unique(x).size < 2:
        raise DomainError("tightness fit needs at least two distinct window lengths")
    weights = 1.0 / np.maximum(y_se, 1e-12) ** 2
    design = np.column_stack([np.ones_like(x), x])
    normal = design.T @ (weights[:, None] * design)
    coef = linalg.solve(normal, design.T @ (weights * y), assume_a="pos")
    slope_se = float(np.sqrt(linalg.inv(normal)[1, 1]))
    half_width = float(sps.norm.ppf(0.975)) * slope_se
    threshold = 2 * alpha * (lambda_min - delta)
    slope = float(coef[1])
    passed = slope >= threshold - half_width
    logger.info(f"Tightness slope {slope:.4f} +- {half_width:.4f} against threshold {threshold:.4f}")
    return TightnessFit(slope, float(coef[0]), half_width, threshold, bool(passed), x, y)


def whiten(samples: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """
    Map samples by the symmetric inverse square root of ``reference``.

    Raises:
        InputError: on shape mismatch or a non-symmetric reference.
        DomainError: when the reference is singular beyond 1e-10.
    """
    samples = np.asarray(samples, dtype=float)
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    k = reference.shape[0]
    if samples.ndim != 2 or samples.shape[1] != k:
        raise InputError(f"samples must be R x {k}")
    if not np.allclose(reference, reference.T, rtol=0.0, atol=1e-12):
        raise InputError("reference covariance must be symmetric")
    if np.array_equal(reference, np.eye(k)):
        return samples.copy()
    w, V = linalg.eigh(reference)
    if w[0] <= 1e-10:
        logger.error(f"Whitening reference is singular (smallest eigenvalue {w[0]:.3e})")
        raise DomainError("reference covariance is singular")
    inv_root = (V / np.sqrt(w)) @ V.T
    return samples @ inv_root


def _energy_from_distances(dist: np.ndarray, in_b: np.ndarray) -> float:
    in_a = ~in_b
    n, m = int(in_a.sum()), int(in_b.sum())
    ones_a, ones_b = in_a.astype(float), in_b.astype(float)
    to_b = dist @ ones_b
    to_a = dist @ ones_a
    s_ab = float(ones_a @ to_b)
    s_bb = float(ones_b @ to_b)
    s_aa = float(ones_a @ to_a)
    return 2.0 * s_ab / (n * m) - s_aa / n**2 - s_bb / m**2


def energy_distance(samples_a: np.ndarray, samples_b: np.ndarray, permutations: Optional[int] = None,
                    seed: int = 0) -> EnergyTest:
    """
    Energy statistic 2E||a - b|| - E||a - a'|| - E||b - b'|| with a permutation p-value.

    Raises:
        InputError: when the sample sets are empty or differ in dimension.
    """
    permutations = settings.PERMUTATIONS if permutations is None else permutations
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InputError("both sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise InputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")

    pooled = np.vstack([a, b])
    dist = cdist(pooled, pooled)
    labels = np.zeros(pooled.shape[0], dtype=bool)
    labels[a.shape[0]:] = True
    observed = max(_energy_from_distances(dist, labels), 0.0)

    rng = make_generator(seed)
    exceed = 0
    for _ in range(permutations):
        if _energy_from_distances(dist, rng.permutation(labels)) >= observed:
            exceed += 1
    p_value = (1 + exceed) / (1 + permutations)
    return EnergyTest(observed, p_value, permutations)


def render_reports(reports: Sequence[VerificationReport]) -> str:
    """Plain-text table of report verdicts."""
    if not reports:
        return "(no reports)"
    frame = pd.DataFrame([
        {
            "test": r.test,
            "statistic": r.statistic,
            "threshold": r.threshold,
            "se": r.standard_error,
            "replicates": r.replicates,
            "pass": "PASS" if r.passed else "FAIL",
        }
        for r in reports
    ])
    return frame.to_string(index=False, float_format=lambda v: f"{v:.6g}")
