"""
Matrix-valued correlation models of stationary Gaussian input sequences.

Lag convention: ``r(n) = E[X_i X_{i+n}^T]`` and ``r(-n) = r(n)^T``. The canonical
family is operator fractional Gaussian noise, the increments of a time-reversible
OFBM, whose double-summed correlation telescopes to ``N^D Gamma N^{D*}``.
"""

import hashlib
import json
import threading
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ofbmlab.experiments.schemas import ConditionHReport
from ofbmlab.services.linop import LinearOperator, mat_pow, mat_pow_batch, operator_norm
from ofbmlab.utils.constants import MODEL_FAMILIES
from ofbmlab.utils.exceptions import DomainError, InputError, ModelDomainError
from ofbmlab.utils.logger import logger
from ofbmlab.utils.settings import settings

LagSource = Callable[[int, int], np.ndarray]


def _require_psd(matrix: np.ndarray, name: str, tol: float = 1e-10) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(matrix)):
        raise InputError(f"{name} has non-finite entries")
    if not np.allclose(matrix, matrix.T, atol=tol, rtol=0):
        raise InputError(f"{name} must be symmetric")
    eig_min = float(np.linalg.eigvalsh(matrix)[0])
    if eig_min < -tol * max(1.0, float(np.max(np.abs(matrix)))):
        raise InputError(f"{name} is not positive semi-definite (smallest eigenvalue {eig_min:.3e})")
    return matrix


class CorrelationModel:
    """
    A stationary matrix correlation sequence together with its target pair (D, Gamma).

    Attributes:
        dim (int): Dimension d of the sequence.
        r0 (np.ndarray): Lag-0 covariance r(0).
        family (str): One of ``ofgn``, ``white``, ``table``.
        target_D (LinearOperator): Normalizing exponent of the partial sums.
        target_Gamma (np.ndarray): Symmetric p.s.d. matrix of the covariance asymptotic.
    """

    def __init__(self, family: str, r0: np.ndarray, lag_source: LagSource,
                 target_D: LinearOperator, target_Gamma: np.ndarray,
                 explicit_lags: np.ndarray | None = None):
        if family not in MODEL_FAMILIES:
            raise InputError(f"unknown model family {family!r}")
        self.family = family
        self.r0 = _require_psd(r0, "r(0)")
        self.dim = self.r0.shape[0]
        self.target_D = target_D
        self.target_Gamma = _require_psd(target_Gamma, "Gamma")
        if target_D.dim != self.dim or self.target_Gamma.shape[0] != self.dim:
            raise InputError("D, Gamma and r(0) must share one dimension")
        self._lag_source = lag_source
        self._explicit_lags = explicit_lags
        self._lags = self.r0[None, :, :].copy()
        self._lock = threading.Lock()

    @property
    def cache_key(self) -> str:
        return self.model_id

    @property
    def model_id(self) -> str:
        payload = json.dumps(self.to_document(), sort_keys=True).encode("utf-8")
        return hashlib.sha1(payload).hexdigest()[:16]

    def lags(self, n_max: int) -> np.ndarray:
        """Array of r(0), ..., r(n_max), shape (n_max + 1, d, d), read-only."""
        if n_max < 0:
            raise DomainError("n_max must be nonnegative")
        with self._lock:
            have = self._lags.shape[0] - 1
            if n_max > have:
                extra = self._lag_source(have + 1, n_max)
                self._lags = np.concatenate([self._lags, extra], axis=0)
                self._lags.setflags(write=False)
            return self._lags[: n_max + 1]

    def lag(self, n: int) -> np.ndarray:
        """r(n) for any integer n, using r(-n) = r(n)^T."""
        block = self.lags(abs(n))[abs(n)]
        return block if n >= 0 else block.T

    def to_document(self) -> dict:
        doc = {
            "dim": self.dim,
            "D": self.target_D.to_rows(),
            "Gamma": self.target_Gamma.ravel().tolist(),
            "family": self.family,
        }
        if self._explicit_lags is not None:
            doc["lags"] = [block.ravel().tolist() for block in self._explicit_lags]
        elif self.family == "white":
            doc["lags"] = [self.r0.ravel().tolist()]
        return doc

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_document(), indent=2), encoding="utf-8")


def _ofgn_lags(D: LinearOperator, Gamma: np.ndarray) -> LagSource:
    def source(n_from: int, n_to: int) -> np.ndarray:
        # f(t) = t^D Gamma t^{D*} on t = n_from - 1 .. n_to + 1, with f(0) = 0
        ts = np.arange(max(n_from - 1, 1), n_to + 2, dtype=float)
        P = mat_pow_batch(ts, D)
        f = P @ Gamma @ np.swapaxes(P, 1, 2)
        if n_from - 1 == 0:
            f = np.concatenate([np.zeros((1,) + Gamma.shape), f], axis=0)
        return 0.5 * (f[2:] - 2.0 * f[1:-1] + f[:-2])
    return source


def ofgn_model(D: LinearOperator, Gamma, long_memory: bool = True) -> CorrelationModel:
    """
    Operator fractional Gaussian noise with exponent D and Gamma = r(0).

    r(n) = 1/2 [(n+1)^D G (n+1)^{D*} - 2 n^D G n^{D*} + (n-1)^D G (n-1)^{D*}].

    Raises:
        ModelDomainError: when the spectral bounds of D leave (1/2, 1), or (0, 1)
            when ``long_memory`` is False.
        InputError: when Gamma is not symmetric p.s.d.
    """
    Gamma = _require_psd(np.atleast_2d(np.asarray(Gamma, dtype=float)), "Gamma")
    bounds = D.bounds
    low = 0.5 if long_memory else 0.0
    if not bounds.inside(low, 1.0):
        logger.error(f"oFGN exponent spectral bounds ({bounds.lambda_min}, {bounds.lambda_max}) outside ({low}, 1)")
        raise ModelDomainError(
            f"spectral bounds of D must lie in ({low}, 1); got [{bounds.lambda_min:.4g}, {bounds.lambda_max:.4g}]"
        )
    return CorrelationModel("ofgn", Gamma, _ofgn_lags(D, Gamma), D, Gamma)


def white_noise_model(r0, D: LinearOperator, Gamma=None) -> CorrelationModel:
    """i.i.d. N(0, r0) vectors; the target pair is supplied by the caller."""
    r0 = np.atleast_2d(np.asarray(r0, dtype=float))
    Gamma = r0 if Gamma is None else np.atleast_2d(np.asarray(Gamma, dtype=float))

    def source(n_from: int, n_to: int) -> np.ndarray:
        return np.zeros((n_to - n_from + 1,) + r0.shape)

    return CorrelationModel("white", r0, source, D, Gamma)


def table_model(lags: Sequence, D: LinearOperator, Gamma) -> CorrelationModel:
    """Explicit lags r(0), ..., r(K); r(n) = 0 beyond K."""
    blocks = np.asarray(lags, dtype=float)
    if blocks.ndim == 2:
        d = int(round(np.sqrt(blocks.shape[1])))
        blocks = blocks.reshape(blocks.shape[0], d, d)
    if blocks.ndim != 3 or blocks.shape[0] < 1:
        raise InputError("lags must be a non-empty list of square matrices")
    K = blocks.shape[0] - 1

    def source(n_from: int, n_to: int) -> np.ndarray:
        out = np.zeros((n_to - n_from + 1,) + blocks.shape[1:])
        for n in range(n_from, min(n_to, K) + 1):
            out[n - n_from] = blocks[n]
        return out

    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    return CorrelationModel("table", blocks[0], source, D, Gamma, explicit_lags=blocks)


def model_from_document(doc: dict, long_memory: bool = True) -> CorrelationModel:
    try:
        dim = int(doc["dim"])
        D = LinearOperator.from_rows(doc["D"], dim)
        Gamma = np.asarray(doc["Gamma"], dtype=float).reshape(dim, dim)
        family = doc.get("family", "ofgn")
    except (KeyError, ValueError, TypeError) as e:
        raise InputError(f"malformed correlation model document: {e}") from e
    if family == "ofgn":
        return ofgn_model(D, Gamma, long_memory=long_memory)
    lags = doc.get("lags")
    if family == "white":
        r0 = Gamma if not lags else np.asarray(lags[0], dtype=float).reshape(dim, dim)
        return white_noise_model(r0, D, Gamma)
    if family == "table":
        if not lags:
            raise InputError("table models need an explicit 'lags' list")
        return table_model([np.asarray(b, dtype=float).reshape(dim, dim) for b in lags], D, Gamma)
    raise InputError(f"unknown model family {family!r}")


def load_model(path: Path, long_memory: bool = True) -> CorrelationModel:
    return model_from_document(json.loads(Path(path).read_text(encoding="utf-8")), long_memory)


def double_sum(model: CorrelationModel, N: int) -> np.ndarray:
    """sum_{i,j=1..N} E[X_i X_j^T] = N r(0) + sum_n (N - n)(r(n) + r(n)^T)."""
    if N < 1:
        raise DomainError("N must be at least 1")
    lags = model.lags(N - 1)
    weights = (N - np.arange(1, N, dtype=float))
    tail = np.tensordot(weights, lags[1:], axes=(0, 0))
    return N * lags[0] + tail + tail.T


def normalization_target(model: CorrelationModel, N: float) -> np.ndarray:
    """N^D Gamma N^{D*}."""
    P = mat_pow(N, model.target_D).entries
    return P @ model.target_Gamma @ P.T


def block_toeplitz(model: CorrelationModel, N: int) -> np.ndarray:
    """Covariance of the stacked vector (X_1, ..., X_N), shape (N d, N d)."""
    d = model.dim
    lags = model.lags(max(N - 1, 0))
    out = np.empty((N * d, N * d))
    for k in range(N):
        for l in range(N):
            block = lags[l - k] if l >= k else lags[k - l].T
            out[k * d:(k + 1) * d, l * d:(l + 1) * d] = block
    return out


def embedding_size(N: int) -> int:
    """2(N - 1) rounded up to a power of two, at least 2."""
    return max(2, 1 << int(np.ceil(np.log2(max(2 * (N - 1), 1)))))


def embedding_spectrum(model: CorrelationModel, N: int) -> tuple[np.ndarray, np.ndarray, int]:
    """
    Eigen-decomposition of the Fourier blocks of the circulant embedding.

    The circulant has first block column c(k) = r(k)^T for k < M/2, the symmetrized
    c(M/2), and c(M - k) = r(k) otherwise. Returns (eigenvalues (M, d),
    eigenvectors (M, d, d), M).
    """
    M = embedding_size(N)
    half = M // 2
    lags = model.lags(half)
    c = np.empty((M,) + lags.shape[1:])
    c[:half] = np.swapaxes(lags[:half], 1, 2)
    c[half] = 0.5 * (lags[half] + lags[half].T)
    c[half + 1:] = lags[1:half][::-1]
    blocks = np.fft.fft(c, axis=0)
    blocks = 0.5 * (blocks + np.conj(np.swapaxes(blocks, 1, 2)))
    eigvals, eigvecs = np.linalg.eigh(blocks)
    return eigvals, eigvecs, M


def check_psd(model: CorrelationModel, N_check: int, tol: float | None = None) -> tuple[bool, float]:
    """Whether every embedding eigenvalue is at least -tol; returns (ok, smallest)."""
    tol = settings.PSD_TOLERANCE if tol is None else tol
    eigvals, _, _ = embedding_spectrum(model, N_check)
    smallest = float(eigvals.min())
    return smallest >= -tol, smallest


def check_condition_h(model: CorrelationModel, m: int, N_grid: Sequence[int],
                      slack: float | None = None) -> ConditionHReport:
    """
    Finite-N diagnostics of Condition H(m, D).

    - sum bound: sup_N (sum_{i,j} ||r(i,j)||^m) / ||N^D Gamma N^{D*}|| stays below
      slack times its value at the smallest N
    - decay: ||r(n)|| at the largest lag is below 0.05 ||r(0)|| and non-increasing
      over the last decade of lags
    - exact asymptotic: double_sum(N) matches N^D Gamma N^{D*} within 1% at the
      largest N (relative Frobenius error)
    """
    if not N_grid:
        raise InputError("N_grid must not be empty")
    if m < 1:
        raise DomainError("m must be at least 1")
    grid = sorted(int(n) for n in N_grid)
    if any(n < 1 for n in grid) or len(set(grid)) != len(grid):
        raise InputError("N_grid must hold distinct positive integers")
    slack = settings.SLACK_FACTOR if slack is None else slack

    max_lag = grid[-1] - 1
    lags = model.lags(max_lag)
    norms = np.array([operator_norm(LinearOperator(block)) for block in lags])
    powered = norms**m

    ratios = []
    for N in grid:
        n = np.arange(1, N)
        total = N * powered[0] + 2.0 * np.sum((N - n) * powered[1:N])
        ratios.append(float(total / operator_norm(LinearOperator(normalization_target(model, N)))))
    passes_sum_bound = bool(max(ratios) <= slack * ratios[0])

    decade = norms[max(1, max_lag // 10): max_lag + 1]
    monotone = bool(np.all(np.diff(decade) <= 1e-12 * max(norms[0], 1e-300)))
    passes_decay = bool(norms[max_lag] < 0.05 * norms[0] and monotone)

    errors = []
    for N in grid:
        target = normalization_target(model, N)
        errors.append(float(np.linalg.norm(double_sum(model, N) - target) / np.linalg.norm(target)))
    passes_exact = bool(errors[-1] < 0.01)

    report = ConditionHReport(
        m=m,
        N_grid=grid,
        slack_factor=slack,
        sum_bound_ratios=ratios,
        passes_sum_bound=passes_sum_bound,
        tail_norms=decade[-10:].tolist(),
        passes_decay=passes_decay,
        asymptotic_errors=errors,
        passes_exact_asymptotic=passes_exact,
    )
    logger.info(
        f"Condition H({m}) on {model.family} model {model.model_id}: sum_bound={passes_sum_bound} "
        f"decay={passes_decay} exact={passes_exact}"
    )
    return report
