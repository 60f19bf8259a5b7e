"""
Synthesis of stationary Gaussian d-vector sequences with a prescribed matrix
correlation function.

The primary path is the block circulant embedding: the Fourier blocks of the
embedded covariance are factored once per (model, N) and every replicate then
costs one FFT. A block-Cholesky factor of the block-Toeplitz matrix is the
fallback when the embedding is not positive semi-definite.
"""

import struct
from pathlib import Path

import numpy as np
from scipy import linalg

from ofbmlab.models import GaussianSequence
from ofbmlab.services.corr import CorrelationModel, block_toeplitz, embedding_spectrum
from ofbmlab.utils.cache import array_cache
from ofbmlab.utils.constants import SEQUENCE_HEADER_FORMAT, SEQUENCE_MAGIC
from ofbmlab.utils.exceptions import DomainError, InputError, SynthesisError
from ofbmlab.utils.logger import logger
from ofbmlab.utils.rng import make_generator
from ofbmlab.utils.settings import settings

METHODS = ("auto", "circulant", "cholesky")


@array_cache(maxsize=16)
def embedding_factor(model: CorrelationModel, N: int) -> tuple[np.ndarray, float, float]:
    """
    Square-root factors S_j of the embedding's Fourier blocks, S_j S_j^H = C_j.

    Returns (factors of shape (M, d, d), smallest eigenvalue, clipped mass) where
    the clipped mass is the negative spectral mass relative to the total.
    """
    eigvals, eigvecs, M = embedding_spectrum(model, N)
    smallest = float(eigvals.min())
    negative = np.clip(eigvals, None, 0.0)
    clipped_mass = float(np.sum(np.abs(negative)) / max(np.sum(np.abs(eigvals)), 1e-300))
    if smallest < 0:
        logger.warning(
            f"Circulant embedding of model {model.model_id} at N={N} (M={M}) has negative eigenvalues; "
            f"smallest {smallest:.3e}, clipped mass {clipped_mass:.3e}"
        )
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    factors = eigvecs * roots[:, None, :]
    return factors, smallest, clipped_mass


@array_cache(maxsize=8)
def cholesky_factor(model: CorrelationModel, N: int) -> np.ndarray:
    """Lower factor of the (N d) x (N d) block-Toeplitz covariance."""
    cov = block_toeplitz(model, N)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        # singular but p.s.d.: symmetric square root
        w, V = linalg.eigh(cov)
        if w[0] < -settings.PSD_TOLERANCE * max(1.0, w[-1]):
            logger.error(f"Block-Toeplitz covariance of model {model.model_id} at N={N} is indefinite ({w[0]:.3e})")
            raise SynthesisError(f"model {model.model_id} is not a valid covariance at N={N}")
        return V * np.sqrt(np.clip(w, 0.0, None))


def _check_proper(model: CorrelationModel) -> None:
    if np.linalg.eigvalsh(model.r0)[0] <= 1e-12 * max(1.0, float(np.trace(model.r0))):
        logger.error(f"Model {model.model_id} has singular r(0)")
        raise InputError("r(0) must be nonsingular for synthesis")


def _circulant_sample(model: CorrelationModel, N: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    factors, _, clipped = embedding_factor(model, N)
    M, d = factors.shape[0], factors.shape[1]
    xi = rng.standard_normal((M, d)) + 1j * rng.standard_normal((M, d))
    weighted = np.einsum("jab,jb->ja", factors, xi)
    # Re and Im of the transform each carry the embedded covariance exactly
    Y = np.fft.ifft(weighted, axis=0) * np.sqrt(M)
    return np.ascontiguousarray(Y.real[:N]), clipped


def _cholesky_sample(model: CorrelationModel, N: int, rng: np.random.Generator) -> np.ndarray:
    L = cholesky_factor(model, N)
    z = rng.standard_normal(L.shape[1])
    return (L @ z).reshape(N, model.dim)


def choose_method(model: CorrelationModel, N: int, method: str = "auto") -> str:
    """Resolve ``auto`` to the embedding when it is p.s.d., else to Cholesky when it fits."""
    if method not in METHODS:
        raise InputError(f"unknown synthesis method {method!r}")
    if method != "auto":
        return method
    _, smallest, _ = embedding_factor(model, N)
    if smallest >= -settings.PSD_TOLERANCE:
        return "circulant"
    if N * model.dim <= settings.CHOLESKY_MAX_SIZE:
        logger.warning(f"Falling back to block Cholesky for model {model.model_id} at N={N}")
        return "cholesky"
    return "circulant"


def synthesize(model: CorrelationModel, N: int, seed: int, method: str = "auto") -> GaussianSequence:
    """
    Draw (X_1, ..., X_N) with the model's block-Toeplitz covariance.

    Raises:
        DomainError: when N < 1.
        InputError: when r(0) is singular.
        SynthesisError: when the clipped embedding mass exceeds the configured limit.
    """
    if N < 1:
        raise DomainError("N must be at least 1")
    _check_proper(model)
    resolved = choose_method(model, N, method)
    rng = make_generator(seed)
    if resolved == "cholesky":
        return GaussianSequence(_cholesky_sample(model, N, rng), model.model_id, int(seed), "cholesky")

    values, clipped = _circulant_sample(model, N, rng)
    if clipped > settings.CLIPPED_MASS_LIMIT:
        logger.error(f"Clipped spectral mass {clipped:.3e} exceeds {settings.CLIPPED_MASS_LIMIT:.1e}")
        raise SynthesisError(f"clipped spectral mass {clipped:.3e} exceeds limit {settings.CLIPPED_MASS_LIMIT:.1e}")
    return GaussianSequence(values, model.model_id, int(seed), "circulant", clipped_mass=clipped)


def empirical_corr(seq: GaussianSequence, lag: int) -> np.ndarray:
    """(1 / (N - lag)) sum_i X_i X_{i+lag}^T."""
    N = seq.length
    if not 0 <= lag < N:
        raise DomainError(f"lag must lie in [0, {N - 1}]")
    X = seq.values
    return X[: N - lag].T @ X[lag:] / (N - lag)


def dump_sequence(seq: GaussianSequence, path: Path) -> None:
    """16-byte header (magic, u32 N, u32 d), then little-endian float64 values row-major."""
    header = struct.pack(SEQUENCE_HEADER_FORMAT, SEQUENCE_MAGIC, seq.length, seq.dim)
    Path(path).write_bytes(header + np.ascontiguousarray(seq.values, dtype="<f8").tobytes())


def load_sequence(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    size = struct.calcsize(SEQUENCE_HEADER_FORMAT)
    if len(raw) < size:
        raise InputError(f"{path} is too short for a sequence header")
    magic, N, d = struct.unpack(SEQUENCE_HEADER_FORMAT, raw[:size])
    if magic != SEQUENCE_MAGIC:
        raise InputError(f"{path} does not start with {SEQUENCE_MAGIC!r}")
    body = np.frombuffer(raw[size:], dtype="<f8")
    if body.size != N * d:
        raise InputError(f"{path} holds {body.size} values, header says {N} x {d}")
    return body.reshape(N, d).astype(float)
