"""
Operator algebra for operator self-similarity.

Matrix powers ``c**D = exp(log(c) D)`` are computed by scaling and squaring the
exponential series, batched over many scalars at once so frequency grids and lag
tables cost one vectorized pass. Norms and spectral bounds follow the usual dense
routines; dimensions are small.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from ofbmlab.utils.exceptions import DomainError, InputError

# Scaled series argument stays below this norm before squaring back
_SCALED_NORM = 0.5
_MAX_TERMS = 40


@dataclass(frozen=True)
class SpectralBounds:
    """Smallest and largest real part over the spectrum of an operator."""
    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        if self.lambda_min > self.lambda_max:
            raise InputError("lambda_min must not exceed lambda_max")

    def inside(self, low: float, high: float, closed_high: bool = False) -> bool:
        upper_ok = self.lambda_max <= high if closed_high else self.lambda_max < high
        return self.lambda_min > low and upper_ok


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """
    A real square matrix acting on R^d.

    Attributes:
        entries (np.ndarray): The d x d matrix in the standard basis.
    """
    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise InputError(f"operator entries must be a non-empty square matrix, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @classmethod
    def identity(cls, dim: int) -> "LinearOperator":
        return cls(np.eye(dim))

    @classmethod
    def diag(cls, values: Sequence[float]) -> "LinearOperator":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]] | Sequence[float], dim: int | None = None) -> "LinearOperator":
        """Build from nested rows or a flat row-major list of length dim**2."""
        arr = np.asarray(rows, dtype=float)
        if arr.ndim == 1:
            size = dim or int(round(np.sqrt(arr.size)))
            if size * size != arr.size:
                raise InputError(f"cannot reshape {arr.size} entries into a square matrix")
            arr = arr.reshape(size, size)
        return cls(arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def cache_key(self) -> bytes:
        return self.entries.tobytes()

    @cached_property
    def bounds(self) -> SpectralBounds:
        return spectral_bounds(self)

    def __matmul__(self, other: "LinearOperator") -> "LinearOperator":
        return LinearOperator(self.entries @ other.entries)

    def __neg__(self) -> "LinearOperator":
        return LinearOperator(-self.entries)

    def shifted(self, alpha: float) -> "LinearOperator":
        """Return D + alpha * I."""
        return LinearOperator(self.entries + alpha * np.eye(self.dim))

    def to_rows(self) -> list[float]:
        return self.entries.ravel().tolist()


def _check_finite(A: LinearOperator) -> None:
    if not np.all(np.isfinite(A.entries)):
        raise InputError("operator has non-finite entries")


def mat_pow_batch(cs: Iterable[float] | np.ndarray, D: LinearOperator) -> np.ndarray:
    """
    Compute ``c**D`` for every scalar in ``cs``.

    Returns an array of shape ``(len(cs), d, d)``. One squaring depth is shared by
    the whole batch, chosen so the largest scaled argument has 1-norm below 0.5.
    """
    _check_finite(D)
    cs = np.atleast_1d(np.asarray(cs, dtype=float))
    if not np.all(np.isfinite(cs)):
        raise InputError("matrix power base must be finite")
    if np.any(cs <= 0):
        raise DomainError("matrix power base must be positive")

    d = D.dim
    logs = np.log(cs)
    args = logs[:, None, None] * D.entries[None, :, :]

    norm = float(np.max(np.abs(logs))) * float(np.max(np.sum(np.abs(D.entries), axis=0)))
    squarings = 0 if norm <= _SCALED_NORM else int(np.ceil(np.log2(norm / _SCALED_NORM)))
    scaled = args / 2.0**squarings

    eye = np.broadcast_to(np.eye(d), scaled.shape)
    result = eye.copy()
    term = eye.copy()
    for k in range(1, _MAX_TERMS + 1):
        term = term @ scaled / k
        result = result + term
        if np.max(np.abs(term)) <= 1e-17 * max(1.0, float(np.max(np.abs(result)))):
            break

    for _ in range(squarings):
        result = result @ result
    return result


def mat_pow(c: float, D: LinearOperator) -> LinearOperator:
    """
    The operator power ``c**D = exp(log(c) D)``.

    Raises:
        DomainError: when c <= 0.
        InputError: when D or c is not finite.
    """
    return LinearOperator(mat_pow_batch([c], D)[0])


def operator_norm(A: LinearOperator) -> float:
    """Largest singular value, from the symmetric eigensolve of A^T A."""
    _check_finite(A)
    gram = A.entries.T @ A.entries
    top = float(np.linalg.eigvalsh(gram)[-1])
    return float(np.sqrt(max(top, 0.0)))


def spectral_bounds(A: LinearOperator) -> SpectralBounds:
    _check_finite(A)
    real_parts = np.linalg.eigvals(A.entries).real
    return SpectralBounds(float(real_parts.min()), float(real_parts.max()))


def adjoint(A: LinearOperator) -> LinearOperator:
    return LinearOperator(A.entries.T.copy())


def entrywise_l1_norm(A: LinearOperator) -> float:
    """Sum of absolute entries, the norm behind the ordering A <= B."""
    return float(np.sum(np.abs(A.entries)))


def dominates(A: LinearOperator, B: LinearOperator) -> bool:
    """True when A <= B, i.e. sum |A_ij| <= sum |B_ij|."""
    return entrywise_l1_norm(A) <= entrywise_l1_norm(B)


def norm_growth_profile(D: LinearOperator, delta: float, exponents: Sequence[int] = range(21)) -> dict:
    """
    Sampled ratios of the norm-growth bound for ``r = 2**(+-k)``.

    ``small`` holds ||r^D|| * r^-(lambda_D - delta) for r <= 1 and ``large`` holds
    ||r^D|| * r^-(Lambda_D + delta) for r >= 1; both sequences stay bounded when
    lambda_D > 0.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    bounds = D.bounds
    if bounds.lambda_min <= 0:
        raise DomainError("norm growth bounds need lambda_D > 0")

    ks = np.asarray(list(exponents), dtype=float)
    small_r = 2.0 ** (-ks)
    large_r = 2.0**ks
    small_pows = mat_pow_batch(small_r, D)
    large_pows = mat_pow_batch(large_r, D)

    small = np.array([operator_norm(LinearOperator(P)) for P in small_pows]) * small_r ** (-(bounds.lambda_min - delta))
    large = np.array([operator_norm(LinearOperator(P)) for P in large_pows]) * large_r ** (-(bounds.lambda_max + delta))
    return {"r_small": small_r, "small": small, "r_large": large_r, "large": large}
