"""
Hermite polynomial machinery.

Probabilists' Hermite polynomials H_l (three-term recurrence), the tensor basis
vectors e_L / e~_L generalized to d output slots, Gauss-Hermite extraction of
expansion coefficients, Hermite rank and band-truncated evaluation.
"""

import itertools
import json
import math
from collections.abc import Hashable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from ofbmlab.utils.cache import array_cache
from ofbmlab.utils.constants import BUILTIN_FUNCTIONALS
from ofbmlab.utils.exceptions import (
    ContractError,
    DomainError,
    EvaluationError,
    InputError,
    RankUndeterminedError,
)
from ofbmlab.utils.logger import logger
from ofbmlab.utils.settings import settings


def hermite_eval(l: int, x):
    """
    H_l(x) by H_{l+1} = x H_l - l H_{l-1}, H_0 = 1, H_1 = x.

    ``x`` may be a scalar or an array; the result has the same shape.
    """
    if l < 0:
        raise DomainError(f"Hermite degree must be nonnegative, got {l}")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x.copy()
    if l == 0:
        return prev if prev.ndim else float(prev)
    for k in range(1, l):
        prev, cur = cur, x * cur - k * prev
    return cur if cur.ndim else float(cur)


def hermite_table(max_order: int, x) -> np.ndarray:
    """Array ``out[l, ...] = H_l(x)`` for l = 0..max_order."""
    x = np.asarray(x, dtype=float)
    out = np.empty((max_order + 1,) + x.shape)
    out[0] = 1.0
    if max_order >= 1:
        out[1] = x
    for k in range(1, max_order):
        out[k + 1] = x * out[k] - k * out[k - 1]
    return out


@dataclass(frozen=True, order=True)
class MultiIndex:
    """L = (l_1, ..., l_d) with order |L| = sum l_k."""
    l: tuple[int, ...]

    def __post_init__(self):
        l = tuple(int(v) for v in self.l)
        if not l or any(v < 0 for v in l):
            raise DomainError(f"multi-index entries must be nonnegative, got {self.l}")
        object.__setattr__(self, "l", l)

    @property
    def order(self) -> int:
        return sum(self.l)

    @property
    def dim(self) -> int:
        return len(self.l)

    @property
    def factorial(self) -> int:
        return math.prod(math.factorial(v) for v in self.l)


def multi_indices(dim: int, order: int) -> Iterator[MultiIndex]:
    """All L of total order ``order`` in d coordinates, lexicographically descending."""
    for combo in itertools.product(range(order, -1, -1), repeat=dim):
        if sum(combo) == order:
            yield MultiIndex(combo)


def basis_eval(L: MultiIndex, X: Sequence[float], coordinate: int) -> np.ndarray:
    """
    The basis vector with slot ``coordinate`` (1-based) equal to prod H_{l_n}(X^n).

    For d = 2, coordinate 1 gives e_L(X) and coordinate 2 gives e~_L(X).
    """
    X = np.asarray(X, dtype=float)
    if X.shape != (L.dim,):
        raise DomainError(f"X must have {L.dim} coordinates")
    if not 1 <= coordinate <= L.dim:
        raise DomainError(f"coordinate must lie in 1..{L.dim}, got {coordinate}")
    out = np.zeros(L.dim)
    out[coordinate - 1] = math.prod(hermite_eval(l, x) for l, x in zip(L.l, X))
    return out


@array_cache(maxsize=16)
def gauss_hermite_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights integrating against the standard normal density."""
    x, w = hermegauss(nodes)
    return x, w / np.sqrt(2.0 * np.pi)


def _tensor_grid(dim: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_hermite_rule(nodes)
    points = np.stack(np.meshgrid(*([x] * dim), indexing="ij"), axis=-1)
    weights = np.ones((nodes,) * dim)
    for axis in range(dim):
        shape = [1] * dim
        shape[axis] = nodes
        weights = weights * w.reshape(shape)
    return points, weights


def gaussian_expectation(f: Callable[[np.ndarray], np.ndarray], dim: int, nodes: int | None = None) -> np.ndarray:
    """
    E[f(X)] for X standard normal in R^dim by tensor Gauss-Hermite quadrature.

    ``f`` maps an array of shape (..., dim) to shape (...) or (..., k).
    """
    nodes = nodes or settings.HERMITE_QUAD_NODES
    points, weights = _tensor_grid(dim, nodes)
    values = np.asarray(f(points), dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError("integrand is not finite at some quadrature node")
    axes = tuple(range(dim))
    if values.ndim == dim:
        return np.sum(values * weights)
    return np.tensordot(weights, values, axes=(axes, axes))


@dataclass(eq=False)
class HermiteCoefficientTable:
    """
    Coefficients of a vector functional in the tensor Hermite basis.

    Attributes:
        dim (int): Input and output dimension d.
        max_order (int): Truncation order of the expansion.
        coeffs (dict): MultiIndex -> length-d array; slot k multiplies
            prod_n H_{l_n}(X^n) in output coordinate k.
    """
    dim: int
    max_order: int
    coeffs: dict[MultiIndex, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1 or self.max_order < 0:
            raise InputError("table needs dim >= 1 and max_order >= 0")
        cleaned = {}
        for L, value in self.coeffs.items():
            L = L if isinstance(L, MultiIndex) else MultiIndex(tuple(L))
            value = np.asarray(value, dtype=float)
            if L.dim != self.dim or value.shape != (self.dim,):
                raise InputError(f"coefficient {L.l} does not match dimension {self.dim}")
            if L.order > self.max_order:
                raise InputError(f"coefficient {L.l} exceeds max_order {self.max_order}")
            cleaned[L] = value
        self.coeffs = dict(sorted(cleaned.items(), key=lambda kv: (kv[0].order, tuple(-v for v in kv[0].l))))

    @property
    def cache_key(self) -> tuple:
        return (self.dim, self.max_order, tuple((L.l, v.tobytes()) for L, v in self.coeffs.items()))

    @property
    def c_g(self) -> float:
        """The weighted sum C_G = sum_L |coeff(L)|^2 * L!."""
        return float(sum(np.dot(v, v) * L.factorial for L, v in self.coeffs.items()))

    def band(self, from_order: int, to_order: int) -> dict[MultiIndex, np.ndarray]:
        return {L: v for L, v in self.coeffs.items() if from_order <= L.order <= to_order}

    def order_zero(self) -> np.ndarray:
        return self.coeffs.get(MultiIndex((0,) * self.dim), np.zeros(self.dim))

    def is_mean_zero(self, tol: float | None = None) -> bool:
        tol = default_rank_tolerance(self) if tol is None else tol
        return bool(np.max(np.abs(self.order_zero())) <= tol)

    def centered(self) -> "HermiteCoefficientTable":
        coeffs = {L: v for L, v in self.coeffs.items() if L.order > 0}
        return HermiteCoefficientTable(self.dim, self.max_order, coeffs)

    def to_document(self) -> dict:
        entries = []
        for L, value in self.coeffs.items():
            for k, v in enumerate(value, start=1):
                if v != 0.0:
                    entries.append({"L": list(L.l), "slot": k, "value": float(v)})
        return {"dim": self.dim, "max_order": self.max_order, "entries": entries}

    @classmethod
    def from_document(cls, doc: dict) -> "HermiteCoefficientTable":
        try:
            dim, max_order = int(doc["dim"]), int(doc["max_order"])
            coeffs: dict[MultiIndex, np.ndarray] = {}
            for entry in doc["entries"]:
                L = MultiIndex(tuple(entry["L"]))
                slot = int(entry["slot"])
                if not 1 <= slot <= dim:
                    raise InputError(f"slot {slot} outside 1..{dim}")
                coeffs.setdefault(L, np.zeros(dim))[slot - 1] += float(entry["value"])
        except InputError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"malformed coefficient table document: {e}") from e
        return cls(dim, max_order, coeffs)

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_document(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "HermiteCoefficientTable":
        return cls.from_document(json.loads(Path(path).read_text(encoding="utf-8")))


def default_rank_tolerance(table: HermiteCoefficientTable) -> float:
    return 1e-8 * (1.0 + np.sqrt(table.c_g))


class NonlinearFunctional:
    """
    A vector functional G: R^d -> R^d.

    Either a closed-form evaluator or a coefficient table read as an exact finite
    expansion. Band operations always go through a table; for evaluators the table
    is extracted once and kept.
    """

    def __init__(self, dim: int, evaluator: Callable[[np.ndarray], np.ndarray] | None = None,
                 table: HermiteCoefficientTable | None = None, name: str = "custom"):
        if (evaluator is None) == (table is None):
            raise InputError("give exactly one of evaluator or table")
        if table is not None and table.dim != dim:
            raise InputError("table dimension does not match functional dimension")
        self.dim = dim
        self.name = name
        self._evaluator = evaluator
        self._table = table

    @classmethod
    def from_table(cls, table: HermiteCoefficientTable, name: str = "table") -> "NonlinearFunctional":
        return cls(table.dim, table=table, name=name)

    @property
    def is_table(self) -> bool:
        return self._table is not None

    @property
    def cache_key(self) -> tuple:
        if self._table is not None:
            return ("table", self._table.cache_key)
        if isinstance(self._evaluator, Hashable):
            # the key keeps the evaluator alive, so equal keys mean the same callable
            return ("evaluator", self.name, self._evaluator)
        return ("table", self.table().cache_key)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise DomainError(f"inputs must have {self.dim} coordinates")
        if self._evaluator is not None:
            return np.asarray(self._evaluator(X), dtype=float)
        return evaluate_truncated(self._table, X, 0, self._table.max_order)

    def table(self, max_order: int | None = None, quad_nodes: int | None = None) -> HermiteCoefficientTable:
        if self._table is None:
            self._table = extract_coeffs(self, max_order or settings.HERMITE_MAX_ORDER,
                                         quad_nodes or settings.HERMITE_QUAD_NODES)
        return self._table

    def mean(self, quad_nodes: int | None = None) -> np.ndarray:
        if self._table is not None:
            return self._table.order_zero().copy()
        return gaussian_expectation(self, self.dim, quad_nodes)

    def second_moment(self, quad_nodes: int | None = None) -> float:
        """E ||G(X)||^2 by quadrature."""
        return float(gaussian_expectation(lambda P: np.sum(self(P) ** 2, axis=-1), self.dim, quad_nodes))

    def check_mean_zero(self, tol: float | None = None) -> None:
        table = self.table()
        tol = default_rank_tolerance(table) if tol is None else tol
        mean = np.max(np.abs(table.order_zero()))
        if mean > tol:
            logger.error(f"Functional {self.name} has mean {mean:.3e} above tolerance {tol:.1e}")
            raise ContractError(f"functional {self.name} is not mean-zero (|E G| = {mean:.3e})")


def extract_coeffs(G: NonlinearFunctional, max_order: int | None = None,
                   quad_nodes: int | None = None) -> HermiteCoefficientTable:
    """
    Coefficients E[G_k(X) prod H_{l_n}(X^n)] / L! by tensor Gauss-Hermite quadrature.

    The projection tensor is built by contracting the weighted node values with the
    Hermite table one axis at a time, so the result does not depend on any
    evaluation order.

    Raises:
        DomainError: when max_order < 1 or quad_nodes <= max_order.
        EvaluationError: when G is not finite at some node.
    """
    max_order = settings.HERMITE_MAX_ORDER if max_order is None else max_order
    quad_nodes = settings.HERMITE_QUAD_NODES if quad_nodes is None else quad_nodes
    if max_order < 1:
        raise DomainError("max_order must be at least 1")
    if quad_nodes < max_order + 1:
        raise DomainError("quad_nodes must exceed max_order")

    d = G.dim
    if quad_nodes**d > 2**24:
        logger.warning(f"Tensor quadrature with {quad_nodes}^{d} nodes is very large")

    points, weights = _tensor_grid(d, quad_nodes)
    values = G(points)
    if not np.all(np.isfinite(values)):
        logger.error(f"Functional {G.name} is not finite at some quadrature node")
        raise EvaluationError(f"functional {G.name} produced non-finite values at quadrature nodes")

    nodes, _ = gauss_hermite_rule(quad_nodes)
    H = hermite_table(max_order, nodes)
    proj = values * weights[..., None]
    for axis in range(d):
        proj = np.moveaxis(np.tensordot(proj, H, axes=([axis], [1])), -1, axis)

    coeffs: dict[MultiIndex, np.ndarray] = {}
    for order in range(max_order + 1):
        for L in multi_indices(d, order):
            coeffs[L] = proj[L.l] / L.factorial
    table = HermiteCoefficientTable(d, max_order, coeffs)
    logger.debug(f"Extracted {len(coeffs)} Hermite coefficients for {G.name} (C_G = {table.c_g:.6g})")
    return table


def hermite_rank(table: HermiteCoefficientTable, tol: float | None = None) -> int:
    """
    Smallest order r >= 1 carrying a coefficient above ``tol`` in absolute value.

    Raises:
        ContractError: when the order-0 coefficients are not below tol.
        RankUndeterminedError: when every coefficient up to max_order is below tol.
    """
    tol = default_rank_tolerance(table) if tol is None else tol
    if np.max(np.abs(table.order_zero())) > tol:
        raise ContractError("functional has a nonzero mean; the Hermite rank is defined for mean-zero G")
    for order in range(1, table.max_order + 1):
        if any(np.max(np.abs(v)) > tol for v in table.band(order, order).values()):
            return order
    raise RankUndeterminedError(f"rank undetermined at truncation order {table.max_order}")


def evaluate_truncated(table: HermiteCoefficientTable, X, from_order: int, to_order: int) -> np.ndarray:
    """
    The order band [from_order, to_order] of the expansion at X.

    ``X`` has shape (..., d); the result has the same shape.
    """
    if not 0 <= from_order <= to_order <= table.max_order:
        raise DomainError(f"band [{from_order}, {to_order}] outside table orders 0..{table.max_order}")
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != table.dim:
        raise DomainError(f"inputs must have {table.dim} coordinates")

    H = [hermite_table(to_order, X[..., n]) for n in range(table.dim)]
    out = np.zeros(X.shape)
    for L, coeff in table.band(from_order, to_order).items():
        prod = np.ones(X.shape[:-1])
        for n, l in enumerate(L.l):
            if l:
                prod = prod * H[n][l]
        out += prod[..., None] * coeff
    return out


def rank_one_mixing_matrix(table: HermiteCoefficientTable) -> np.ndarray:
    """
    The matrix B with B[k, n] = coefficient of H_1(x^n) in slot k.

    The rank-1 band of G is x -> B x, so the reduced process is B times the
    partial-sum process of the inputs themselves.
    """
    B = np.zeros((table.dim, table.dim))
    for n in range(table.dim):
        unit = [0] * table.dim
        unit[n] = 1
        B[:, n] = table.coeffs.get(MultiIndex(tuple(unit)), np.zeros(table.dim))
    return B


def builtin_table(name: str, dim: int = 2, max_order: int | None = None) -> HermiteCoefficientTable:
    """
    Exact tables of the shipped functionals.

    - ``identity``: G(x) = x
    - ``centered_square``: ((x1)^2 - 1, x1 x2, 0, ...)
    - ``hermite3``: (H_3(x1), 0, ...)
    - ``acceptance``: x + 0.5 (H_3(x1), H_2(x1) H_1(x2), 0, ...)
    """
    max_order = settings.HERMITE_MAX_ORDER if max_order is None else max_order
    if name not in BUILTIN_FUNCTIONALS:
        raise InputError(f"unknown builtin functional {name!r}; choose from {sorted(BUILTIN_FUNCTIONALS)}")
    if name != "identity" and dim < 2:
        raise InputError(f"builtin functional {name!r} needs dim >= 2")

    def unit(*pairs) -> MultiIndex:
        l = [0] * dim
        for n, v in pairs:
            l[n] = v
        return MultiIndex(tuple(l))

    def slot(k: int, value: float) -> np.ndarray:
        v = np.zeros(dim)
        v[k] = value
        return v

    coeffs: dict[MultiIndex, np.ndarray] = {}
    if name in ("identity", "acceptance"):
        for n in range(dim):
            coeffs[unit((n, 1))] = slot(n, 1.0)
    if name == "centered_square":
        coeffs[unit((0, 2))] = slot(0, 1.0)
        coeffs[unit((0, 1), (1, 1))] = slot(1, 1.0)
    if name == "hermite3":
        coeffs[unit((0, 3))] = slot(0, 1.0)
    if name == "acceptance":
        coeffs[unit((0, 3))] = slot(0, 0.5)
        coeffs[unit((0, 2), (1, 1))] = slot(1, 0.5)
    return HermiteCoefficientTable(dim, max_order, coeffs)


def load_functional(spec: str, dim: int) -> NonlinearFunctional:
    """A builtin name or a path to a JSON coefficient table."""
    if spec in BUILTIN_FUNCTIONALS:
        return NonlinearFunctional.from_table(builtin_table(spec, dim), name=spec)
    path = Path(spec)
    if not path.exists():
        raise InputError(f"functional {spec!r} is neither a builtin name nor an existing file")
    table = HermiteCoefficientTable.load(path)
    if table.dim != dim:
        raise InputError(f"table {path} has dim {table.dim}, expected {dim}")
    return NonlinearFunctional.from_table(table, name=path.stem)
