"""
Operator fractional Brownian motion through its real harmonizable form.

X(t) = int_0^inf G1(x, t) W1(dx) + int_0^inf G2(x, t) W2(dx) with

    G1(x, t) = x^{-(D - I/2)} [sin(tx) A1 + (cos(tx) - 1) A2] / x
    G2(x, t) = x^{-(D - I/2)} [sin(tx) A2 + (1 - cos(tx)) A1] / x

Writing a = tx, b = sx, the covariance integrand collapses to

    x^{-2} E(x) [P(a, b) M_sym + Q(a, b) M_anti] E(x)^T,   E(x) = x^{-(D - I/2)}
    P = 4 sin(a/2) sin(b/2) cos((a - b)/2),   Q = 4 sin((a - b)/2) sin(a/2) sin(b/2)
    M_sym = A1 A1^T + A2 A2^T,                M_anti = A1 A2^T - A2 A1^T

so time reversibility (A2 A1^T = A1 A2^T) is exactly M_anti = 0. The pieces of
the integral near 0 and beyond the last panel are Lyapunov solutions.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import solve_continuous_lyapunov

from ofbmlab.experiments.schemas import QuadratureConfig
from ofbmlab.models import PathEnsemble
from ofbmlab.services.linop import LinearOperator, mat_pow, mat_pow_batch
from ofbmlab.utils.cache import array_cache
from ofbmlab.utils.constants import (
    COVARIANCE_T_MAX,
    DEFICIT_WARNING,
    QUAD_TAIL_PHASE,
    SIM_GEOMETRIC_SHARE,
    SIM_X_LOW,
)
from ofbmlab.utils.exceptions import AccuracyError, DomainError, InputError, ModelDomainError
from ofbmlab.utils.logger import logger
from ofbmlab.utils.pool import map_ordered
from ofbmlab.utils.rng import derive_seed, make_generator
from ofbmlab.utils.settings import settings


@dataclass(frozen=True, eq=False)
class SpectralSpec:
    """
    Real spectral form (A1, A2, D) of an OFBM.

    Attributes:
        A1 (np.ndarray): Multiplier of the sine part of W1.
        A2 (np.ndarray): Multiplier of the cosine part of W1.
        D (LinearOperator): Exponent with spectral bounds inside (0, 1).
    """
    A1: np.ndarray = field(repr=False)
    A2: np.ndarray = field(repr=False)
    D: LinearOperator

    def __post_init__(self):
        d = self.D.dim
        for name in ("A1", "A2"):
            arr = np.array(getattr(self, name), dtype=float).reshape(d, d)
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        bounds = self.D.bounds
        if not bounds.inside(0.0, 1.0):
            logger.error(f"Spectral spec exponent bounds ({bounds.lambda_min}, {bounds.lambda_max}) outside (0, 1)")
            raise ModelDomainError("spectral bounds of D must lie strictly inside (0, 1)")

    @classmethod
    def brownian_like(cls, D: LinearOperator) -> "SpectralSpec":
        """A1 = I, A2 = 0: independent coordinates for diagonal D."""
        return cls(np.eye(D.dim), np.zeros((D.dim, D.dim)), D)

    @property
    def dim(self) -> int:
        return self.D.dim

    @property
    def cache_key(self) -> bytes:
        return self.A1.tobytes() + self.A2.tobytes() + self.D.cache_key

    @property
    def time_reversible(self) -> bool:
        return bool(np.allclose(self.A2 @ self.A1.T, self.A1 @ self.A2.T, rtol=0.0, atol=1e-12))

    @cached_property
    def shifted_exponent(self) -> LinearOperator:
        """-(D - I/2), the exponent of the x power in the kernels."""
        return -self.D.shifted(-0.5)

    @cached_property
    def m_sym(self) -> np.ndarray:
        return self.A1 @ self.A1.T + self.A2 @ self.A2.T

    @cached_property
    def m_anti(self) -> np.ndarray:
        return self.A1 @ self.A2.T - self.A2 @ self.A1.T

    def to_document(self) -> dict:
        return {"A1": self.A1.ravel().tolist(), "A2": self.A2.ravel().tolist(), "D": self.D.to_rows()}


def _p_factor(a, b):
    return 4.0 * np.sin(a / 2) * np.sin(b / 2) * np.cos((a - b) / 2)


def _q_factor(a, b):
    return 4.0 * np.sin((a - b) / 2) * np.sin(a / 2) * np.sin(b / 2)


def kernel_eval(spec: SpectralSpec, x: float, t: float, which: int) -> np.ndarray:
    """
    G1(x, t) or G2(x, t) as a d x d matrix.

    Raises:
        DomainError: when x <= 0 or ``which`` is not 1 or 2.
    """
    if x <= 0:
        raise DomainError("kernel frequency x must be positive")
    if which not in (1, 2):
        raise DomainError("which must be 1 or 2")
    E = mat_pow(x, spec.shifted_exponent).entries
    sin_part = np.sin(t * x) / x
    cos_part = (np.cos(t * x) - 1.0) / x
    if which == 1:
        return E @ (sin_part * spec.A1 + cos_part * spec.A2)
    return E @ (sin_part * spec.A2 - cos_part * spec.A1)


def _check_time(t: float) -> None:
    if not np.isfinite(t) or not 0.0 <= t <= COVARIANCE_T_MAX:
        raise DomainError(f"time {t} outside the quadrature domain [0, {COVARIANCE_T_MAX}]")


@array_cache(maxsize=16)
def _quadrature_grid(spec: SpectralSpec, x_low: float, x_high: float, panel_width: float,
                     gauss_points: int, log_panels: int) -> tuple[np.ndarray, ...]:
    """Nodes, weights and the matrices x^-2 E M E^T on (x_low, x_high)."""
    g, w = leggauss(gauss_points)

    edges = np.linspace(np.log(x_low), 0.0, log_panels + 1)
    half, mid = 0.5 * np.diff(edges), 0.5 * (edges[1:] + edges[:-1])
    u = half[:, None] * g[None, :] + mid[:, None]
    x_geo = np.exp(u).ravel()
    w_geo = (half[:, None] * w[None, :] * np.exp(u)).ravel()

    n_lin = int(np.ceil((x_high - 1.0) / panel_width))
    edges = np.minimum(1.0 + panel_width * np.arange(n_lin + 1), x_high)
    half, mid = 0.5 * np.diff(edges), 0.5 * (edges[1:] + edges[:-1])
    x_lin = (half[:, None] * g[None, :] + mid[:, None]).ravel()
    w_lin = (half[:, None] * w[None, :]).ravel()

    x = np.concatenate([x_geo, x_lin])
    weights = np.concatenate([w_geo, w_lin])
    E = mat_pow_batch(x, spec.shifted_exponent)
    scale = (weights / x**2)[:, None, None]
    sym = scale * (E @ spec.m_sym @ np.swapaxes(E, 1, 2))
    anti = scale * (E @ spec.m_anti @ np.swapaxes(E, 1, 2))
    return x, sym, anti


def _panel_sum(spec: SpectralSpec, t: float, s: float, quad: QuadratureConfig, level: int) -> np.ndarray:
    x, sym, anti = _quadrature_grid(
        spec, quad.x_low, quad.x_high, quad.panel_width / 2**level, quad.gauss_points, quad.log_panels * 2**level
    )
    a, b = t * x, s * x
    return np.tensordot(_p_factor(a, b), sym, axes=(0, 0)) + np.tensordot(_q_factor(a, b), anti, axes=(0, 0))


def _spectral_density(spec: SpectralSpec, M: np.ndarray, x) -> np.ndarray:
    """x^-2 E(x) M E(x)^T for scalar or 1-d ``x``."""
    if np.ndim(x) == 0:
        E = mat_pow(float(x), spec.shifted_exponent).entries
        return E @ M @ E.T / x**2
    E = mat_pow_batch(x, spec.shifted_exponent)
    return (E @ M @ np.swapaxes(E, 1, 2)) / (x**2)[:, None, None]


def _oscillatory_tail(spec: SpectralSpec, M: np.ndarray, omega: float, X: float,
                      gauss_points: int) -> tuple[np.ndarray, np.ndarray]:
    """
    int_X^inf f(x) cos(omega x) dx and int_X^inf f(x) sin(omega x) dx for
    f(x) = x^-2 E(x) M E(x)^T and omega > 0.

    Up to Y = max(X, QUAD_TAIL_PHASE / omega) the integrand goes through log
    panels of one period or less at their top; two integrations by parts close
    (Y, inf), using f'(x) = -(f + D f + f D^T) / x.
    """
    Y = max(X, QUAD_TAIL_PHASE / omega)
    cos_part = np.zeros_like(M, dtype=float)
    sin_part = np.zeros_like(M, dtype=float)
    if Y > X:
        g, w = leggauss(gauss_points)
        n_panels = int(np.ceil(np.log(Y / X) * QUAD_TAIL_PHASE / (2.0 * np.pi)))
        edges = np.linspace(np.log(X), np.log(Y), n_panels + 1)
        half, mid = 0.5 * np.diff(edges), 0.5 * (edges[1:] + edges[:-1])
        u = half[:, None] * g[None, :] + mid[:, None]
        x = np.exp(u).ravel()
        f = (half[:, None] * w[None, :] * np.exp(u)).ravel()[:, None, None] * _spectral_density(spec, M, x)
        cos_part += np.tensordot(np.cos(omega * x), f, axes=(0, 0))
        sin_part += np.tensordot(np.sin(omega * x), f, axes=(0, 0))

    D = spec.D.entries
    f_Y = _spectral_density(spec, M, Y)
    slope = -(f_Y + D @ f_Y + f_Y @ D.T) / Y
    c, s = np.cos(omega * Y), np.sin(omega * Y)
    cos_part += -f_Y * s / omega - slope * c / omega**2
    sin_part += f_Y * c / omega - slope * s / omega**2
    return cos_part, sin_part


def _end_corrections(spec: SpectralSpec, t: float, s: float, quad: QuadratureConfig) -> np.ndarray:
    """
    Analytic pieces on (0, x_low) and (x_high, inf).

    Near 0, P ~ t s x^2 leaves t s int_0^{x_low} E M E^T dx; beyond x_high the
    non-oscillating part of P integrates in closed form and each oscillating
    term goes through ``_oscillatory_tail``.
    """
    d = spec.dim
    eye = np.eye(d)
    D = spec.D.entries

    E_low = mat_pow(quad.x_low, spec.shifted_exponent).entries
    low = solve_continuous_lyapunov(D - eye, -spec.m_sym)
    lower = t * s * quad.x_low * (E_low @ low @ E_low.T)

    X = quad.x_high
    E_high = mat_pow(X, spec.shifted_exponent).entries
    high = solve_continuous_lyapunov(-D, -spec.m_sym)
    constant = 1.0 + (1.0 if t == s else 0.0)
    upper = constant * (E_high @ high @ E_high.T) / X

    # P = 1 - cos(a) - cos(b) + cos(a - b); Q = sin(a - b) - sin(a) + sin(b)
    for sign, omega in ((-1.0, t), (-1.0, s), (1.0, t - s)):
        if omega != 0.0:
            upper += sign * _oscillatory_tail(spec, spec.m_sym, abs(omega), X, quad.gauss_points)[0]
    if np.any(spec.m_anti != 0.0):
        for sign, omega in ((1.0, t - s), (-1.0, t), (1.0, s)):
            if omega != 0.0:
                tail = _oscillatory_tail(spec, spec.m_anti, abs(omega), X, quad.gauss_points)[1]
                upper += sign * np.sign(omega) * tail
    return lower + upper


def covariance(spec: SpectralSpec, t: float, s: float, quad: Optional[QuadratureConfig] = None) -> np.ndarray:
    """
    E[X(t) X(s)^T] by panel quadrature with analytic end corrections.

    Panels are halved until two successive levels agree to ``quad.tol`` in
    relative Frobenius norm.

    Raises:
        DomainError: when t or s lies outside the quadrature domain.
        AccuracyError: when the refinement limit is reached.
    """
    quad = quad or QuadratureConfig()
    _check_time(t)
    _check_time(s)
    if t == 0.0 or s == 0.0:
        return np.zeros((spec.dim, spec.dim))

    corrections = _end_corrections(spec, t, s, quad)
    previous = _panel_sum(spec, t, s, quad, 0)
    for level in range(1, quad.max_refinements + 1):
        current = _panel_sum(spec, t, s, quad, level)
        change = np.linalg.norm(current - previous) / max(np.linalg.norm(current), 1e-300)
        if change <= quad.tol:
            return current + corrections
        previous = current
    if quad.max_refinements == 0:
        return previous + corrections
    logger.error(f"Covariance quadrature at (t, s) = ({t}, {s}) did not converge: change {change:.2e}")
    raise AccuracyError(f"quadrature relative change {change:.2e} above tolerance {quad.tol:.1e}")


def gamma(spec: SpectralSpec, quad: Optional[QuadratureConfig] = None) -> np.ndarray:
    """Gamma = E[X(1) X(1)^T], symmetrized."""
    G = covariance(spec, 1.0, 1.0, quad)
    return 0.5 * (G + G.T)


def oss_covariance_check(spec: SpectralSpec, c: float, t: float, quad: Optional[QuadratureConfig] = None) -> float:
    """Relative Frobenius error of covariance(ct, ct) against c^D covariance(t, t) c^{D*}."""
    if c <= 0:
        raise DomainError("scale c must be positive")
    lhs = covariance(spec, c * t, c * t, quad)
    P = mat_pow(c, spec.D).entries
    rhs = P @ covariance(spec, t, t, quad) @ P.T
    return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(lhs), 1e-300))


def stationary_increment_check(spec: SpectralSpec, pairs: Iterable[tuple[float, float]],
                               quad: Optional[QuadratureConfig] = None) -> float:
    """
    Largest relative error of E[(X(t) - X(s))(X(t) - X(s))^T] against
    |t - s|^D Gamma |t - s|^{D*} over the given pairs.
    """
    G = gamma(spec, quad)
    worst = 0.0
    for t, s in pairs:
        if t == s:
            continue
        inc = (covariance(spec, t, t, quad) - covariance(spec, t, s, quad)
               - covariance(spec, s, t, quad) + covariance(spec, s, s, quad))
        P = mat_pow(abs(t - s), spec.D).entries
        target = P @ G @ P.T
        worst = max(worst, float(np.linalg.norm(inc - target) / np.linalg.norm(target)))
    return worst


def time_reversibility_defect(spec: SpectralSpec, pairs: Iterable[tuple[float, float]],
                              quad: Optional[QuadratureConfig] = None) -> float:
    """Largest ||C(t, s) - C(t, s)^T|| / ||C(t, s)|| over the pairs; zero for time-reversible specs."""
    worst = 0.0
    for t, s in pairs:
        C = covariance(spec, t, s, quad)
        norm = np.linalg.norm(C)
        if norm > 0:
            worst = max(worst, float(np.linalg.norm(C - C.T) / norm))
    return worst


@array_cache(maxsize=8)
def simulation_cells(spec: SpectralSpec, n_freq: int, x_max: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cell midpoints, widths and E(x_mid) of the hybrid frequency grid.

    Geometric cells cover (SIM_X_LOW, min(1, x_max)], linear cells cover [1, x_max].
    """
    if n_freq < 2:
        raise DomainError("n_freq must be at least 2")
    if x_max <= 0:
        raise DomainError("x_max must be positive")
    top = min(1.0, x_max)
    n_geo = n_freq if x_max <= 1.0 else max(1, int(n_freq * SIM_GEOMETRIC_SHARE))
    geo_edges = np.geomspace(min(SIM_X_LOW, top / 2), top, n_geo + 1)
    mids = [np.sqrt(geo_edges[1:] * geo_edges[:-1])]
    widths = [np.diff(geo_edges)]
    if x_max > 1.0:
        lin_edges = np.linspace(1.0, x_max, n_freq - n_geo + 1)
        mids.append(0.5 * (lin_edges[1:] + lin_edges[:-1]))
        widths.append(np.diff(lin_edges))
    x = np.concatenate(mids)
    dx = np.concatenate(widths)
    return x, dx, mat_pow_batch(x, spec.shifted_exponent)


def discretized_covariance(spec: SpectralSpec, t: float, s: float, n_freq: int, x_max: float) -> np.ndarray:
    """Exact covariance of the Riemann-Ito sum that ``simulate`` draws from."""
    x, dx, E = simulation_cells(spec, n_freq, x_max)
    a, b = t * x, s * x
    scale = dx / x**2
    sym = E @ spec.m_sym @ np.swapaxes(E, 1, 2)
    anti = E @ spec.m_anti @ np.swapaxes(E, 1, 2)
    return np.tensordot(scale * _p_factor(a, b), sym, axes=(0, 0)) + np.tensordot(scale * _q_factor(a, b), anti, axes=(0, 0))


def discretization_deficit(spec: SpectralSpec, n_freq: int, x_max: float,
                           quad: Optional[QuadratureConfig] = None) -> float:
    """Relative Frobenius gap at t = 1 between the simulated law and the quadrature covariance."""
    target = gamma(spec, quad)
    approx = discretized_covariance(spec, 1.0, 1.0, n_freq, x_max)
    return float(np.linalg.norm(target - approx) / np.linalg.norm(target))


def simulate(spec: SpectralSpec, times: Sequence[float], n_freq: Optional[int] = None,
             x_max: Optional[float] = None, seed: int = 0) -> np.ndarray:
    """
    One path of the Riemann-Ito discretization on ``times``; shape (T, d).

    Each cell contributes G1(x_mid, t) xi1 sqrt(dx) + G2(x_mid, t) xi2 sqrt(dx)
    with independent standard normal vectors, so X(0) = 0 exactly.
    """
    n_freq = settings.N_FREQ if n_freq is None else n_freq
    x_max = settings.X_MAX if x_max is None else x_max
    x, dx, E = simulation_cells(spec, n_freq, x_max)
    times = np.asarray(times, dtype=float)

    rng = make_generator(seed)
    xi1 = rng.standard_normal((x.size, spec.dim))
    xi2 = rng.standard_normal((x.size, spec.dim))
    scale = (np.sqrt(dx) / x)[:, None]
    u = scale * np.einsum("cij,cj->ci", E, xi1 @ spec.A1.T + xi2 @ spec.A2.T)
    v = scale * np.einsum("cij,cj->ci", E, xi1 @ spec.A2.T - xi2 @ spec.A1.T)

    phase = np.outer(times, x)
    # cos(tx) - 1 = -2 sin^2(tx / 2)
    return np.sin(phase) @ u - 2.0 * np.sin(phase / 2) ** 2 @ v


def simulate_ensemble(spec: SpectralSpec, times: Sequence[float], replicates: int, master_seed: int,
                      n_freq: Optional[int] = None, x_max: Optional[float] = None,
                      quad: Optional[QuadratureConfig] = None, threads: Optional[int] = None) -> PathEnsemble:
    """Independent simulated paths with derived seeds; the t = 1 deficit goes into the metadata."""
    if replicates < 1:
        raise DomainError("replicates must be at least 1")
    n_freq = settings.N_FREQ if n_freq is None else n_freq
    x_max = settings.X_MAX if x_max is None else x_max
    times = np.asarray(times, dtype=float)
    seeds = [derive_seed(master_seed, r) for r in range(replicates)]

    logger.info(f"OFBM ensemble start: replicates={replicates} n_freq={n_freq} x_max={x_max}")
    paths = map_ordered(lambda seed: simulate(spec, times, n_freq, x_max, seed), seeds, threads)
    deficit = discretization_deficit(spec, n_freq, x_max, quad)
    meta = {
        "spec": spec.to_document(),
        "n_freq": n_freq,
        "x_max": x_max,
        "master_seed": int(master_seed),
        "seeds": seeds,
        "band": "target",
        "time_reversible": spec.time_reversible,
        "discretization_deficit": deficit,
        "accuracy_warning": deficit > DEFICIT_WARNING,
    }
    if deficit > DEFICIT_WARNING:
        logger.warning(f"Discretization deficit {deficit:.3%} at t = 1 exceeds {DEFICIT_WARNING:.0%}")
    logger.info(f"OFBM ensemble finished: deficit={deficit:.3e}")
    return PathEnsemble(times, np.stack(paths), meta)
