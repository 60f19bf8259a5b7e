"""
Experiment Controller Module.

ExperimentController turns an ExperimentConfig into domain objects (exponent,
correlation model, functional, spectral spec) and implements one method per
CLI subcommand. Every method writes its artifacts under the configured output
directory and returns a CommandResult carrying the verdict.
"""

import json
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from ofbmlab.experiments.schemas import (
    ConvergeRow,
    ExperimentConfig,
    ModelDocument,
    QuadratureConfig,
    SuiteReport,
    TableDocument,
    VerificationReport,
)
from ofbmlab.models import PathEnsemble
from ofbmlab.services import approx, corr, hermite, ofbm, stats
from ofbmlab.services.hermite import HermiteCoefficientTable, MultiIndex, NonlinearFunctional
from ofbmlab.services.linop import LinearOperator
from ofbmlab.utils.constants import (
    BUILTIN_FUNCTIONALS,
    DEFAULT_TIME_STEPS,
    MEHLER_MAX_ORDER,
    MEHLER_RHO,
    MEHLER_SAMPLES,
    ORACLE_TIMES,
    ORTHOGONALITY_MAX_ORDER,
    TELESCOPING_N,
)
from ofbmlab.utils.exceptions import ConfigError, ModelDomainError
from ofbmlab.utils.logger import logger
from ofbmlab.utils.rng import derive_seed, make_generator
from ofbmlab.utils.settings import settings

# Stream indices of the auxiliary draws derived from the master seed
_OFBM_STREAM = 2**32
_ENERGY_STREAM = 2**32 + 1
_MEHLER_STREAM = 2**32 + 2


@dataclass
class CommandResult:
    command: str
    passed: bool
    payload: dict[str, Any] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    summary: str = ""


@dataclass
class SweepPoint:
    N: int
    bands: dict[str, PathEnsemble]
    row: ConvergeRow
    cov_error_se: float


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def _write_frame(path: Path, frame: pd.DataFrame, meta: dict) -> list[str]:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    sidecar = _write_json(path.with_suffix(".json"), meta)
    return [str(path), str(sidecar)]


def _rel_frob(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


class ExperimentController:
    """
    Runs the lab's experiments for one configuration.

    Attributes:
        config (ExperimentConfig): Validated experiment configuration.
        threads (int): Worker threads for replicate fan-out.
        out_dir (Path): Directory receiving CSV and JSON artifacts.
    """

    def __init__(self, config: ExperimentConfig, threads: Optional[int] = None):
        self.config = config
        self.threads = settings.THREADS if threads is None else threads
        self.out_dir = Path(config.out)
        self.config_hash = config.config_hash()
        logger.info(f"Experiment controller ready (config {self.config_hash[:12]}, threads={self.threads})")

    # --- domain objects -------------------------------------------------

    @cached_property
    def D(self) -> LinearOperator:
        return LinearOperator.from_rows(self.config.D, self.config.dim)

    @cached_property
    def gamma_in(self) -> np.ndarray:
        d = self.config.dim
        if self.config.Gamma is None:
            return np.eye(d)
        return np.asarray(self.config.Gamma, dtype=float).reshape(d, d)

    @cached_property
    def model(self) -> corr.CorrelationModel:
        cfg = self.config
        if cfg.model_path is not None:
            try:
                doc = ModelDocument.model_validate_json(Path(cfg.model_path).read_text(encoding="utf-8"))
            except ValidationError as e:
                raise ConfigError(f"invalid model document {cfg.model_path}: {e}") from e
            return corr.model_from_document(doc.model_dump(), long_memory=cfg.long_memory)
        if cfg.family == "ofgn":
            return corr.ofgn_model(self.D, self.gamma_in, long_memory=cfg.long_memory)
        if cfg.family == "white":
            return corr.white_noise_model(self.gamma_in, self.D)
        raise ConfigError("table models must be given through model_path")

    @cached_property
    def functional(self) -> NonlinearFunctional:
        name = self.config.functional
        if name not in BUILTIN_FUNCTIONALS:
            try:
                TableDocument.model_validate_json(Path(name).read_text(encoding="utf-8"))
            except ValidationError as e:
                raise ConfigError(f"invalid coefficient table {name}: {e}") from e
        return hermite.load_functional(name, self.config.dim)

    @cached_property
    def spectral_spec(self) -> ofbm.SpectralSpec:
        d = self.config.dim
        sc = self.config.spectral
        A1 = np.eye(d) if sc.A1 is None else np.asarray(sc.A1, dtype=float).reshape(d, d)
        A2 = np.zeros((d, d)) if sc.A2 is None else np.asarray(sc.A2, dtype=float).reshape(d, d)
        D = self.D if sc.D is None else LinearOperator.from_rows(sc.D, d)
        return ofbm.SpectralSpec(A1, A2, D)

    @property
    def quad(self) -> QuadratureConfig:
        return self.config.quadrature

    def time_grid(self) -> np.ndarray:
        """Configured times (or {k/16}) joined with the law times and tightness windows."""
        cfg = self.config
        base = cfg.times if cfg.times is not None else list(np.arange(DEFAULT_TIME_STEPS + 1) / DEFAULT_TIME_STEPS)
        points = set(float(t) for t in base) | set(cfg.law_times) | {0.0, 1.0}
        for s, t in cfg.tightness_pairs:
            points |= {float(s), float(t)}
        return np.array(sorted(points))

    def limit_covariance(self) -> np.ndarray:
        """
        B Gamma B^T for rank-1 functionals whose mixing matrix B commutes with D.

        NaN otherwise, since the limit covariance then has no closed form here.
        """
        d = self.config.dim
        table = self.functional.table()
        if hermite.hermite_rank(table) != 1:
            return np.full((d, d), np.nan)
        B = hermite.rank_one_mixing_matrix(table)
        D = self.model.target_D.entries
        if not np.allclose(B @ D, D @ B, rtol=0.0, atol=1e-12):
            return np.full((d, d), np.nan)
        return B @ self.model.target_Gamma @ B.T

    def _ensemble_spec(self, N: int, G: Optional[NonlinearFunctional] = None, band: Optional[str] = None) -> approx.EnsembleSpec:
        cfg = self.config
        return approx.EnsembleSpec(
            G=G or self.functional,
            model=self.model,
            D=self.D,
            N=N,
            replicates=cfg.replicates,
            master_seed=cfg.seed,
            times=self.time_grid(),
            band=band or cfg.band,
            m=cfg.m,
            method=cfg.method,
        )

    def _meta(self, **extra) -> dict:
        return {"config_hash": self.config_hash, **extra}

    # --- subcommands ----------------------------------------------------

    def simulate_ofbm(self) -> CommandResult:
        cfg = self.config
        ens = ofbm.simulate_ensemble(
            self.spectral_spec, self.time_grid(), cfg.replicates, derive_seed(cfg.seed, _OFBM_STREAM),
            cfg.spectral.n_freq, cfg.spectral.x_max, self.quad, self.threads,
        )
        path = self.out_dir / "ofbm_paths.csv"
        sidecar = ens.export_csv(path, self._meta())
        payload = {
            "discretization_deficit": ens.meta["discretization_deficit"],
            "accuracy_warning": ens.meta["accuracy_warning"],
            "time_reversible": ens.meta["time_reversible"],
            "gamma": ofbm.gamma(self.spectral_spec, self.quad).ravel().tolist(),
        }
        return CommandResult("simulate-ofbm", True, payload, [str(path), str(sidecar)],
                             f"simulated {cfg.replicates} OFBM paths, deficit {payload['discretization_deficit']:.3e}")

    def simulate_approx(self) -> CommandResult:
        artifacts = []
        for N in self.config.N_list:
            ens = approx.ensemble(self._ensemble_spec(N), self.threads)
            path = self.out_dir / f"approx_{self.config.band}_N{N}.csv"
            artifacts += [str(path), str(ens.export_csv(path, self._meta()))]
        return CommandResult("simulate-approx", True, {"N_list": self.config.N_list}, artifacts,
                             f"wrote {len(self.config.N_list)} ensembles")

    def hermite_rank(self) -> CommandResult:
        table = self.functional.table()
        rank = hermite.hermite_rank(table)
        payload = {"rank": rank, "c_g": table.c_g, "table": table.to_document(),
                   "mixing_matrix": hermite.rank_one_mixing_matrix(table).ravel().tolist()}
        path = _write_json(self.out_dir / "hermite_rank.json", {**payload, **self._meta()})
        return CommandResult("hermite-rank", True, payload, [str(path)], str(rank))

    def check_condition(self) -> CommandResult:
        cfg = self.config
        report = corr.check_condition_h(self.model, cfg.condition_m, cfg.N_grid)
        psd_ok, smallest = corr.check_psd(self.model, max(cfg.N_grid))
        payload = {**report.model_dump(), "embedding_psd": psd_ok, "embedding_min_eigenvalue": smallest}
        path = _write_json(self.out_dir / "condition_h.json", {**payload, **self._meta()})
        passed = report.passed and psd_ok
        return CommandResult("check-condition", passed, payload, [str(path)],
                             f"sum_bound={report.passes_sum_bound} decay={report.passes_decay} "
                             f"exact={report.passes_exact_asymptotic} psd={psd_ok}")

    def _tightness_report(self, ens: PathEnsemble) -> VerificationReport:
        cfg = self.config
        lam = self.D.bounds.lambda_min
        fit = stats.tightness_exponent(ens, cfg.tightness_pairs, cfg.alpha, lam)
        return VerificationReport(
            test="tightness_exponent",
            statistic=fit.slope,
            threshold=fit.threshold,
            passed=fit.passed,
            standard_error=fit.ci_half_width / 1.959963984540054,
            replicates=ens.replicates,
            config_hash=self.config_hash,
            details={"ci_half_width": fit.ci_half_width, "alpha": cfg.alpha, "lambda_min": lam,
                     "alpha_constraint_lambda_min_gt": 1.0 / (2.0 * cfg.alpha),
                     "log_lengths": fit.log_lengths.tolist(), "log_moments": fit.log_moments.tolist()},
            note="passes when slope >= 2 alpha (lambda_min - delta) - CI half-width",
        )

    def tightness(self) -> CommandResult:
        N = self.config.N_list[-1]
        ens = approx.ensemble(self._ensemble_spec(N, band="full"), self.threads)
        report = self._tightness_report(ens)
        path = _write_json(self.out_dir / "tightness.json", report.model_dump())
        return CommandResult("tightness", report.passed, report.model_dump(), [str(path)],
                             f"slope {report.statistic:.4f} vs threshold {report.threshold:.4f}")

    def _law_test(self, ens: PathEnsemble, target: PathEnsemble, approx_reference: np.ndarray) -> stats.EnergyTest:
        cfg = self.config
        p = len(cfg.law_times)
        a = np.hstack([ens.values_at(t) for t in cfg.law_times])
        b = np.hstack([target.values_at(t) for t in cfg.law_times])
        if not np.all(np.isfinite(approx_reference)):
            approx_reference = stats.cov_estimate(ens, 1.0).cov
        ofbm_reference = ofbm.gamma(self.spectral_spec, self.quad)
        a = stats.whiten(a, np.kron(np.eye(p), approx_reference))
        b = stats.whiten(b, np.kron(np.eye(p), ofbm_reference))
        return stats.energy_distance(a, b, cfg.permutations, derive_seed(cfg.seed, _ENERGY_STREAM))

    def _target_ensemble(self) -> PathEnsemble:
        cfg = self.config
        return ofbm.simulate_ensemble(
            self.spectral_spec, np.array(sorted(set(cfg.law_times) | {1.0})), cfg.replicates,
            derive_seed(cfg.seed, _OFBM_STREAM), cfg.spectral.n_freq, cfg.spectral.x_max, self.quad, self.threads,
        )

    def _sweep(self) -> list[SweepPoint]:
        target_cov = self.limit_covariance()
        target = self._target_ensemble()
        points = []
        for N in self.config.N_list:
            started = time.perf_counter()
            bands = approx.ensemble_bands(self._ensemble_spec(N), threads=self.threads)
            full, head, tail = bands["full"], bands["head_m"], bands["tail_m"]

            est = stats.cov_estimate(full, 1.0)
            if np.all(np.isfinite(target_cov)):
                cov_err = _rel_frob(est.cov, target_cov)
                cov_se = float(np.linalg.norm(est.se) / np.linalg.norm(target_cov))
            else:
                cov_err, cov_se = float("nan"), float("nan")
            head_energy = float(np.mean(np.sum(head.values_at(1.0) ** 2, axis=1)))
            tail_energy = float(np.mean(np.sum(tail.values_at(1.0) ** 2, axis=1)))
            law = self._law_test(full, target, target_cov)

            row = ConvergeRow(
                N=N,
                cov_frob_rel_err=cov_err,
                tail_ratio=tail_energy / head_energy if head_energy > 0 else float("nan"),
                energy_stat=law.statistic,
                energy_pvalue=law.p_value,
                wall_seconds=time.perf_counter() - started if settings.RECORD_TIMINGS else None,
            )
            logger.info(f"Sweep row N={N}: cov_err={cov_err:.4g} tail_ratio={row.tail_ratio:.4g} p={law.p_value:.3f}")
            points.append(SweepPoint(N, bands, row, cov_se))
        return points

    @staticmethod
    def _non_increasing(values: list[float], ses: list[float]) -> bool:
        return all(
            values[i + 1] <= values[i] + 3.0 * np.hypot(ses[i], ses[i + 1])
            for i in range(len(values) - 1)
        )

    def converge(self) -> CommandResult:
        points = self._sweep()
        frame = pd.DataFrame([p.row.model_dump() for p in points])
        artifacts = _write_frame(self.out_dir / "converge.csv", frame, self._meta(N_list=self.config.N_list))
        errors = [p.row.cov_frob_rel_err for p in points]
        monotone = self._non_increasing(errors, [p.cov_error_se for p in points]) if np.all(np.isfinite(errors)) else True
        law_ok = points[-1].row.energy_pvalue >= self.config.significance
        payload = {"rows": frame.to_dict(orient="records"), "cov_error_non_increasing": monotone,
                   "law_not_rejected": law_ok}
        return CommandResult("converge", bool(monotone and law_ok), payload, artifacts,
                             frame.to_string(index=False))

    # --- acceptance suite -----------------------------------------------

    def _report(self, test: str, statistic: float, threshold: float, passed: bool, **kwargs) -> VerificationReport:
        return VerificationReport(test=test, statistic=float(statistic), threshold=float(threshold),
                                  passed=bool(passed), config_hash=self.config_hash, **kwargs)

    def _fbm_oracle(self) -> VerificationReport:
        H = 0.75
        spec = ofbm.SpectralSpec(np.eye(1), np.zeros((1, 1)), LinearOperator.diag([H]))
        var = ofbm.covariance(spec, 1.0, 1.0, self.quad)[0, 0]
        worst = 0.0
        for t in ORACLE_TIMES:
            for s in ORACLE_TIMES:
                exact = 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))
                worst = max(worst, abs(ofbm.covariance(spec, t, s, self.quad)[0, 0] / var - exact))
        return self._report("fbm_covariance_oracle", worst, 1e-3, worst <= 1e-3)

    def _telescoping(self) -> VerificationReport:
        errors = [_rel_frob(corr.double_sum(self.model, N), corr.normalization_target(self.model, N))
                  for N in TELESCOPING_N]
        return self._report("telescoping_identity", max(errors), 1e-8, max(errors) <= 1e-8,
                            details={"N": list(TELESCOPING_N), "errors": errors})

    def _orthogonality(self) -> VerificationReport:
        x, w = hermite.gauss_hermite_rule(32)
        H = hermite.hermite_table(ORTHOGONALITY_MAX_ORDER, x)
        gram = (H * w) @ H.T
        fact = np.array([float(math.factorial(k)) for k in range(ORTHOGONALITY_MAX_ORDER + 1)])
        scale = np.sqrt(np.outer(fact, fact))
        worst = float(np.max(np.abs(gram - np.diag(fact)) / np.maximum(scale, 1.0)))
        return self._report("hermite_orthogonality", worst, 1e-9, worst <= 1e-9,
                            note="error scaled by sqrt(k! l!)")

    def _mehler(self) -> VerificationReport:
        rng = make_generator(derive_seed(self.config.seed, _MEHLER_STREAM))
        U = rng.standard_normal(MEHLER_SAMPLES)
        V = MEHLER_RHO * U + np.sqrt(1 - MEHLER_RHO**2) * rng.standard_normal(MEHLER_SAMPLES)
        HU = hermite.hermite_table(MEHLER_MAX_ORDER, U)
        HV = hermite.hermite_table(MEHLER_MAX_ORDER, V)
        zs = []
        for k in range(1, MEHLER_MAX_ORDER + 1):
            prod = HU[k] * HV[k]
            se = prod.std(ddof=1) / np.sqrt(prod.size)
            exact = math.factorial(k) * MEHLER_RHO**k
            zs.append(abs(prod.mean() - exact) / se)
        return self._report("mehler_check", max(zs), 3.0, max(zs) <= 3.0, replicates=MEHLER_SAMPLES,
                            details={"z_scores": zs})

    def _acceptance_table(self) -> HermiteCoefficientTable:
        if self.config.dim >= 2:
            return hermite.builtin_table("acceptance", self.config.dim)
        coeffs = {MultiIndex((1,)): np.array([1.0]), MultiIndex((3,)): np.array([0.5])}
        return HermiteCoefficientTable(1, settings.HERMITE_MAX_ORDER, coeffs)

    def _reduction_decay(self) -> VerificationReport:
        table = self._acceptance_table()
        N_list = self.config.N_list
        try:
            ratios = [approx.tail_energy_ratio(table, self.model, N, 1) for N in N_list]
            source = "exact band covariance"
        except ModelDomainError:
            G = NonlinearFunctional.from_table(table, name="acceptance")
            ratios = []
            for N in N_list:
                bands = approx.ensemble_bands(self._ensemble_spec(N, G=G), ("head_m", "tail_m"), self.threads)
                head = np.mean(np.sum(bands["head_m"].values_at(1.0) ** 2, axis=1))
                tail = np.mean(np.sum(bands["tail_m"].values_at(1.0) ** 2, axis=1))
                ratios.append(float(tail / head))
            source = "Monte Carlo"
        decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
        threshold = settings.TAIL_RATIO_THRESHOLD
        return self._report("reduction_decay", ratios[-1], threshold, decreasing and ratios[-1] <= threshold,
                            details={"N": N_list, "ratios": ratios, "source": source,
                                     "reaches_0.1": ratios[-1] <= 0.1})

    def _self_similarity(self) -> VerificationReport:
        err = ofbm.oss_covariance_check(self.spectral_spec, 2.0, 0.5, self.quad)
        return self._report("operator_self_similarity", err, 1e-6, err < 1e-6)

    def _reversibility(self) -> list[VerificationReport]:
        pairs = [(0.3, 0.9), (0.5, 1.0)]
        reports = []
        if self.spectral_spec.time_reversible:
            defect = ofbm.time_reversibility_defect(self.spectral_spec, pairs, self.quad)
            reports.append(self._report("time_reversibility", defect, 1e-8, defect <= 1e-8))
            inc = ofbm.stationary_increment_check(self.spectral_spec, pairs, self.quad)
            reports.append(self._report("stationary_increments", inc, 1e-4, inc <= 1e-4))
        d = self.config.dim
        if d >= 2:
            A2 = np.zeros((d, d))
            A2[0, 1], A2[1, 0] = 1.0, -1.0
            control = ofbm.SpectralSpec(np.eye(d), A2, self.spectral_spec.D)
            defect = ofbm.time_reversibility_defect(control, pairs, self.quad)
            reports.append(self._report("asymmetric_control_detected", defect, 1e-6, defect > 1e-6,
                                        note="negative control: the covariance symmetry check must fail"))
        return reports

    def verify(self) -> CommandResult:
        cfg = self.config
        reports = [self._fbm_oracle(), self._telescoping(), self._orthogonality(), self._mehler()]

        condition = corr.check_condition_h(self.model, cfg.condition_m, cfg.N_grid)
        reports.append(self._report("condition_h", max(condition.sum_bound_ratios),
                                    condition.slack_factor * condition.sum_bound_ratios[0], condition.passed,
                                    details=condition.model_dump(), note=condition.proxy_note))

        points = self._sweep()
        errors = [p.row.cov_frob_rel_err for p in points]
        if np.all(np.isfinite(errors)):
            monotone = self._non_increasing(errors, [p.cov_error_se for p in points])
            reports.append(self._report("covariance_convergence", errors[-1], 0.05, errors[-1] < 0.05 and monotone,
                                        standard_error=points[-1].cov_error_se, replicates=cfg.replicates,
                                        details={"N": cfg.N_list, "errors": errors, "non_increasing": monotone}))
        reports.append(self._reduction_decay())
        reports.append(self._self_similarity())

        full = points[-1].bands["full"]
        tight = self._tightness_report(full)
        reports.append(tight)
        reports.append(stats.moment_bound_report(full, 1.0, cfg.alpha).model_copy(update={"config_hash": self.config_hash}))
        pvalue = points[-1].row.energy_pvalue
        reports.append(self._report("law_matching", pvalue, cfg.significance, pvalue >= cfg.significance,
                                    replicates=cfg.replicates, details={"energy_stat": points[-1].row.energy_stat},
                                    note="passes when the permutation p-value is at least the significance level"))
        reports.extend(self._reversibility())

        suite = SuiteReport(command="verify", config_hash=self.config_hash,
                            passed=all(r.passed for r in reports), reports=reports)
        frame = pd.DataFrame([{"test": r.test, "statistic": r.statistic, "threshold": r.threshold,
                               "passed": r.passed} for r in reports])
        artifacts = _write_frame(self.out_dir / "verify.csv", frame, suite.model_dump())
        return CommandResult("verify", suite.passed, suite.model_dump(), artifacts, stats.render_reports(reports))
