import json
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from ofbmlab.experiments.controller import ExperimentController
from ofbmlab.utils.exceptions import ConfigError
from ofbmlab.utils.settings import settings


@pytest.fixture
def controller(small_config):
    return ExperimentController(small_config, threads=2)


def test_time_grid_joins_law_times_and_windows(controller):
    grid = controller.time_grid()
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(np.diff(grid) > 0)
    assert {0.5, 0.5625, 0.625}.issubset(set(grid.tolist()))


def test_limit_covariance(small_config):
    assert np.allclose(ExperimentController(small_config).limit_covariance(), np.eye(2))
    squared = small_config.model_copy(update={"functional": "centered_square"})
    assert np.all(np.isnan(ExperimentController(squared).limit_covariance()))


def test_table_family_needs_model_path(small_config):
    with pytest.raises(ConfigError):
        ExperimentController(small_config.model_copy(update={"family": "table"})).model


def test_model_path_loads_table_model(small_config, tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"dim": 2, "D": [0.5, 0, 0, 0.5], "Gamma": [1, 0, 0, 1], "family": "table",
                                "lags": [[1, 0, 0, 1], [0.2, 0, 0, 0.2]]}), encoding="utf-8")
    model = ExperimentController(small_config.model_copy(update={"model_path": str(path)})).model
    assert model.family == "table"
    assert np.allclose(model.lag(1), 0.2 * np.eye(2))
    assert np.allclose(model.lag(5), 0.0)


def test_malformed_model_document(small_config, tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"dim": 2, "D": [0.6, 0.8], "Gamma": [1, 0, 0, 1]}), encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentController(small_config.model_copy(update={"model_path": str(path)})).model


def test_simulate_approx_bytes_do_not_depend_on_threads(small_config, tmp_path):
    outputs = []
    for threads in (1, 4):
        config = small_config.model_copy(update={"out": str(tmp_path / f"t{threads}")})
        result = ExperimentController(config, threads).simulate_approx()
        assert result.passed
        outputs.append([Path(p).read_bytes() for p in result.artifacts])
    assert outputs[0] == outputs[1]
    frame = pd.read_csv(tmp_path / "t1" / "approx_full_N32.csv")
    assert list(frame.columns) == ["replicate", "t", "x1", "x2"]
    assert frame["replicate"].nunique() == small_config.replicates


def test_hermite_rank_writes_table(controller):
    result = controller.hermite_rank()
    assert result.summary == "1"
    written = json.loads(Path(result.artifacts[0]).read_text(encoding="utf-8"))
    assert written["config_hash"] == controller.config_hash
    assert written["mixing_matrix"] == [1.0, 0.0, 0.0, 1.0]


def test_tightness_report_shape(controller):
    result = controller.tightness()
    assert result.payload["test"] == "tightness_exponent"
    assert Path(result.artifacts[0]).name == "tightness.json"
    assert result.payload["details"]["alpha"] == 1.0


def test_converge_rows(controller):
    result = controller.converge()
    frame = pd.read_csv(result.artifacts[0])
    assert frame["N"].tolist() == [32, 64]
    assert frame["wall_seconds"].isna().all()
    assert np.all((frame["energy_pvalue"] > 0) & (frame["energy_pvalue"] <= 1))
    sidecar = json.loads(Path(result.artifacts[1]).read_text(encoding="utf-8"))
    assert sidecar["N_list"] == [32, 64]


@patch.object(settings, "RECORD_TIMINGS", True)
def test_converge_records_timings_when_enabled(controller):
    rows = controller.converge().payload["rows"]
    assert all(row["wall_seconds"] >= 0 for row in rows)


def test_verify_suite(controller):
    result = controller.verify()
    reports = {r["test"]: r for r in result.payload["reports"]}
    expected = {"fbm_covariance_oracle", "telescoping_identity", "hermite_orthogonality", "mehler_check",
                "condition_h", "covariance_convergence", "reduction_decay", "operator_self_similarity",
                "tightness_exponent", "law_matching", "time_reversibility",
                "stationary_increments", "asymmetric_control_detected"}
    assert expected.issubset(reports)
    assert any(name.startswith("moment_ratio") for name in reports)
    for deterministic in ("fbm_covariance_oracle", "telescoping_identity", "hermite_orthogonality",
                          "operator_self_similarity", "time_reversibility", "asymmetric_control_detected"):
        assert reports[deterministic]["passed"], deterministic
    assert all(r["config_hash"] == controller.config_hash for r in reports.values())
    frame = pd.read_csv(result.artifacts[0])
    assert set(frame["test"]) == set(reports)
    assert result.passed == all(r["passed"] for r in reports.values())


def test_verify_bytes_do_not_depend_on_threads(small_config, tmp_path):
    outputs = []
    for threads in (1, 4):
        config = small_config.model_copy(update={"out": str(tmp_path / f"t{threads}")})
        result = ExperimentController(config, threads).verify()
        assert [Path(p).name for p in result.artifacts] == ["verify.csv", "verify.json"]
        outputs.append([Path(p).read_bytes() for p in result.artifacts])
    assert outputs[0] == outputs[1]
