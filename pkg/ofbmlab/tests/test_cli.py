import json
from pathlib import Path
from unittest.mock import patch

import pytest

from ofbmlab.cli_main import load_config, main
from ofbmlab.experiments.controller import CommandResult, ExperimentController
from ofbmlab.utils.exceptions import AccuracyError, ConfigError


def _stdout_json(capsys):
    return json.loads(capsys.readouterr().out)


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["hermite-rank", "--config", str(tmp_path / "missing.json")]) == 2
    assert _stdout_json(capsys)["error_type"] == "ConfigError"


def test_malformed_config_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    assert main(["verify", "--config", str(path)]) == 2


def test_invalid_field_exits_2(config_file):
    assert main(["check-condition", "--config", str(config_file(D=[0.6, 0.0, 0.8]))]) == 2
    assert main(["check-condition", "--config", str(config_file(N_list=[64, 32]))]) == 2


def test_unknown_command_is_rejected_by_argparse(config_file):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command", "--config", str(config_file())])
    assert exc.value.code == 2


def test_model_domain_error_exits_2(config_file, capsys):
    code = main(["check-condition", "--config", str(config_file(D=[0.4, 0.0, 0.0, 0.8]))])
    assert code == 2
    assert _stdout_json(capsys)["error_type"] == "ModelDomainError"


def test_flags_override_config(config_file, tmp_path):
    config = load_config(config_file(), {"seed": 99, "replicates": 7, "out": str(tmp_path / "elsewhere"), "alpha": None})
    assert config.seed == 99
    assert config.replicates == 7
    assert config.out.endswith("elsewhere")
    assert config.alpha == 1.0


def test_load_config_rejects_non_object(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


@patch.object(ExperimentController, "check_condition")
def test_passing_check_exits_0(mock_check, config_file, capsys):
    mock_check.return_value = CommandResult("check-condition", True, {"ok": 1}, [], "fine")
    assert main(["check-condition", "--config", str(config_file())]) == 0
    assert _stdout_json(capsys)["passed"] is True
    mock_check.assert_called_once()


@patch.object(ExperimentController, "tightness")
def test_failing_check_exits_1_with_report(mock_tightness, config_file, capsys):
    mock_tightness.return_value = CommandResult("tightness", False, {"statistic": 0.3}, [], "")
    assert main(["tightness", "--config", str(config_file())]) == 1
    document = _stdout_json(capsys)
    assert document["passed"] is False
    assert document["payload"]["statistic"] == 0.3


@patch.object(ExperimentController, "simulate_ofbm", side_effect=AccuracyError("quadrature did not converge"))
def test_library_error_exits_1(mock_simulate, config_file, capsys):
    assert main(["simulate-ofbm", "--config", str(config_file())]) == 1
    assert _stdout_json(capsys)["error_type"] == "AccuracyError"


def test_threads_flag_reaches_controller(config_file):
    with patch("ofbmlab.experiments.router.ExperimentController") as mock_controller:
        mock_controller.return_value.hermite_rank.return_value = CommandResult("hermite-rank", True)
        with patch.dict("ofbmlab.experiments.router.COMMANDS",
                        {"hermite-rank": lambda c: c.hermite_rank()}):
            assert main(["hermite-rank", "--config", str(config_file()), "--threads", "3"]) == 0
    assert mock_controller.call_args.args[1] == 3


def test_hermite_rank_end_to_end(config_file, capsys):
    path = config_file(functional="acceptance")
    assert main(["hermite-rank", "--config", str(path)]) == 0
    document = _stdout_json(capsys)
    assert document["payload"]["rank"] == 1
    written = json.loads(open(document["artifacts"][0], encoding="utf-8").read())
    assert written["rank"] == 1
    assert "config_hash" in written


def test_check_condition_end_to_end(config_file, capsys):
    # the largest lag must be long enough for the decay window to fall below 5% of r(0)
    assert main(["check-condition", "--config", str(config_file(N_grid=[64, 256, 1024]))]) == 0
    payload = _stdout_json(capsys)["payload"]
    assert payload["passes_sum_bound"]
    assert payload["embedding_psd"]


def test_white_noise_check_condition_reports_exact_failure(config_file, capsys):
    assert main(["check-condition", "--config", str(config_file(family="white"))]) == 0
    assert _stdout_json(capsys)["payload"]["passes_exact_asymptotic"] is False


def test_shipped_tightness_config_matches_acceptance_run():
    root = Path(__file__).resolve().parents[2] / "configs"
    tight = load_config(root / "ofgn_tightness.json")
    base = load_config(root / "ofgn_diag.json")
    assert tight.replicates == 5000
    assert tight.N_list == [4096]
    assert tight.D == base.D and tight.alpha == base.alpha
    assert tight.tightness_pairs == base.tightness_pairs
