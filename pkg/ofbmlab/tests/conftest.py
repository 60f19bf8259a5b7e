import json

import numpy as np
import pytest

from ofbmlab.experiments.schemas import ExperimentConfig, QuadratureConfig
from ofbmlab.services import corr, hermite, ofbm
from ofbmlab.services.linop import LinearOperator


@pytest.fixture
def diag_D():
    return LinearOperator.diag([0.6, 0.8])


@pytest.fixture
def ofgn_diag(diag_D):
    """The shipped two-dimensional oFGN model, D = diag(0.6, 0.8), Gamma = I."""
    return corr.ofgn_model(diag_D, np.eye(2))


@pytest.fixture
def ofgn_scalar():
    return corr.ofgn_model(LinearOperator.diag([0.75]), np.eye(1))


@pytest.fixture
def white_scalar():
    return corr.white_noise_model(np.eye(1), LinearOperator.diag([0.5]))


@pytest.fixture
def identity_table():
    return hermite.builtin_table("identity", 2)


@pytest.fixture
def acceptance_table():
    return hermite.builtin_table("acceptance", 2)


@pytest.fixture
def fbm_spec():
    """Scalar fBm with H = 0.75."""
    return ofbm.SpectralSpec.brownian_like(LinearOperator.diag([0.75]))


@pytest.fixture
def quad():
    return QuadratureConfig()


@pytest.fixture
def config_file(tmp_path):
    """Writes a small oFGN experiment config and returns its path."""
    def _write(**overrides):
        doc = {
            "dim": 2,
            "D": [0.6, 0.0, 0.0, 0.8],
            "Gamma": [1.0, 0.0, 0.0, 1.0],
            "N_list": [32, 64],
            "N_grid": [16, 32, 64],
            "replicates": 20,
            "seed": 3,
            "out": str(tmp_path / "out"),
            "alpha": 1.0,
            "permutations": 20,
            "spectral": {"n_freq": 256, "x_max": 50.0},
        }
        doc.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path
    return _write


@pytest.fixture
def small_config(config_file):
    return ExperimentConfig.model_validate_json(config_file().read_text(encoding="utf-8"))
