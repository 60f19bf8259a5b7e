"""
Domain records shared across services.

Array-backed records (sequences and path ensembles) are dataclasses; reports
that travel to JSON live in ofbmlab.experiments.schemas.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from ofbmlab.utils.exceptions import DomainError, InputError


@dataclass(eq=False)
class GaussianSequence:
    """
    A sample (X_1, ..., X_N) of a stationary Gaussian d-vector sequence.

    Attributes:
        values (np.ndarray): N x d array, time along axis 0.
        model_id (str): Identifier of the correlation model it was drawn from.
        seed (int): 64-bit seed of the generator stream.
        method (str): ``circulant`` or ``cholesky``.
        clipped_mass (float): Relative spectral mass clipped from the embedding.
    """
    values: np.ndarray
    model_id: str
    seed: int
    method: str
    clipped_mass: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise InputError("sequence values must be an N x d array")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(eq=False)
class PathEnsemble:
    """
    Replicated sample paths on a common time grid.

    Attributes:
        times (np.ndarray): Increasing grid in [0, 1], length T.
        paths (np.ndarray): R x T x d array (replicate, time, coordinate).
        meta (dict): Provenance: N, D, table id, model id, seeds, band.
    """
    times: np.ndarray
    paths: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim != 3 or self.paths.shape[1] != self.times.shape[0]:
            raise InputError("paths must be R x T x d with T matching the time grid")

    @property
    def replicates(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    def time_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if hits.size == 0:
            raise DomainError(f"t = {t} is not on the ensemble time grid")
        return int(hits[0])

    def values_at(self, t: float) -> np.ndarray:
        """R x d array of path values at grid time t."""
        return self.paths[:, self.time_index(t), :]

    def to_frame(self) -> pd.DataFrame:
        R, T, d = self.paths.shape
        frame = pd.DataFrame(self.paths.reshape(R * T, d), columns=[f"x{k}" for k in range(1, d + 1)])
        frame.insert(0, "t", np.tile(self.times, R))
        frame.insert(0, "replicate", np.repeat(np.arange(R), T))
        return frame

    def export_csv(self, path: Path, extra_meta: Optional[dict] = None) -> Path:
        """Write the CSV and a ``.json`` metadata sidecar next to it; returns the sidecar path."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        sidecar = path.with_suffix(".json")
        meta = {**self.meta, **(extra_meta or {})}
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True, default=to_jsonable), encoding="utf-8")
        return sidecar


def to_jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")

