"""Link-level accuracy metrics on the dB scale."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import LengthMismatch, ZeroReference


@dataclass
class MetricsReport:
    mae: float
    nmse: float
    mape: float
    n: int
    variant_id: str = ""
    split: str = "test"

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(y, y_hat, variant_id: str = "", split: str = "test") -> MetricsReport:
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if len(y) != len(y_hat) or len(y) == 0:
        raise LengthMismatch(f"got {len(y)} references and {len(y_hat)} predictions")
    if np.any(y == 0):
        raise ZeroReference("MAPE undefined for zero reference values")
    err = y - y_hat
    return MetricsReport(
        mae=float(np.mean(np.abs(err))),
        nmse=float(np.sum(err**2) / np.sum(y**2)),
        mape=float(np.mean(np.abs(err / y)) * 100.0),
        n=len(y),
        variant_id=variant_id,
        split=split,
    )
