from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    me_m: float
    rmse_m: float
    cdf: list[tuple[float, float]]

    def cdf_at(self, err: float) -> float:
        """Empirical P(error <= err)."""
        errs = np.array([e for e, _ in self.cdf])
        probs = np.array([p for _, p in self.cdf])
        k = np.searchsorted(errs, err, side="right")
        return 0.0 if k == 0 else float(probs[k - 1])


def position_errors(predictions, labels) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    if p.size == 0:
        raise ValueError("no predictions to score")
    if p.shape[-1] != 2:
        raise ValueError("positions must be 2D")
    return np.linalg.norm(p - y, axis=-1).ravel()


def compute_metrics(predictions, labels) -> MetricsReport:
    err = np.sort(position_errors(predictions, labels))
    n = len(err)
    # one CDF point per distinct error value, at its highest rank
    last = np.r_[err[1:] != err[:-1], True]
    cdf = [(float(e), (k + 1) / n) for k, e in enumerate(err) if last[k]]
    cdf[-1] = (cdf[-1][0], 1.0)
    return MetricsReport(float(err.mean()), float(np.sqrt(np.mean(err**2))), cdf)
