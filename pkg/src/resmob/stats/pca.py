"""Principal component analysis of region x year flow matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PcaError(ValueError):
    pass


@dataclass
class PcaResult:
    loadings: np.ndarray     # columns are components
    eigenvalues: np.ndarray
    proportions: np.ndarray
    scores: np.ndarray
    standardized: bool
    columns: list

    def to_dict(self) -> dict:
        return {"standardized": self.standardized, "columns": list(map(str, self.columns)),
                "proportions": self.proportions.tolist(),
                "eigenvalues": self.eigenvalues.tolist(),
                "loadings": self.loadings.tolist()}


def pca(data, standardize: bool = False, columns=None) -> PcaResult:
    """Eigendecomposition of the column covariance.

    Each loading column is signed so its largest-magnitude entry is positive.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise PcaError("pca needs at least 2 rows and 2 columns")
    columns = list(range(x.shape[1])) if columns is None else list(columns)
    xc = x - x.mean(axis=0)
    if standardize:
        sd = xc.std(axis=0, ddof=1)
        zero = np.flatnonzero(sd == 0)
        if zero.size:
            raise PcaError(f"column {columns[zero[0]]!r} has zero variance")
        xc = xc / sd
    cov = xc.T @ xc / (x.shape[0] - 1)
    w, v = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(w, kind="stable")[::-1]
    w = np.maximum(w[order], 0.0)
    v = v[:, order]
    if w.sum() <= 0:
        raise PcaError("data has zero total variance")
    pivot = np.argmax(np.abs(v), axis=0)
    v = v * np.where(v[pivot, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return PcaResult(v, w, w / w.sum(), xc @ v, standardize, columns)
