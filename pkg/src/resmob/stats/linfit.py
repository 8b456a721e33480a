"""Ordinary and least-trimmed-squares straight-line fits."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

EXHAUSTIVE_MAX_N = 12


class LinFitError(ValueError):
    pass


@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float
    method: str
    h: int
    subset: list

    def to_dict(self) -> dict:
        return asdict(self)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    return slope, float(ym - slope * xm)


def _r2(x, y, slope, intercept) -> float:
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0:
        return 0.0
    return 1.0 - float(np.sum((y - slope * x - intercept) ** 2)) / tss


def _lts_exhaustive(x, y, h):
    best = (np.inf, None)
    for subset in itertools.combinations(range(len(x)), h):
        idx = list(subset)
        if np.ptp(x[idx]) == 0:
            continue
        s, c = _ols(x[idx], y[idx])
        rss = float(np.sum((y[idx] - s * x[idx] - c) ** 2))
        if rss < best[0]:
            best = (rss, idx)
    return best[1]


def _lts_random(x, y, h, seed, n_starts, max_steps=50):
    rng = np.random.default_rng(seed)
    n = len(x)
    best = (np.inf, None)
    for _ in range(n_starts):
        pair = rng.choice(n, 2, replace=False)
        if x[pair[0]] == x[pair[1]]:
            continue
        s, c = _ols(x[pair], y[pair])
        prev = None
        for _ in range(max_steps):
            idx = np.sort(np.argsort((y - s * x - c) ** 2, kind="stable")[:h])
            if prev is not None and np.array_equal(idx, prev):
                break
            if np.ptp(x[idx]) == 0:
                break
            s, c = _ols(x[idx], y[idx])
            prev = idx
        rss = float(np.sort((y - s * x - c) ** 2)[:h].sum())
        if rss < best[0]:
            best = (rss, idx.tolist())
    return best[1]


def linear_fit(x, y, method: str = "ols", h: int | None = None, seed: int = 0,
               n_starts: int = 500) -> LineFit:
    """Fit ``y = slope * x + intercept``.

    ``lts`` minimizes the sum of the ``h`` smallest squared residuals
    (default ``h = ceil(0.75 n)``); all h-subsets are searched when
    n <= 12, otherwise random two-point starts refined by concentration
    steps. Its R² is computed on the retained subset.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise LinFitError("need at least 3 paired points")
    if np.ptp(x) == 0:
        raise LinFitError("x is constant")
    n = len(x)
    if method == "ols":
        s, c = _ols(x, y)
        return LineFit(s, c, _r2(x, y, s, c), "ols", n, list(range(n)))
    if method != "lts":
        raise LinFitError(f"unknown method {method!r}")
    h = math.ceil(0.75 * n) if h is None else int(h)
    if not 2 <= h <= n:
        raise LinFitError("trim h must lie in [2, n]")
    idx = (_lts_exhaustive(x, y, h) if n <= EXHAUSTIVE_MAX_N
           else _lts_random(x, y, h, seed, n_starts))
    if idx is None:
        raise LinFitError("no h-subset with varying x")
    s, c = _ols(x[idx], y[idx])
    return LineFit(s, c, _r2(x[idx], y[idx], s, c), "lts", h, [int(i) for i in idx])
