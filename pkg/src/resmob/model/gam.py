"""Penalized additive models with cubic-spline smooths and ridge random
intercepts.

A model is a ``GamDesign``: a list of ``Smooth``, ``Linear`` and
``RandomIntercept`` terms plus an unpenalized global intercept. Each smooth
is constrained to sum to zero over the observed data and reparametrized so
its penalty is diagonal: one unpenalized linear direction and penalized
"wiggly" directions. Smoothing and ridge parameters are picked by
generalized cross-validation (GCV) on a log grid, one coordinate at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .splines import SplineBasis, cubic_spline_basis

DEFAULT_GRID = np.logspace(-6, 6, 25)
_NULL_TOL = 1e-9


class GamError(ValueError):
    pass


@dataclass
class Smooth:
    """Penalized cubic spline of ``x``; ``by`` gives one curve per level."""

    name: str
    x: np.ndarray
    n_knots: int = 10
    by: np.ndarray | None = None
    linear: bool = True

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.by is not None:
            self.by = np.asarray(self.by)


@dataclass
class Linear:
    name: str
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)


@dataclass
class RandomIntercept:
    name: str
    groups: np.ndarray

    def __post_init__(self):
        self.groups = np.asarray(self.groups)


@dataclass
class GamDesign:
    terms: list

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise GamError(f"duplicate term names in {self.names}")
        sizes = {len(t.x) if not isinstance(t, RandomIntercept) else len(t.groups)
                 for t in self.terms}
        if len(sizes) > 1:
            raise GamError("terms have different numbers of rows")


@dataclass
class _Block:
    """Columns of one term in the model matrix."""

    name: str
    kind: str                  # smooth | linear | random | intercept
    cols: slice
    penalty: np.ndarray | None  # diagonal of the term's penalty, None if unpenalized
    null_cols: list[int]       # unpenalized columns (absolute indices)
    basis: SplineBasis | None = None
    transforms: dict = field(default_factory=dict)   # level -> (k x m) map to columns
    levels: list = field(default_factory=list)


def _smooth_transform(basis_matrix: np.ndarray, penalty: np.ndarray, keep_linear: bool):
    """Sum-to-zero constraint and penalty diagonalization.

    Returns ``(T, d)``: columns ``B @ T`` with penalty ``diag(d)``; null
    directions (``d == 0``) come first.
    """
    k = basis_matrix.shape[1]
    c = basis_matrix.sum(axis=0)[:, None]
    q, _ = np.linalg.qr(c, mode="complete")
    z = q[:, 1:]
    s = z.T @ penalty @ z
    d, u = np.linalg.eigh((s + s.T) / 2.0)
    scale = max(d.max(), 1e-300)
    null = d <= _NULL_TOL * scale
    d = np.where(null, 0.0, d)
    order = np.concatenate([np.flatnonzero(null), np.flatnonzero(~null)])
    d, u = d[order], u[:, order]
    t = z @ u
    if not keep_linear:
        t, d = t[:, ~(d == 0)], d[~(d == 0)]
    assert t.shape[0] == k
    return t, d


def _build(design: GamDesign, n: int):
    """Model matrix, per-term blocks, and penalty diagonals."""
    columns = [np.ones((n, 1))]
    blocks = [_Block("(Intercept)", "intercept", slice(0, 1), None, [0])]
    start = 1
    for term in design.terms:
        if isinstance(term, Linear):
            columns.append(term.x[:, None])
            blocks.append(_Block(term.name, "linear", slice(start, start + 1), None, [start]))
            start += 1
        elif isinstance(term, RandomIntercept):
            levels = sorted(np.unique(term.groups).tolist(), key=str)
            ind = (term.groups[:, None] == np.array(levels, dtype=term.groups.dtype)[None, :])
            columns.append(ind.astype(float))
            m = len(levels)
            blocks.append(_Block(term.name, "random", slice(start, start + m), np.ones(m), [],
                                 levels=levels))
            start += m
        elif isinstance(term, Smooth):
            basis = cubic_spline_basis(term.x, term.n_knots)
            full = basis.evaluate(term.x)
            if term.by is None:
                level_rows = {None: np.ones(n, dtype=bool)}
            else:
                level_rows = {lev: term.by == lev
                              for lev in sorted(np.unique(term.by).tolist(), key=str)}
            parts, pens, nulls, transforms = [], [], [], {}
            offset = start
            for lev, rows in level_rows.items():
                bl = np.where(rows[:, None], full, 0.0)
                t, d = _smooth_transform(bl, basis.penalty, term.linear)
                parts.append(bl @ t)
                pens.append(d)
                nulls.extend(offset + np.flatnonzero(d == 0))
                transforms[lev] = t
                offset += t.shape[1]
            x_block = np.hstack(parts)
            d_all = np.concatenate(pens)
            columns.append(x_block)
            blocks.append(_Block(term.name, "smooth", slice(start, offset), d_all,
                                 [int(c) for c in nulls], basis, transforms,
                                 list(level_rows)))
            start = offset
        else:
            raise GamError(f"unknown term type {type(term).__name__}")
    x = np.hstack(columns)
    # put penalties on the scale of the data so one grid fits all terms
    for b in blocks:
        if b.penalty is None:
            continue
        pos = b.penalty > 0
        if not pos.any():
            b.penalty = None
            continue
        xtx_diag = np.einsum("ij,ij->j", x[:, b.cols], x[:, b.cols])
        b.penalty = b.penalty * (xtx_diag[pos].mean() / b.penalty[pos].mean())
    return x, blocks


def _check_rank(x: np.ndarray, blocks: list[_Block]) -> None:
    """Fail when unpenalized directions are confounded."""
    seen_cols: list[int] = []
    seen_names: list[str] = []
    for b in blocks:
        for c in b.null_cols:
            base = x[:, seen_cols] if seen_cols else np.zeros((x.shape[0], 0))
            col = x[:, c]
            if base.shape[1]:
                coef, *_ = np.linalg.lstsq(base, col, rcond=None)
                resid = col - base @ coef
            else:
                coef, resid = np.zeros(0), col
            if np.linalg.norm(resid) <= 1e-8 * max(np.linalg.norm(col), 1e-300):
                partners = sorted({seen_names[i] for i in np.flatnonzero(np.abs(coef) > 1e-8)})
                raise GamError(
                    f"rank deficient design: unpenalized part of {b.name!r} is confounded "
                    f"with {partners}")
            seen_cols.append(c)
            seen_names.append(b.name)


@dataclass
class GamFit:
    design: GamDesign
    response: np.ndarray
    coef: np.ndarray
    lambdas: dict[str, float]
    fitted: np.ndarray
    residuals: np.ndarray
    edf: float
    term_edf: dict[str, float]
    sigma2: float
    gcv: float
    cov_bayes: np.ndarray
    variant: str = ""
    blocks: list = field(default_factory=list, repr=False)
    model_matrix: np.ndarray | None = field(default=None, repr=False)

    @property
    def r2(self) -> float:
        return r_squared(self.response, self.fitted)

    def block(self, name: str) -> _Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def random_effects(self) -> dict[str, dict]:
        out = {}
        for b in self.blocks:
            if b.kind == "random":
                out[b.name] = {lev: float(v) for lev, v in zip(b.levels, self.coef[b.cols])}
        return out

    def smooth_curve(self, name: str, grid, level=None) -> tuple[np.ndarray, np.ndarray]:
        """Centered smooth (and its standard error) evaluated on ``grid``."""
        b = self.block(name)
        if b.kind != "smooth":
            raise GamError(f"{name!r} is not a smooth term")
        if level is None and None not in b.transforms:
            raise GamError(f"{name!r} varies by level; pass one of {b.levels}")
        basis = b.basis.evaluate(grid)
        offset = b.cols.start
        for lev in b.levels:
            t = b.transforms[lev]
            if lev == level:
                rows = basis @ t
                idx = slice(offset, offset + t.shape[1])
                fit = rows @ self.coef[idx]
                cov = self.cov_bayes[idx, idx]
                se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", rows, cov, rows), 0.0))
                return fit, se
            offset += t.shape[1]
        raise GamError(f"level {level!r} not present in {name!r}")

    def term_contribution(self, name: str) -> np.ndarray:
        """Fitted contribution of one term at the training rows."""
        b = self.block(name)
        return self.model_matrix[:, b.cols] @ self.coef[b.cols]

    def predict(self, new_terms: Mapping[str, np.ndarray]) -> np.ndarray:
        """Predict for smooths and linear terms given new covariate values.

        Random intercepts and by-level smooths are not supported here.
        """
        n = len(next(iter(new_terms.values())))
        out = np.full(n, self.intercept)
        for b in self.blocks:
            if b.kind == "smooth":
                out += self.smooth_curve(b.name, new_terms[b.name])[0]
            elif b.kind == "linear":
                out += self.coef[b.cols.start] * np.asarray(new_terms[b.name], dtype=float)
            elif b.kind == "random":
                raise GamError("prediction with random intercepts is not supported")
        return out

    def report(self) -> dict:
        return {
            "variant": self.variant,
            "terms": [
                {"name": b.name, "kind": b.kind, "n_coef": b.cols.stop - b.cols.start,
                 "edf": self.term_edf.get(b.name)} for b in self.blocks],
            "lambda": self.lambdas,
            "r2": self.r2,
            "edf": self.edf,
            "gcv": self.gcv,
            "sigma2": self.sigma2,
            "coefficients": [float(c) for c in self.coef],
            "random_intercepts": {k: {str(lev): v for lev, v in d.items()}
                                  for k, d in self.random_effects().items()},
        }


def r_squared(y, fitted) -> float:
    y = np.asarray(y, dtype=float)
    tss = float(np.sum((y - y.mean()) ** 2))
    if tss == 0:
        return 0.0
    return 1.0 - float(np.sum((y - fitted) ** 2)) / tss


class _Solver:
    """Penalized least squares on precomputed cross products."""

    def __init__(self, x: np.ndarray, y: np.ndarray, blocks: list[_Block]):
        self.x = x
        self.n = x.shape[0]
        self.xtx = x.T @ x
        self.xty = x.T @ y
        self.yty = float(y @ y)
        self.pen_blocks = [b for b in blocks if b.penalty is not None]

    def penalty_diag(self, lambdas: Mapping[str, float]) -> np.ndarray:
        diag = np.zeros(self.xtx.shape[0])
        for b in self.pen_blocks:
            diag[b.cols] += lambdas[b.name] * b.penalty
        return diag

    def keep(self, lambdas: Mapping[str, float]) -> np.ndarray:
        """Columns left after dropping infinitely penalized directions."""
        keep = np.ones(self.xtx.shape[0], dtype=bool)
        for b in self.pen_blocks:
            if np.isinf(lambdas[b.name]):
                idx = np.arange(b.cols.start, b.cols.stop)
                keep[idx[b.penalty > 0]] = False
        return keep

    def solve(self, lambdas: Mapping[str, float]):
        keep = self.keep(lambdas)
        diag = self.penalty_diag({k: (0.0 if np.isinf(v) else v) for k, v in lambdas.items()})
        a = self.xtx[np.ix_(keep, keep)] + np.diag(diag[keep])
        try:
            factor = scipy.linalg.cho_factor(a)
            a_inv_xtx = scipy.linalg.cho_solve(factor, self.xtx[np.ix_(keep, keep)])
            beta_k = scipy.linalg.cho_solve(factor, self.xty[keep])
            a_inv = scipy.linalg.cho_solve(factor, np.eye(a.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise GamError("penalized normal equations are singular") from exc
        beta = np.zeros(self.xtx.shape[0])
        beta[keep] = beta_k
        edf_cols = np.zeros(self.xtx.shape[0])
        edf_cols[keep] = np.diag(a_inv_xtx)
        return beta, keep, a_inv, edf_cols

    def gcv(self, lambdas: Mapping[str, float]) -> float:
        beta, keep, _, edf_cols = self.solve(lambdas)
        rss = self.yty - 2 * beta @ self.xty + beta @ self.xtx @ beta
        rss = max(rss, 0.0)
        edf = edf_cols.sum()
        denom = (self.n - edf) ** 2
        if denom <= 0:
            return np.inf
        return self.n * rss / denom


def select_lambdas(solver: _Solver, grid=DEFAULT_GRID, fixed: Mapping[str, float] | None = None,
                   tol: float = 1e-6, max_sweeps: int = 20) -> tuple[dict[str, float], float]:
    """Coordinate-wise GCV minimization over a log-spaced grid."""
    fixed = dict(fixed or {})
    lambdas = {b.name: fixed.get(b.name, 1.0) for b in solver.pen_blocks}
    free = [b.name for b in solver.pen_blocks if b.name not in fixed]
    best = solver.gcv(lambdas)
    if not free:
        return lambdas, best
    for _ in range(max_sweeps):
        start = best
        for name in free:
            for value in grid:
                trial = dict(lambdas, **{name: float(value)})
                score = solver.gcv(trial)
                if score < best:
                    best, lambdas = score, trial
        if start - best <= tol * abs(start):
            break
    return lambdas, best


def fit_pgam(design: GamDesign, y, lambdas: Mapping[str, float] | None = None,
             grid=DEFAULT_GRID, variant: str = "") -> GamFit:
    """Fit a penalized additive model.

    Parameters
    ----------
    design : GamDesign
        Terms of the model; a global intercept is always added.
    y : array_like
        Response.
    lambdas : mapping, optional
        Fixed smoothing/ridge parameters by term name (``np.inf`` removes the
        penalized part of a smooth). Terms not listed are chosen by GCV.
    grid : array_like
        Candidate values for GCV selection.
    """
    y = np.asarray(y, dtype=float)
    x, blocks = _build(design, len(y))
    _check_rank(x, blocks)
    solver = _Solver(x, y, blocks)
    chosen, gcv = select_lambdas(solver, grid, lambdas)
    beta, keep, a_inv, edf_cols = solver.solve(chosen)
    fitted = x @ beta
    resid = y - fitted
    edf = float(edf_cols.sum())
    sigma2 = float(resid @ resid) / max(len(y) - edf, 1e-12)
    cov = np.zeros((x.shape[1], x.shape[1]))
    cov[np.ix_(keep, keep)] = sigma2 * a_inv
    term_edf = {b.name: float(edf_cols[b.cols].sum()) for b in blocks}
    return GamFit(design, y, beta, chosen, fitted, resid, edf, term_edf, sigma2, gcv, cov,
                  variant, blocks, x)


def linear_operator(fit: GamFit) -> tuple[np.ndarray, np.ndarray]:
    """``(H, keep)`` with coefficients ``H @ y`` at the fit's fixed lambdas."""
    solver = _Solver(fit.model_matrix, fit.response, fit.blocks)
    _, keep, a_inv, _ = solver.solve(fit.lambdas)
    h = np.zeros((fit.model_matrix.shape[1], len(fit.response)))
    h[keep] = a_inv @ fit.model_matrix[:, keep].T
    return h, keep


def wald_forms(fit: GamFit, names: Sequence[str]) -> dict[str, tuple[np.ndarray, int]]:
    """Per-term matrices ``M`` and ranks ``r`` so that
    ``F = beta_j' M beta_j / (r * sigma2)`` is the term's Wald F statistic.

    ``M`` is the rank-``r`` pseudo-inverse of the term's frequentist
    coefficient covariance divided by ``sigma2``; ``r`` is the term's
    effective degrees of freedom rounded to at least one.
    """
    h, _ = linear_operator(fit)
    out = {}
    for name in names:
        b = fit.block(name)
        hb = h[b.cols]
        cov = hb @ hb.T
        r = int(min(max(round(fit.term_edf[name]), 1), cov.shape[0]))
        w, v = np.linalg.eigh((cov + cov.T) / 2)
        top = np.argsort(w)[::-1][:r]
        m = (v[:, top] / np.maximum(w[top], 1e-300)) @ v[:, top].T
        out[name] = (m, r)
    return out
