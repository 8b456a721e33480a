"""Permutational F-test for nested additive models.

The extended model is fitted once by GCV; its smoothing parameters are then
held fixed, so every replicate is a linear map of the permuted response
``null_fitted + permuted(null_residuals)``. The observed data is the
identity permutation of the same construction.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..stats.permutation import TestResult, permutation_stream
from .gam import GamDesign, GamError, GamFit, fit_pgam, linear_operator, wald_forms

_TIE_TOL = 1e-12


def _term_f(fit: GamFit, h: np.ndarray, forms: dict, ys: np.ndarray) -> np.ndarray:
    """F statistics of each added term for every column of ``ys``."""
    beta = h @ ys
    resid = ys - fit.model_matrix @ beta
    sigma2 = np.einsum("ij,ij->j", resid, resid) / max(len(fit.response) - fit.edf, 1e-12)
    out = []
    for name, (m, r) in forms.items():
        bj = beta[fit.block(name).cols]
        out.append(np.einsum("ib,ij,jb->b", bj, m, bj) / (r * sigma2))
    return np.array(out)


def perm_f_test(null_fit: GamFit, extended: GamDesign, n_perm: int = 999, seed: int = 0,
                chunk: int = 100, jobs: int = 1) -> TestResult:
    """Test the terms of ``extended`` absent from the null model.

    Statistic: the largest Wald F statistic among the added terms. The
    p-value is ``(1 + #{T* >= T}) / (1 + B)``. Replicates are processed in
    chunks over ``jobs`` threads; the result does not depend on either.
    """
    if n_perm < 1:
        raise GamError("a permutation test needs at least one permutation")
    null_names = set(null_fit.design.names)
    ext_names = extended.names
    if not null_names <= set(ext_names):
        raise GamError(f"designs are not nested: {sorted(null_names - set(ext_names))} "
                       "missing from the extended model")
    added = [n for n in ext_names if n not in null_names]
    if not added:
        raise GamError("the extended design adds no terms")
    ext_fit = fit_pgam(extended, null_fit.response, variant="extended")
    h, _ = linear_operator(ext_fit)
    forms = wald_forms(ext_fit, added)
    observed_terms = _term_f(ext_fit, h, forms, null_fit.response[:, None])[:, 0]
    observed = float(observed_terms.max())
    n = len(null_fit.response)
    threshold = observed - _TIE_TOL * abs(observed)

    def count(start: int) -> int:
        stop = min(start + chunk, n_perm)
        perms = permutation_stream(n, stop - start, seed, first=start)
        ys = null_fit.fitted[:, None] + null_fit.residuals[perms].T
        return int(np.sum(_term_f(ext_fit, h, forms, ys).max(axis=0) >= threshold))

    with ThreadPoolExecutor(max(1, jobs)) as pool:
        hits = sum(pool.map(count, range(0, n_perm, chunk)))
    p = (1 + hits) / (1 + n_perm)
    return TestResult(observed, p, n_perm, seed, "monte_carlo", False,
                      {"added_terms": added,
                       "term_f": {k: float(v) for k, v in zip(added, observed_terms)},
                       "lambda": ext_fit.lambdas, "r2_null": null_fit.r2,
                       "r2_extended": ext_fit.r2})
