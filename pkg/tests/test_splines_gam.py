import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.interpolate import BSpline

from resmob.model.gam import (GamDesign, GamError, Linear, RandomIntercept, Smooth, fit_pgam,
                              r_squared)
from resmob.model.splines import SplineError, cubic_spline_basis


def greville(basis):
    t = basis.knots
    return np.array([t[i + 1:i + 4].mean() for i in range(basis.dim)])


def test_partition_of_unity_and_shape(rng):
    x = rng.uniform(-3, 5, 200)
    basis = cubic_spline_basis(x, 10)
    b = basis.evaluate(x)
    assert b.shape == (200, basis.dim) == (200, 12)
    assert np.abs(b.sum(axis=1) - 1).max() < 1e-12


def test_penalty_matches_numerical_quadrature(rng):
    x = rng.uniform(0, 4, 50)
    basis = cubic_spline_basis(x, 6)
    d2 = BSpline(basis.knots, np.eye(basis.dim), 3).derivative(2)
    ref = np.zeros((basis.dim, basis.dim))
    for a, b in zip(basis.breaks[:-1], basis.breaks[1:]):
        for i in range(basis.dim):
            for j in range(i, basis.dim):
                v = quad(lambda s: d2(s)[i] * d2(s)[j], a, b, epsabs=1e-13)[0]
                ref[i, j] += v
                ref[j, i] = ref[i, j]
    assert np.abs(basis.penalty - ref).max() < 1e-8 * np.abs(ref).max()


def test_penalty_psd_and_null_space(rng):
    basis = cubic_spline_basis(rng.normal(size=80), 10)
    p = basis.penalty
    assert np.array_equal(p, p.T)
    assert np.linalg.eigvalsh(p).min() > -1e-9 * np.abs(p).max()
    g = greville(basis)
    for coef in (np.ones(basis.dim), 3.0 - 2.0 * g):
        assert abs(coef @ p @ coef) < 1e-9 * np.abs(p).max()


def test_penalty_of_square_is_known():
    # f(x) = x^2 on [0, 3]: integral of (f'')^2 = 4 * 3
    x = np.linspace(0, 3, 40)
    basis = cubic_spline_basis(x, 8)
    coef = np.linalg.lstsq(basis.evaluate(x), x ** 2, rcond=None)[0]
    assert coef @ basis.penalty @ coef == pytest.approx(12.0, rel=1e-9)


def test_linear_extrapolation(rng):
    x = rng.uniform(0, 1, 60)
    basis = cubic_spline_basis(x, 7)
    coef = rng.normal(size=basis.dim)
    lo, hi = basis.lower, basis.upper
    f = lambda s: basis.evaluate(s) @ coef
    slope_hi = (basis.evaluate(hi, 1) @ coef)[0]
    assert f(hi + 0.5)[0] == pytest.approx(f(hi)[0] + 0.5 * slope_hi, abs=1e-12)
    slope_lo = (basis.evaluate(lo, 1) @ coef)[0]
    assert f(lo - 0.25)[0] == pytest.approx(f(lo)[0] - 0.25 * slope_lo, abs=1e-12)


def test_basis_needs_four_distinct_values():
    with pytest.raises(SplineError):
        cubic_spline_basis([1, 2, 3, 3, 3], 5)


def test_exact_cubic_recovered_unpenalized(rng):
    x = np.sort(rng.uniform(-2, 2, 100))
    y = 0.5 * x ** 3 - x ** 2 + 2 * x - 1
    fit = fit_pgam(GamDesign([Smooth("s", x, 10)]), y, {"s": 0.0})
    assert np.abs(fit.fitted - y).max() < 1e-10


def test_exact_linear_recovered_by_gcv(rng):
    x, z = rng.uniform(0, 5, 150), rng.normal(size=150)
    y = 1.0 + 2.0 * x - 0.5 * z
    fit = fit_pgam(GamDesign([Smooth("s", x), Linear("z", z)]), y)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.coef[fit.block("z").cols][0] == pytest.approx(-0.5, abs=1e-9)


def test_infinite_lambda_equals_ols(rng):
    n = 300
    x1, x2, z = rng.uniform(0, 3, n), rng.normal(size=n), rng.normal(size=n)
    y = np.sin(2 * x1) + x2 ** 2 + 0.3 * z + rng.normal(0, 0.1, n)
    fit = fit_pgam(GamDesign([Smooth("a", x1), Smooth("b", x2), Linear("z", z)]), y,
                   {"a": np.inf, "b": np.inf})
    design = np.c_[np.ones(n), x1, x2, z]
    beta = np.linalg.lstsq(design, y, rcond=None)[0]
    assert np.abs(fit.fitted - design @ beta).max() < 1e-8
    assert fit.coef[fit.block("z").cols][0] == pytest.approx(beta[3], abs=1e-8)
    grid = np.array([0.5, 2.5])
    curve = fit.smooth_curve("a", grid)[0]
    assert (curve[1] - curve[0]) / 2.0 == pytest.approx(beta[1], abs=1e-8)


def test_sin_smooth_correlation():
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(0, 2 * np.pi, 200))
    y = np.sin(x) + rng.normal(0, 0.2, 200)
    fit = fit_pgam(GamDesign([Smooth("s", x)]), y)
    assert np.corrcoef(fit.fitted, np.sin(x))[0, 1] > 0.99


def test_fit_invariants(rng):
    n = 200
    x, g = rng.uniform(0, 1, n), rng.integers(0, 4, n)
    y = np.exp(x) + 0.5 * g + rng.normal(0, 0.2, n)
    fit = fit_pgam(GamDesign([Smooth("s", x), RandomIntercept("g", g)]), y)
    assert np.array_equal(fit.fitted + fit.residuals, fit.fitted + (y - fit.fitted))
    assert np.abs(fit.fitted + fit.residuals - y).max() <= 1e-12 * np.abs(y).max()
    rss, tss = np.sum((y - fit.fitted) ** 2), np.sum((y - y.mean()) ** 2)
    assert fit.r2 == 1 - rss / tss == r_squared(y, fit.fitted)
    unpen = [0] + fit.block("s").null_cols
    x_null = fit.model_matrix[:, unpen]
    assert np.abs(x_null.T @ fit.residuals).max() < 1e-8
    # each smooth sums to zero over the data
    assert abs(fit.term_contribution("s").sum()) < 1e-8


def test_gcv_choice_is_grid_minimum(rng):
    x = rng.uniform(0, 1, 80)
    y = np.cos(4 * x) + rng.normal(0, 0.3, 80)
    grid = np.logspace(-4, 4, 9)
    fit = fit_pgam(GamDesign([Smooth("s", x, 8)]), y, grid=grid)
    scores = []
    for lam in grid:
        f = fit_pgam(GamDesign([Smooth("s", x, 8)]), y, {"s": lam})
        hat = f.model_matrix @ np.linalg.pinv(f.model_matrix.T @ f.model_matrix
                                              + np.diag(_penalty(f))) @ f.model_matrix.T
        scores.append(80 * np.sum((y - hat @ y) ** 2) / (80 - np.trace(hat)) ** 2)
    assert fit.lambdas["s"] == grid[int(np.argmin(scores))]


def _penalty(fit):
    diag = np.zeros(fit.model_matrix.shape[1])
    for b in fit.blocks:
        if b.penalty is not None:
            diag[b.cols] = fit.lambdas[b.name] * b.penalty
    return diag


def test_random_intercept_offset_within_three_se():
    rng = np.random.default_rng(4)
    n, delta = 2000, 0.7
    g = np.repeat(["a", "b"], n // 2)
    x = rng.uniform(0, 1, n)
    y = x ** 2 + np.where(g == "b", delta, 0.0) + rng.normal(0, 0.5, n)
    fit = fit_pgam(GamDesign([Smooth("s", x), RandomIntercept("grp", g)]), y)
    cols = fit.block("grp").cols
    diff = fit.coef[cols][1] - fit.coef[cols][0]
    c = np.array([-1.0, 1.0])
    se = np.sqrt(c @ fit.cov_bayes[cols, cols] @ c)
    assert abs(diff - delta) <= 3 * se
    assert fit.random_effects()["grp"]["b"] > fit.random_effects()["grp"]["a"]


def test_by_factor_smooth_fits_separate_curves(rng):
    n = 400
    x = rng.uniform(0, 1, n)
    lev = rng.integers(0, 2, n)
    y = np.where(lev == 0, np.sin(3 * x), -np.sin(3 * x)) + rng.normal(0, 0.05, n)
    fit = fit_pgam(GamDesign([Smooth("s", x, by=lev), RandomIntercept("lev", lev)]), y)
    grid = np.linspace(0.1, 0.9, 5)
    c0, _ = fit.smooth_curve("s", grid, 0)
    c1, _ = fit.smooth_curve("s", grid, 1)
    assert np.corrcoef(c0, -c1)[0, 1] > 0.99
    with pytest.raises(GamError):
        fit.smooth_curve("s", grid)


def test_rank_deficiency_names_terms(rng):
    x = rng.normal(size=50)
    with pytest.raises(GamError, match="a.*b|b.*a"):
        fit_pgam(GamDesign([Linear("a", x), Linear("b", 2 * x)]), x)
    with pytest.raises(GamError, match="s"):
        fit_pgam(GamDesign([Smooth("s", x), Linear("z", 3 * x + 1)]), x)


def test_predict_reproduces_fitted(rng):
    x, z = rng.uniform(0, 1, 100), rng.normal(size=100)
    y = np.exp(x) + z + rng.normal(0, 0.1, 100)
    fit = fit_pgam(GamDesign([Smooth("s", x), Linear("z", z)]), y)
    assert np.abs(fit.predict({"s": x, "z": z}) - fit.fitted).max() < 1e-10
    _, se = fit.smooth_curve("s", np.linspace(0, 1, 7))
    assert np.all(se > 0)


@given(st.floats(0.1, 10.0), st.floats(-5, 5))
def test_affine_response_scales_fit(a, b):
    rng = np.random.default_rng(8)
    x = rng.uniform(0, 1, 60)
    y = np.sin(5 * x) + rng.normal(0, 0.2, 60)
    design = GamDesign([Smooth("s", x, 6)])
    f1 = fit_pgam(design, y)
    f2 = fit_pgam(design, a * y + b)
    assert f1.lambdas == f2.lambdas
    assert np.abs(f2.fitted - (a * f1.fitted + b)).max() < 1e-8 * max(1, a)
