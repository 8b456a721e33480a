import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from resmob.model.ftest import perm_f_test
from resmob.model.gam import GamDesign, GamError, Linear, Smooth, fit_pgam
from resmob.model.gravity import (EARTH_RADIUS_KM, DyadFrame, MobilityFrame, fit_edu_imputer,
                                  fit_mobility_model, fit_network_model, geodesic_distance,
                                  language_family, load_language_families, network_design,
                                  smooth_table)
from resmob.synth import SynthConfig, bundle_frames, generate_synthetic


@pytest.fixture(scope="module")
def symmetric_bundle():
    return generate_synthetic(SynthConfig(n_regions=20, n_years=6, seed=3), with_records=False)


@pytest.fixture(scope="module")
def frames(symmetric_bundle):
    return bundle_frames(symmetric_bundle)


def test_geodesic_known_values():
    assert geodesic_distance((45.0, 9.0), (45.0, 9.0)) == 0.0
    assert geodesic_distance((0, 0), (0, 180)) == pytest.approx(math.pi * EARTH_RADIUS_KM)
    assert geodesic_distance((90, 0), (-90, 0)) == pytest.approx(20015.1, abs=0.1)
    # one degree of longitude on the equator
    assert geodesic_distance((0, 0), (0, 1)) == pytest.approx(111.195, abs=1e-3)
    with pytest.raises(ValueError):
        geodesic_distance((91, 0), (0, 0))


@given(st.floats(-89, 89), st.floats(-179, 179), st.floats(-89, 89), st.floats(-179, 179))
def test_geodesic_symmetric_and_bounded(a, b, c, d):
    ab = geodesic_distance((a, b), (c, d))
    assert ab == pytest.approx(geodesic_distance((c, d), (a, b)), abs=1e-9)
    assert 0 <= ab <= math.pi * EARTH_RADIUS_KM + 1e-6


def test_language_families():
    fam = load_language_families()
    assert language_family("ITC4", "IT", fam) == "romance"
    assert language_family("DE21", "DE", fam) == "germanic"
    assert language_family("BE21", "BE", fam) == "germanic"
    assert language_family("BE10", "BE", fam) == "romance"
    assert language_family("CH01", "CH", fam) == "romance"
    assert language_family("ZZ01", "ZZ", fam) is None


def test_dyad_frame_shape_and_invariants(frames, symmetric_bundle):
    dyads, _ = frames
    n, t = 20, 6
    assert len(dyads) == t * n * (n - 1)
    assert not np.any(dyads.sender == dyads.receiver)
    assert np.all(dyads.response >= 0)
    assert np.any(dyads.flow == 0)
    assert dyads.flow.sum() == len(symmetric_bundle.events)
    # none of the synthetic countries is split across families
    assert np.all(dyads.same_lan[dyads.same_country])
    keys = set(zip(dyads.year, dyads.sender, dyads.receiver))
    assert len(keys) == len(dyads)


def test_dyad_frame_csv_round_trip(frames, tmp_path):
    dyads, mob = frames
    dyads.to_csv(tmp_path / "d.csv")
    back = DyadFrame.from_csv(tmp_path / "d.csv")
    for name in ("year", "sender", "receiver", "flow", "log_dist", "same_country", "same_lan"):
        assert np.array_equal(getattr(back, name), getattr(dyads, name))
    for k in dyads.sender_cov:
        assert np.array_equal(back.sender_cov[k], dyads.sender_cov[k])
        assert np.array_equal(back.receiver_cov[k], dyads.receiver_cov[k])
    mob.to_csv(tmp_path / "m.csv")
    mback = MobilityFrame.from_csv(tmp_path / "m.csv")
    assert np.array_equal(mback.inflow, mob.inflow)
    assert np.array_equal(mback.cov["ted"], mob.cov["ted"])


def test_mobility_frame_totals(frames):
    dyads, mob = frames
    assert mob.inflow.sum() == mob.outflow.sum() == dyads.flow.sum()
    for kind in ("total", "in", "out"):
        assert np.all(mob.response(kind) >= 0)
    with pytest.raises(ValueError):
        mob.response("net")


def test_network_variants_terms(frames):
    dyads, _ = frames
    assert network_design(dyads, "symmetric").names == [
        "uni_score_sum", "ted_sum", "log_dist", "same_country", "year"]
    ext = network_design(dyads, "asymmetric_extended").names
    assert set(network_design(dyads, "symmetric").names) < set(ext)
    full = network_design(dyads, "full").names
    assert "same_lan" in full and "gdp_pc_sender" in full
    with pytest.raises(ValueError):
        network_design(dyads, "bogus")


def test_symmetric_fit_close_to_extended_on_symmetric_data(frames):
    dyads, _ = frames
    sym = fit_network_model(dyads, "symmetric")
    ext = fit_network_model(dyads, "asymmetric_extended")
    final = fit_network_model(dyads, "final")
    assert ext.r2 >= sym.r2 - 1e-9
    assert ext.r2 - sym.r2 < 0.02
    assert final.r2 > 0.3
    # distance decay recovered with the right sign
    grid = np.quantile(dyads.log_dist, [0.1, 0.9])
    curve, _ = sym.smooth_curve("log_dist", grid)
    assert curve[1] < curve[0]


def test_network_model_needs_two_years(frames):
    dyads, _ = frames
    with pytest.raises(GamError):
        fit_network_model(dyads.subset(dyads.year == dyads.year[0]))


def test_mobility_model_and_smooth_table(frames):
    _, mob = frames
    fit = fit_mobility_model(mob, "total", "final")
    assert 0 < fit.r2 <= 1
    assert set(fit.random_effects()) == {"year", "country"}
    rows = smooth_table(fit, 11)
    assert len(rows) == 3 * 11
    assert {r[0] for r in rows} == {"uni_score", "ted", "edu_index"}
    assert all(r[3] >= 0 for r in rows)


def test_edu_imputer(rng):
    att = rng.uniform(0.1, 0.6, 60)
    edu = 0.4 + 0.9 * att
    fit, predict = fit_edu_imputer(att, edu)
    assert fit.r2 > 0.999
    assert np.abs(predict(att) - edu).max() < 1e-6
    extreme = predict(np.array([-5.0, 5.0]))
    assert extreme[0] == 0.0 and extreme[1] == 1.0
    with pytest.raises(GamError):
        fit_edu_imputer(att[:19], edu[:19])


def _nested(rng, n=150, effect=0.0):
    x, z = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    y = np.sin(3 * x) + effect * np.cos(4 * z) + rng.normal(0, 0.3, n)
    return x, z, y


def test_perm_f_argument_errors(rng):
    x, z, y = _nested(rng)
    null = fit_pgam(GamDesign([Smooth("x", x)]), y)
    with pytest.raises(GamError):
        perm_f_test(null, GamDesign([Smooth("x", x), Smooth("z", z)]), n_perm=0)
    with pytest.raises(GamError, match="nested"):
        perm_f_test(null, GamDesign([Smooth("z", z)]), n_perm=9)
    with pytest.raises(GamError):
        perm_f_test(null, GamDesign([Smooth("x", x)]), n_perm=9)


def test_perm_f_detects_strong_signal():
    x, z, y = _nested(np.random.default_rng(1), effect=1.0)
    null = fit_pgam(GamDesign([Smooth("x", x)]), y)
    res = perm_f_test(null, GamDesign([Smooth("x", x), Smooth("z", z)]), n_perm=199, seed=2)
    assert res.p_value == pytest.approx(1 / 200)
    assert res.meta["added_terms"] == ["z"]
    assert res.meta["r2_extended"] > res.meta["r2_null"]


def test_perm_f_reproducible_and_chunk_free():
    x, z, y = _nested(np.random.default_rng(5))
    null = fit_pgam(GamDesign([Smooth("x", x)]), y)
    ext = GamDesign([Smooth("x", x), Smooth("z", z), Linear("w", np.arange(150.0) % 7)])
    a = perm_f_test(null, ext, n_perm=99, seed=11)
    b = perm_f_test(null, ext, n_perm=99, seed=11, chunk=7, jobs=3)
    assert a.statistic == b.statistic and a.p_value == b.p_value
    assert 1 / 100 <= a.p_value <= 1


@given(st.floats(0.5, 20.0), st.floats(-10, 10))
def test_perm_f_invariant_to_affine_response(a, b):
    x, z, y = _nested(np.random.default_rng(7), n=80, effect=0.3)
    ext = GamDesign([Smooth("x", x, 6), Smooth("z", z, 6)])
    r1 = perm_f_test(fit_pgam(GamDesign([Smooth("x", x, 6)]), y), ext, n_perm=49, seed=3)
    r2 = perm_f_test(fit_pgam(GamDesign([Smooth("x", x, 6)]), a * y + b), ext, n_perm=49,
                     seed=3)
    assert r1.p_value == r2.p_value
    assert r2.statistic == pytest.approx(r1.statistic, rel=1e-6)
