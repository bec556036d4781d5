"""Smoke tests for the python bindings: the heavy numerics live in the C++
test binaries, so these only confirm that the module loads and the exposed
operations return sane values."""

import math

import pytest

import lgcpgrid


def test_version():
    assert isinstance(lgcpgrid.__version__, str)
    assert lgcpgrid.__version__


def test_scale_info_matches_reference():
    info = lgcpgrid.scale_info(16, 16, method="exact")
    assert info["gv_before"] == pytest.approx(5.907908164840425, rel=1e-9)
    assert info["scale_factor"] == pytest.approx(info["gv_before"], rel=1e-12)
    assert info["rank_deficiency"] == 1
    assert info["method"] == "exact"


def test_prec_prior_calibration():
    prior = lgcpgrid.prec_prior(1.0, 0.01)
    assert prior["lambda"] == pytest.approx(-math.log(0.01), rel=1e-12)
    assert prior["mass_above_U"] == pytest.approx(0.01, rel=1e-10)
    assert prior["expected_sigma_fraction"] == pytest.approx(0.21714724095162594, rel=1e-10)


def test_sigma_density_is_exponential():
    dens = lgcpgrid.sigma_density(1.0, 0.01, [0.0, 0.1, 0.5])
    lam = -math.log(0.01)
    assert dens[0] == pytest.approx(lam, rel=1e-12)
    assert dens[1] == pytest.approx(lam * math.exp(-lam * 0.1), rel=1e-10)


def test_phi_distance_monotone():
    d = [lgcpgrid.phi_distance(p, 8, 8) for p in (0.2, 0.5, 0.9)]
    assert 0 < d[0] < d[1] < d[2]


def test_phi_prior_table():
    table = lgcpgrid.phi_prior_table(0.5, 2.0 / 3.0, 10, 10)
    assert table["table_mass"] == pytest.approx(1.0, abs=1e-4)
    assert table["cdf_at_U"] == pytest.approx(2.0 / 3.0, abs=2e-3)
    assert table["theta"] > 0


def test_simulate_deterministic():
    a = lgcpgrid.simulate(6, 6, beta0=4.0, tau=2.0, phi=0.5, seed=3)
    b = lgcpgrid.simulate(6, 6, beta0=4.0, tau=2.0, phi=0.5, seed=3)
    assert a["counts"] == b["counts"]
    assert len(a["counts"]) == 36
    assert sum(a["counts"]) > 0


def test_fit_and_glm_roundtrip():
    sim = lgcpgrid.simulate(6, 6, beta0=4.5, tau=2.0, phi=0.6, seed=5)
    res = lgcpgrid.fit(sim["counts"], [], 6, 6, u_sigma=0.5, grid_n=5)
    assert res["method"] == "laplace-grid"
    assert res["sigma"]["mean"] > 0
    assert res["sigma"]["lo"] < res["sigma"]["mean"] < res["sigma"]["hi"]
    assert 0 < res["phi"]["mean"] < 1
    assert len(res["surfaces"]["predictor"]) == 36

    glm = lgcpgrid.glm(sim["counts"], [], 6, 6)
    assert glm["method"] == "glm"
    total = sum(sim["counts"])
    assert glm["beta"][0]["mean"] == pytest.approx(math.log(total / 36.0), abs=0.05)


def test_input_errors_surface_as_value_errors():
    with pytest.raises(ValueError):
        lgcpgrid.scale_info(1, 1)
    with pytest.raises(ValueError):
        lgcpgrid.fit([0, 0], [], 5, 5)
