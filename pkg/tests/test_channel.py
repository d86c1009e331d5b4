import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_urllc import SystemConfig, channel


# --------------------------------------------------------------- geometry

def test_degenerate_ring_gives_equal_distances(rng):
    c = SystemConfig(ring_inner_m=50.0, ring_outer_m=50.0)
    g = channel.sample_geometry(c, rng)
    assert np.all(g.distances == 50.0)


def test_mean_square_distance(cfg, rng):
    d = channel.sample_geometry(cfg, rng, num_users=1_000_000).distances
    expect = (cfg.ring_outer_m ** 2 + cfg.ring_inner_m ** 2) / 2  # integral of r^2 p(r)
    assert np.mean(d ** 2) == pytest.approx(expect, rel=5e-3)


def test_distances_in_ring_and_gain_decreasing(cfg, rng):
    g = channel.sample_geometry(cfg, rng, num_users=10_000)
    assert np.all((g.distances >= cfg.ring_inner_m) & (g.distances <= cfg.ring_outer_m))
    order = np.argsort(g.distances)
    assert np.all(np.diff(g.kappas[order]) <= 0)


def test_unit_gain_point():
    lam = 0.15
    assert channel.path_gain(lam / (4 * np.pi), lam, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_height_lowers_gain():
    assert channel.path_gain(40.0, 0.15, 5.0) < channel.path_gain(40.0, 0.15, 0.0)


# ---------------------------------------------------------- pilot training

def _geom(kappas):
    return channel.UserGeometry(np.ones(len(kappas)), np.asarray(kappas, dtype=float))


def _rel_error(r):
    return np.linalg.norm(r.est_gains - r.true_gains) / np.linalg.norm(r.true_gains)


def test_strong_pilots_recover_channel(rng):
    # N_p rho_p kappa = 1e6: the error is about 1/sqrt(1e6), so compare with its expectation
    r = channel.pilot_train(_geom([1.0, 1.0]), 5000, 2, 10, 1e5, rng)
    a, b = channel.mmse_coefficients(1.0, 10, 1e5)
    assert _rel_error(r) == pytest.approx(np.sqrt((1 - a) ** 2 + b ** 2), rel=0.01)
    r = channel.pilot_train(_geom([1.0, 1.0]), 5000, 2, 10, 1e7, rng)
    assert _rel_error(r) < 1e-3


def test_weak_pilots_give_zero_estimate(rng):
    r = channel.pilot_train(_geom([1.0]), 8, 1, 10, 1e-14, rng)
    assert np.max(np.abs(r.est_gains)) < 1e-5


def test_pilots_must_exceed_receive_antennas(rng):
    with pytest.raises(ValueError):
        channel.pilot_train(_geom([1.0]), 8, 3, 3, 1.0, rng)


def test_mmse_orthogonality_and_variance(rng):
    kap, n_p, rho = 0.7, 4, 0.5
    r = channel.pilot_train(_geom([kap]), 100_000, 1, n_p, rho, rng)
    g = r.true_gains.ravel()
    e = r.est_gains.ravel()
    cross = (g - e) * np.conj(e)
    sigma = np.std(cross) / np.sqrt(cross.size)
    assert abs(np.mean(cross)) < 3 * np.sqrt(2) * sigma
    x = n_p * rho
    ratio = np.var(e) / np.var(g)
    assert ratio == pytest.approx(x * kap / (1 + x * kap), rel=0.02)


# ------------------------------------------------------------------ ceq

def test_ceq_points():
    assert channel.ceq(1.0, 1, 1.0) == pytest.approx(0.5)
    assert channel.ceq(1e-30, 10, 1.0) < 1e-29
    kap = 1.164e-7
    direct = np.sqrt(64 * 0.1) * kap / (1 + 64 * 0.1 * kap)
    assert channel.ceq(kap, 64, 0.1) == pytest.approx(direct, rel=1e-14)


def test_ceq_vanishes_monotonically_with_pilot_energy():
    kap = 1e-3
    x = np.logspace(4, 12, 60)  # x * kappa >= 10
    w = channel.ceq(kap, x, 1.0)
    assert np.all(np.diff(w) < 0)
    assert w[-1] < 1e-3


# -------------------------------------------------------------- precoders

def test_theta_closed_form():
    assert channel.theta_norm(64, 4, 100, 0.1) == pytest.approx(np.sqrt(60 * 10 / (4 * 11)), abs=1e-12)


def test_single_user_xi():
    assert channel.xi_weights([0.3], 49) == pytest.approx([1 / 7])


def test_zf_precoder_inverts_first_antenna_estimates(cfg, rng):
    c = cfg.replace(num_users=3)
    geom = channel.sample_geometry(c, rng)
    n_tx = 20
    real = channel.pilot_train(geom, n_tx, c.rx_antennas, n_tx, c.pilot_power, rng)
    ps = channel.build_precoders(real, geom, (1.0, np.ones(3)), n_tx)
    z = real.est_gains[:, 0, :]
    np.testing.assert_allclose(z @ ps.private, np.eye(3), atol=1e-8)
    assert ps.xi.shape == (3,) and np.all(ps.xi > 0)
    assert np.all(np.isfinite(ps.common))


def test_precoders_need_enough_antennas(cfg, rng):
    geom = channel.sample_geometry(cfg, rng)
    n_tx = cfg.num_users * cfg.rx_antennas
    real = channel.pilot_train(geom, n_tx, cfg.rx_antennas, n_tx, cfg.pilot_power, rng)
    with pytest.raises(ValueError):
        channel.build_precoders(real, geom, (1.0, np.ones(cfg.num_users)), n_tx)


def test_precoder_trace_matches_theta_small(cfg, rng):
    c = cfg.replace(rx_antennas=4)
    emp = channel.precoder_power_oracle(c, 64, 64, 2000, rng)
    th = channel.theta_norm(64, 4, 64, c.pilot_power)
    assert emp == pytest.approx(th ** -2, rel=0.05)


# ------------------------------------------------------- ring averages

def test_degenerate_ring_point_value():
    c = SystemConfig(ring_inner_m=50.0, ring_outer_m=50.0)
    k = channel.path_gain(50.0, c.wavelength_m)
    x = 6.4
    assert channel.ring_average(1, c, 64, 0.1) == pytest.approx(k ** 2 / (1 + x * k) ** 2, rel=1e-12)
    assert channel.ring_average_oracle(1, c, 64, 0.1) == pytest.approx(k ** 2 / (1 + x * k) ** 2, rel=1e-12)


def test_first_average_matches_oracle_at_defaults(cfg):
    assert channel.ring_average(1, cfg, 64, 0.1) == pytest.approx(channel.ring_average_oracle(1, cfg, 64, 0.1),
                                                               rel=0.01)


def test_third_average_large_regime():
    cfg = SystemConfig()
    k_min = channel.path_gain(cfg.ring_outer_m, cfg.wavelength_m)
    x = 1e3 / k_min
    cf = channel.ring_average(3, cfg, 1, x, "large")
    assert cf == pytest.approx(channel.ring_average_oracle(3, cfg, 1, x), rel=0.05)


def test_oracle_against_monte_carlo(cfg, rng):
    d = channel.sample_geometry(cfg, rng, num_users=400_000).distances
    k = channel.path_gain(d, cfg.wavelength_m)
    x = 6.4
    for w, f in ((1, k ** 2 / (1 + x * k) ** 2), (2, k ** 1.5 / (1 + x * k)), (4, k ** 4 / (1 + x * k) ** 2)):
        assert channel.ring_average_oracle(w, cfg, 64, 0.1) == pytest.approx(np.mean(f), rel=5e-3)


@pytest.mark.parametrize("x", [0.1, 1.0, 10.0, 100.0])
def test_second_oracle_positive(cfg, x):
    assert channel.ring_average_oracle(2, cfg, 1, x) > 0


def test_first_oracle_decreasing_in_pilot_power(cfg):
    v = [channel.ring_average_oracle(1, cfg, 1, x) for x in np.logspace(-2, 12, 15)]
    assert np.all(np.diff(v) < 0)


def test_invalid_selector(cfg):
    with pytest.raises(ValueError):
        channel.ring_average(6, cfg, 1, 1.0)
    with pytest.raises(ValueError):
        channel.ring_average(3, cfg, 1, 1.0, "medium")
    with pytest.raises(ValueError):
        channel.ring_average_oracle(0, cfg, 1, 1.0)


def test_regime_selection(cfg):
    k = channel.median_kappa(cfg)
    assert channel.regime_for(cfg, 1, 200 / k) == "large"
    assert channel.regime_for(cfg, 1, 0.001 / k) == "small"
    assert channel.regime_for(cfg, 1, 1 / k) == "unity"


@settings(max_examples=30, deadline=None)
@given(st.floats(20, 80), st.floats(1, 60), st.floats(-3, 3))
def test_first_closed_form_exact_for_any_ring(inner, width, log_x):
    c = SystemConfig(ring_inner_m=inner, ring_outer_m=inner + width)
    x = 10.0 ** log_x
    assert channel.ring_average(1, c, 1, x) == pytest.approx(channel.ring_average_oracle(1, c, 1, x), rel=1e-6)
