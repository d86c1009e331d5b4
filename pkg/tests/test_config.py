import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_urllc import ConfigError, ResourceAllocation, SystemConfig, validate
from rsma_urllc.config import (
    dbm_to_normalized, dump_config, load_config, parse_config_text, watts_to_normalized,
)


def _alloc(cfg, **kw):
    U = cfg.num_users
    base = dict(n_tx=100, n_pilot=100, n_data=cfg.total_cus - 100,
                power_common=cfg.total_power / 2,
                power_private=np.full(U, cfg.total_power / (2 * U)),
                rate_common_total=5.0, rate_common_user=np.full(U, 1.0),
                rate_private=np.full(U, 1.5))
    base.update(kw)
    return ResourceAllocation(**base)


# ------------------------------------------------------------- defaults

def test_default_blocklength_and_power(cfg):
    assert cfg.total_cus == 1000
    # 5 W against -113 dBm noise
    assert cfg.total_power == pytest.approx(5.0 / (10 ** (-113 / 10) * 1e-3), rel=1e-12)
    assert cfg.min_tx == cfg.num_users * cfg.rx_antennas + 1


def test_power_conversions_agree():
    assert dbm_to_normalized(30.0, -100.0) == pytest.approx(watts_to_normalized(1.0, -100.0))
    assert watts_to_normalized(1e-13, -100.0) == pytest.approx(1.0)


# ------------------------------------------------------------ invariants

@pytest.mark.parametrize("changes", [
    dict(ring_inner_m=100.0, ring_outer_m=50.0),
    dict(ring_inner_m=0.0),
    dict(dep_bound=0.0),
    dict(dep_bound=0.6),
    dict(num_users=0),
    dict(rx_antennas=0),
    dict(total_power=-1.0),
    dict(pilot_power=0.0),
])
def test_invalid_configs_rejected(changes):
    with pytest.raises(ConfigError):
        dataclasses.replace(SystemConfig(), **changes)


def test_blocklength_must_match_latency():
    with pytest.raises(ConfigError):
        dataclasses.replace(SystemConfig(), total_cus=999)


def test_tall_base_station_warns_only():
    with pytest.warns(UserWarning):
        c = SystemConfig(bs_height_m=10.0)
    assert c.bs_height_m == 10.0


def test_replace_keeps_blocklength_consistent(cfg):
    c = cfg.replace(latency_bound_s=0.2e-3)
    assert c.total_cus == 200
    c = cfg.replace(total_cus=500)
    assert c.total_cus == 500 and c.bandwidth_hz == pytest.approx(5e5)


# ------------------------------------------------------------ parsing

def test_dump_parse_roundtrip(cfg):
    c = cfg.replace(num_users=3, dep_bound=1e-7, latency_bound_s=0.5e-3)
    assert parse_config_text(dump_config(c)) == c


def test_parse_comments_and_aliases():
    text = """
    # scenario
    num_users = 4
    latency_bound_s = 0.5e-3   # total_cus follows
    total_power_w = 1.0
    """
    c = parse_config_text(text)
    assert c.num_users == 4 and c.total_cus == 500
    assert c.total_power == pytest.approx(watts_to_normalized(1.0, c.noise_dbm))


@pytest.mark.parametrize("text", ["bogus_key = 1", "num_users = lots", "just words",
                                  "total_power = 1\ntotal_power_w = 2"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")
    assert load_config(None) == SystemConfig()


# ------------------------------------------------------------- validate

def test_power_sum_at_budget_is_feasible(cfg):
    U = cfg.num_users
    a = _alloc(cfg, power_common=cfg.total_power * 0.4,
               power_private=np.full(U, cfg.total_power * 0.6 / U))
    assert validate(cfg, a) == []


def test_pilot_floor_violation(cfg):
    v = validate(cfg, _alloc(cfg, n_pilot=99))
    assert [x.constraint for x in v] == ["pilot floor"]
    assert v[0].residual == pytest.approx(1.0)


def test_common_rate_sum_violation(cfg):
    U = cfg.num_users
    v = validate(cfg, _alloc(cfg, rate_common_user=np.full(U, 5.1 / U)))
    assert [x.constraint for x in v] == ["common-rate sum"]
    assert v[0].residual == pytest.approx(0.1, rel=1e-6)


@pytest.mark.parametrize("kw,name", [
    (dict(n_data=1000), "blocklength budget"),
    (dict(power_common=1e15), "power budget"),
    (dict(rate_private=np.array([1.5, 1.5, 1.5, 1.5, 0.5])), "rate floor"),
    (dict(power_private=np.array([1.0, 1.0, 1.0, 1.0, -1e14])), "nonnegative power"),
    (dict(power_private=np.ones(3)), "power_private length"),
])
def test_named_violations(cfg, kw, name):
    assert name in [x.constraint for x in validate(cfg, _alloc(cfg, **kw))]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 400), st.integers(0, 5), st.floats(0, 2), st.floats(0, 3))
def test_validate_idempotent_and_pure(n_tx, dp, pc_share, rc):
    cfg = SystemConfig()
    U = cfg.num_users
    a = _alloc(cfg, n_tx=n_tx, n_pilot=n_tx + dp - 2, n_data=cfg.total_cus - n_tx,
               power_common=pc_share * cfg.total_power, rate_common_total=rc,
               rate_common_user=np.full(U, rc / U))
    before = dataclasses.astuple(a)
    v1 = validate(cfg, a)
    v2 = validate(cfg, a)
    assert v1 == v2
    after = dataclasses.astuple(a)
    assert all(np.array_equal(x, y) for x, y in zip(before, after))
