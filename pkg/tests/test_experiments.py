import csv
import io

import numpy as np
import pytest

from rsma_urllc import ConfigError, SystemConfig
from rsma_urllc import experiments as ex
from rsma_urllc.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


# ------------------------------------------------------------------ sweeps

def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        ex.SweepSpec("bandwidth", (1.0,))
    with pytest.raises(ConfigError):
        ex.SweepSpec("latency_bound", ())
    with pytest.raises(ConfigError):
        ex.SweepSpec("latency_bound", (1e-3,), draws=0)
    with pytest.raises(ConfigError):
        ex.SweepSpec("latency_bound", (1e-3,), schemes=("tdma",))


def test_axis_values_and_units(cfg):
    assert ex.parse_axis_value("qos_grid", "1e-7:0.5e-3") == "1e-07:0.0005"
    c, n = ex.apply_axis(cfg, "qos_grid", "1e-07:0.0005")
    assert c.dep_bound == 1e-7 and c.total_cus == 500 and n is None
    c, n = ex.apply_axis(cfg, "total_power", 1.0)
    assert c.total_power == pytest.approx(cfg.total_power / 5)
    c, n = ex.apply_axis(cfg, "n_tx_profile", 300)
    assert c == cfg and n == 300


def test_draw_streams_depend_only_on_counters():
    a = ex.draw_rng(7, 2, 3).random(4)
    ex.draw_rng(7, 0, 0).random(100)
    b = ex.draw_rng(7, 2, 3).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, ex.draw_rng(7, 3, 2).random(4))


def test_single_point_row_count_and_header(cfg):
    spec = ex.SweepSpec("n_tx_profile", (400,), draws=2, schemes=("rsma", "sdma"), seed=3)
    res = ex.run_sweep(spec, cfg)
    rows = _rows(res.to_csv())
    assert tuple(rows[0]) == ex.SWEEP_COLUMNS
    assert len(rows) == 1 + 2 * 2
    statuses = {r[1]: r[-1] for r in rows[1:]}
    assert statuses["sdma"] == "infeasible"
    assert statuses["rsma"] == "converged"
    summary = res.summary()
    assert [s["scheme"] for s in summary] == ["rsma", "sdma"]


def test_sweep_is_deterministic_and_order_stable(cfg, tmp_path):
    spec = ex.SweepSpec("num_users", (2, 3), draws=2, schemes=("rsma", "noma"), seed=11,
                        out=str(tmp_path / "a.csv"))
    ex.run_sweep(spec, cfg)
    first = (tmp_path / "a.csv").read_bytes()
    ex.run_sweep(spec, cfg)
    assert (tmp_path / "a.csv").read_bytes() == first
    rows = _rows(first.decode())
    keys = [(r[0], r[1], r[2]) for r in rows[1:]]
    assert keys == [(v, s, d) for v in ("2", "3") for s in ("rsma", "noma") for d in ("0", "1")]


def test_sweep_bad_point_becomes_status_row(cfg):
    spec = ex.SweepSpec("dep_bound", (0.7,), schemes=("rsma",))
    res = ex.run_sweep(spec, cfg)
    assert res.rows[0].status.startswith("config_error")


def test_sweep_schemes_share_geometry(cfg):
    spec = ex.SweepSpec("n_tx_profile", (500,), draws=1, schemes=("rsma", "noma"), seed=4)
    res = ex.run_sweep(spec, cfg)
    kap = ex.channel.sample_geometry(cfg, ex.draw_rng(4, 0, 0)).kappas
    direct = ex.solve_scheme(cfg, "noma", kap, n_tx=500).total_etr
    assert res.rows[1].total_etr == pytest.approx(direct, rel=1e-12)


# ---------------------------------------------------------- trace, report

def test_convergence_trace_monotone(cfg, tmp_path):
    out = tmp_path / "t.csv"
    rows = ex.run_convergence_trace(cfg, seed=5, out=str(out))
    obj = [r[3] for r in rows]
    assert len(rows) >= 2 and np.all(np.diff(obj) >= -1e-9)
    assert _rows(out.read_text())[0] == list(ex.TRACE_COLUMNS)


def test_validation_report_rows(cfg, tmp_path):
    out = tmp_path / "v.csv"
    rows = ex.run_validation_report(cfg, n_tx=64, trials=10_000, theta_draws=2000, seed=1,
                                    out=str(out))
    names = [r.check for r in rows]
    assert len([n for n in names if n.startswith("ring_average_1@")]) == 4
    assert all(r.passed for r in rows if r.check.startswith("ring_average_1@"))
    assert names[-1] == "precoder_norm"
    assert len(_rows(out.read_text())) == len(rows) + 1


# --------------------------------------------------------------------- CLI

def test_cli_solve(capsys):
    assert main(["solve", "--seed", "3", "--n-tx", "500"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "total_etr" in out and "n_tx            500" in out


def test_cli_sdma_infeasible(capsys):
    assert main(["solve", "--scheme", "sdma"]) == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("dep_bound = 0.9\n")
    assert main(["solve", "--config", str(p)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_cli_sweep_file(tmp_path):
    out = tmp_path / "s.csv"
    argv = ["sweep", "--axis", "n_tx_profile", "--values", "450", "--draws", "1",
            "--scheme", "rsma,noma", "--seed", "2", "--out", str(out)]
    assert main(argv) == EXIT_OK
    assert len(_rows(out.read_text())) == 3


def test_cli_sweep_unknown_scheme():
    assert main(["sweep", "--axis", "n_tx_profile", "--values", "450",
                 "--scheme", "tdma"]) == EXIT_CONFIG


def test_cli_trace_and_validate(tmp_path):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("num_users = 2\n")
    assert main(["trace", "--config", str(cfgfile), "--out", str(tmp_path / "t.csv")]) == EXIT_OK
    assert main(["validate", "--config", str(cfgfile), "--trials", "10000",
                 "--out", str(tmp_path / "v.csv")]) == EXIT_OK
    assert (tmp_path / "v.csv").exists()
