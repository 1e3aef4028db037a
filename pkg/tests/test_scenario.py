import json

import numpy as np
import pytest

from hybridlink.errors import ConfigError
from hybridlink.linkmath import FadingModel
from hybridlink.scenario import (COLUMNS, ScenarioConfig, draw_snrs, run_sweep, sample_snr,
                                 sidecar_path, worker_count, write_outputs, zeta_crossover)


def _cfg(kind, values, devices=None, **kw):
    data = {
        "devices": devices or [{"mean_snr_db": 10, "block_prob": 0.1},
                               {"mean_snr_db": 5, "block_prob": 0.4}],
        "n_total": 48,
        "fading": "rayleigh",
        "monte_carlo_draws": 3,
        "seed": 7,
        "sweep": {"kind": kind, "values": values},
    }
    data.update(kw)
    return ScenarioConfig.from_dict(data)


class TestSampling:
    def test_fixed(self):
        rng = np.random.default_rng(0)
        assert all(sample_snr(FadingModel(4.0, "fixed"), rng) == 4.0 for _ in range(5))

    def test_rayleigh_mean(self):
        rng = np.random.default_rng(1)
        fading = FadingModel(10.0, "rayleigh")
        draws = [sample_snr(fading, rng) for _ in range(1_000_000)]
        assert np.mean(draws) == pytest.approx(10.0, rel=0.01)

    def test_reproducible(self):
        cfg = _cfg("zeta_grid", [0.0])
        assert draw_snrs(cfg, 2, 2) == draw_snrs(cfg, 2, 2)
        assert draw_snrs(cfg, 2, 2) != draw_snrs(cfg, 3, 2)
        # growing the population keeps the earlier devices' draws
        assert draw_snrs(cfg, 2, 4)[:2] == draw_snrs(cfg, 2, 2)


class TestConfig:
    @pytest.mark.parametrize("change", [
        {"sweep": {"kind": "zeta_grid", "values": [0.2, 0.1]}},
        {"sweep": {"kind": "zeta_grid", "values": []}},
        {"sweep": {"kind": "p_grid", "values": [0.0, 1.5]}},
        {"sweep": {"kind": "zeta_grid", "values": [1.0]}},
        {"sweep": {"kind": "device_count", "values": [0, 2]}},
        {"sweep": {"kind": "bogus", "values": [1]}},
        {"sweep": {"kind": "zeta_grid", "values": [0.1], "extra": 1}},
        {"monte_carlo_draws": 0},
        {"fading": "rician"},
        {"feedback_cost": 1.0},
        {"n_total": 1},
        {"color": "red"},
        {"devices": [{"mean_snr_db": 10, "block_prob": 2.0}]},
    ])
    def test_rejects(self, change):
        data = {"devices": [{"mean_snr_db": 10}, {"mean_snr_db": 5}],
                "sweep": {"kind": "zeta_grid", "values": [0.0]}}
        data.update(change)
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(data)

    def test_p_sweeps_need_two_devices(self):
        with pytest.raises(ConfigError):
            _cfg("p_grid", [0.0, 1.0], devices=[{"mean_snr_db": 10}])

    def test_round_trip(self):
        cfg = _cfg("p_slice", [0.0, 0.5])
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            ScenarioConfig.load(bad)
        with pytest.raises(ConfigError):
            ScenarioConfig.load(tmp_path / "missing.json")

    def test_fixed_fading_uses_one_draw(self):
        assert _cfg("zeta_grid", [0.0], fading="fixed", monte_carlo_draws=50).draws == 1


class TestSweeps:
    def test_zeta_grid_shape(self):
        cfg = _cfg("zeta_grid", [0.0, 0.1, 0.2, 0.4], fading="fixed")
        rows = run_sweep(cfg)
        cbf = [r.cbf_mean for r in rows]
        assert all(b <= a for a, b in zip(cbf, cbf[1:]))
        assert len({r.baseline_mean for r in rows}) == 1

    def test_p_grid_baseline_and_corner(self):
        rows = run_sweep(_cfg("p_grid", [0.0, 0.5, 1.0], feedback_cost=0.0))
        assert len(rows) == 9
        assert len({r.baseline_mean for r in rows}) == 1
        corner = [r for r in rows if r.coords == (1.0, 1.0)][0]
        assert corner.cbf_mean == corner.baseline_mean
        # at zero feedback cost the feedback system is never worse
        assert all(r.cbf_mean >= r.baseline_mean for r in rows)

    def test_p_slice_records_continuous_allocation(self):
        rows = run_sweep(_cfg("p_slice", [0.0, 0.5]))
        rec = rows[0].as_record()
        assert list(rec) == COLUMNS["p_slice"]
        assert rec["p2"] == 0.4
        assert rec["n1_cont"] + rec["n2_cont"] == pytest.approx(48.0)

    def test_device_count(self):
        rows = run_sweep(_cfg("device_count", [1, 3], monte_carlo_draws=2))
        assert [r.coords for r in rows] == [(1,), (3,)]
        assert rows[0].mean_n == (48.0,)

    def test_outputs(self, tmp_path, monkeypatch):
        cfg = _cfg("p_grid", [0.0, 1.0], output=str(tmp_path / "a.csv"))
        monkeypatch.setenv("HYBRIDLINK_THREADS", "1")
        path = write_outputs(run_sweep(cfg), cfg)
        first = path.read_bytes()
        monkeypatch.setenv("HYBRIDLINK_THREADS", "2")
        monkeypatch.setattr("os.cpu_count", lambda: 4)
        assert worker_count(8) == 2
        second = write_outputs(run_sweep(cfg), cfg, tmp_path / "b.csv").read_bytes()
        assert first == second
        lines = first.decode().split("\n")
        assert lines[0] == ",".join(COLUMNS["p_grid"]) and lines[-1] == ""
        assert b"\r" not in first and b'"' not in first
        meta = json.loads(sidecar_path(path).read_text())
        assert meta["schema_version"] == 1 and meta["seed"] == 7
        assert meta["config"] == cfg.to_dict()

    def test_unwritable_output(self, tmp_path):
        cfg = _cfg("zeta_grid", [0.0], fading="fixed")
        with pytest.raises(OSError):
            write_outputs(run_sweep(cfg), cfg, tmp_path / "no" / "such" / "dir.csv")

    def test_worker_cap(self, monkeypatch):
        monkeypatch.setenv("HYBRIDLINK_THREADS", "3")
        assert worker_count(100) <= 3 and worker_count(1) == 1
        monkeypatch.setenv("HYBRIDLINK_THREADS", "many")
        with pytest.raises(ConfigError):
            worker_count(10)


def test_zeta_crossover_exists():
    z = zeta_crossover([10.0] * 4, [0.1] * 4, 256)
    assert z is not None and 0.05 < z < 0.95
