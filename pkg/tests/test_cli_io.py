import shutil

import numpy as np
import pytest

from distvolt import cli, fileio
from distvolt.feeders import data_path, feeder8, feeder32, pv_day_profile, write_bundled_data
from distvolt.oracle import compute_constants
from distvolt.simulation import ConfigError, DelayModel, Simulator
from distvolt.verification import Report, verify

BUNDLED = ["feeder8_static", "feeder8_fixed5", "feeder8_uniform15", "feeder8_intermittent5",
           "feeder8_slack", "feeder32_pvday", "feeder32_robust", "feeder32_sbar"]


@pytest.fixture
def workdir(tmp_path):
    for name in ("feeder8.csv", "feeder8_load.csv", "feeder8_static.ini", "feeder8_slack.ini"):
        shutil.copy(data_path(name), tmp_path / name)
    return tmp_path


def write_ini(dirpath, body, name="s.ini"):
    path = dirpath / name
    path.write_text(body)
    return path


class TestScenarioFile:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_round_trip(self, name):
        sf = fileio.read_scenario(data_path(f"{name}.ini"))
        again = fileio.parse_scenario(sf.dumps(), sf.base_dir)
        assert again == sf
        assert fileio.parse_scenario(again.dumps()).dumps() == sf.dumps()

    def test_build_squares_magnitudes(self, scenario8):
        np.testing.assert_allclose(scenario8.limits.v_lo, 0.9025)
        np.testing.assert_allclose(scenario8.limits.v_hi, 1.1025)
        assert scenario8.v0 == 1.0

    def test_auto_gamma(self, scenario8):
        c = compute_constants(scenario8.network, scenario8.costs, 0)
        assert scenario8.gamma == pytest.approx(0.9 * c.gamma_max, rel=1e-15)

    def test_auto_gamma_uses_delay_bound(self):
        sc = fileio.load_scenario(data_path("feeder8_uniform15.ini"))
        c = compute_constants(sc.network, sc.costs, 15)
        assert sc.gamma == pytest.approx(0.9 * c.gamma_max, rel=1e-15)

    def test_per_bus_rows(self, scenario8):
        np.testing.assert_allclose(scenario8.costs.a_p, [1.0, 1.2, 1.5, 1.8, 2.0, 1.4, 1.6])
        assert scenario8.limits.s_bar is None
        sb = fileio.load_scenario(data_path("feeder32_sbar.ini"))
        np.testing.assert_allclose(sb.limits.s_bar, 0.12)

    @pytest.mark.parametrize("patch, msg", [
        (("horizon = 4000", "horizon = 0"), "horizon"),
        (("gamma = auto", "gamma = fast"), "gamma"),
        (("delay = none", "delay = sometimes"), "delay"),
        (("physics = linear", "physics = ac"), "physics"),
        (("network = feeder8.csv", "network = missing.csv"), "not found"),
        (("v_min = 0.95", "v_min = 1.2"), "voltage"),
        (("seed = 7", "seed = 7\ncolour = blue"), "unknown"),
        (("default = 1.0 0 0", "default = 1.0 0"), "fields"),
        (("7 = 1.6", "9 = 1.6"), "bus 9"),
        (("model_error = none", "model_error = 0.8"), "model_error"),
    ])
    def test_config_errors(self, workdir, patch, msg):
        text = (workdir / "feeder8_static.ini").read_text()
        assert patch[0] in text
        path = write_ini(workdir, text.replace(patch[0], patch[1], 1))
        with pytest.raises(ConfigError, match=msg):
            fileio.load_scenario(path)

    def test_missing_section(self, workdir):
        with pytest.raises(ConfigError, match="scenario"):
            fileio.load_scenario(write_ini(workdir, "[other]\nx = 1\n"))

    def test_bad_network_is_config_error(self, workdir):
        (workdir / "feeder8.csv").write_text("line,0,1,0.1,0.1\nline,1,0,0.1,0.1\n")
        with pytest.raises(ConfigError):
            fileio.load_scenario(workdir / "feeder8_static.ini")


class TestProfiles:
    def test_absent_pairs_default_to_zero(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("t,bus,p_load,q_load\n0,2,-0.1,-0.05\n3,1,0.2,0\n")
        prof = fileio.read_profile(path, 3)
        assert prof.n_ticks == 4
        np.testing.assert_array_equal(prof.p[0], [0.0, -0.1, 0.0])
        np.testing.assert_array_equal(prof.p[3], [0.2, 0.0, 0.0])
        np.testing.assert_array_equal(prof.q[1], 0.0)

    @pytest.mark.parametrize("body", ["t,bus,p\n0,1,0\n", "t,bus,p_load,q_load\n0,9,0,0\n",
                                      "t,bus,p_load,q_load\n0,1,x,0\n"])
    def test_bad_profile(self, tmp_path, body):
        path = tmp_path / "p.csv"
        path.write_text(body)
        with pytest.raises(ConfigError):
            fileio.read_profile(path, 3)

    def test_bundled_files_match_generators(self, tmp_path):
        write_bundled_data(tmp_path)
        for name in ("feeder8.csv", "feeder8_load.csv", "feeder32.csv", "feeder32_pvday.csv"):
            assert (tmp_path / name).read_bytes() == data_path(name).read_bytes(), name

    def test_bundled_feeder_shapes(self):
        f8, f32 = feeder8(), feeder32()
        assert f8.n_buses == 8 and f32.n_buses == 32
        assert f8.depth.max() == 3
        assert len(set(len(c) for c in f8.children if c)) > 1  # mixed branching
        p, _ = pv_day_profile(f32)
        assert p.shape == (720, 31) and p.max() > 0 > p.min()


class TestOutputs:
    def test_trajectory_csv_exact_round_trip(self, scenario8, tmp_path):
        from distvolt.simulation import run
        tr = run(scenario8.replace(horizon=30, delay=DelayModel.uniform(3), noise_std=0.003))
        path = tmp_path / "t.csv"
        fileio.write_trajectory(tr, path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.splitlines()[0] == b"t,bus,p,q,v,lam_lo,lam_hi,cost,msgs"
        back = fileio.read_trajectory(path)
        for key in ("p", "q", "v", "lam_lo", "lam_hi", "cost"):
            np.testing.assert_array_equal(back[key], getattr(tr, key))
        np.testing.assert_array_equal(back["msgs"], tr.msgs)
        assert len(raw.splitlines()) == 1 + 30 * 7

    def test_feasibility_index(self, scenario8):
        from distvolt.simulation import run
        tr = run(scenario8.replace(horizon=2000))
        k = fileio.iterations_to_feasibility(tr, scenario8.limits)
        viol = tr.violation(scenario8.limits)
        assert k > 0 and np.all(viol[k:] <= fileio.FEASIBILITY_TOL) and viol[k - 1] > fileio.FEASIBILITY_TOL


class TestCommands:
    def test_run_smoke_and_determinism(self, tmp_path, capsys):
        ini = data_path("feeder8_static.ini")
        assert cli.main(["run", str(ini), "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["run", str(ini), "--out", str(tmp_path / "b")]) == 0
        names = ["trajectory.csv", "summary.csv", "timeseries_p.csv", "timeseries_q.csv",
                 "timeseries_vmag.csv"]
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        rows = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()
        assert len(rows) == 1 + 4000 * 7
        summary = fileio.read_summary(tmp_path / "a" / "summary.csv")
        assert int(summary["total_messages"]) == 4000 * 13
        assert "iterations_to_feasibility" in capsys.readouterr().out

    def test_run_capacity_scenario_respects_box(self, tmp_path):
        assert cli.main(["run", str(data_path("feeder32_pvday.ini")), "--out", str(tmp_path)]) == 0
        s = fileio.read_summary(tmp_path / "summary.csv")
        assert float(s["max_abs_p"]) <= 0.1 and float(s["max_abs_q"]) <= 0.1

    def test_run_config_error_exit(self, workdir, capsys):
        path = write_ini(workdir, "[scenario]\nnetwork = nowhere.csv\nhorizon = 3\n")
        assert cli.main(["run", str(path), "--out", str(workdir / "o")]) == 1
        assert "configuration error" in capsys.readouterr().err

    def test_run_diverged_exit(self, tmp_path, capsys):
        for n in ("feeder32.csv", "feeder32_pvday.csv"):
            shutil.copy(data_path(n), tmp_path / n)
        text = data_path("feeder32_pvday.ini").read_text().replace("gamma = 1.0", "gamma = 30")
        assert cli.main(["run", str(write_ini(tmp_path, text)), "--out", str(tmp_path / "o")]) == 2
        assert "diverged" in capsys.readouterr().err

    def test_verify_passes_on_bundled(self, tmp_path, capsys):
        report_path = tmp_path / "r.csv"
        assert cli.main(["verify", str(data_path("feeder8_static.ini")), "--report", str(report_path)]) == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out
        rep = Report.from_csv(report_path.read_text())
        assert rep.passed and {c.name for c in rep.checks} >= {
            "z_delayed_sums", "gradient_error_bound", "dual_increase_bound", "kkt_final",
            "dual_gradient_fd", "price_step_tail"}
        # Text and CSV forms carry the same verdicts.
        for c in rep.checks:
            assert f"PASS  {c.name}" in out

    def test_verify_detects_corrupted_recursion(self, monkeypatch, capsys):
        def broken(self):
            base = self.lam_lo - self.lam_hi + self.C @ self.alpha_hat
            self.z_p = 1.01 * self.chi_r * base + self.beta_p
            self.z_q = self.chi_x * base + self.beta_q

        monkeypatch.setattr(Simulator, "_update_z", broken)
        assert cli.main(["verify", str(data_path("feeder8_static.ini"))]) == 3
        out = capsys.readouterr().out
        assert "FAIL  z_delayed_sums" in out

    def test_verify_warns_on_large_step(self, workdir, caplog):
        text = (workdir / "feeder8_static.ini").read_text().replace("gamma = auto", "gamma = 0.5")
        text = text.replace("horizon = 4000", "horizon = 200")
        sc = fileio.load_scenario(write_ini(workdir, text))
        rep = verify(sc)
        assert any("exceeds" in w for w in rep.warnings)
        assert any("exceeds" in r.message for r in caplog.records)
        assert rep.checks  # still ran

    def test_verify_forces_exact_setting(self, caplog):
        sc = fileio.load_scenario(data_path("feeder32_robust.ini")).replace(horizon=40)
        rep = verify(sc)
        text = " ".join(rep.warnings)
        for word in ("linear", "noise", "model error", "first tick"):
            assert word in text

    def test_oracle_slack_prints_zero_prices(self, capsys):
        assert cli.main(["oracle", str(data_path("feeder8_slack.ini"))]) == 0
        out = dict(line.split(": ", 1) for line in capsys.readouterr().out.splitlines())
        assert all(float(v) == 0.0 for v in out["lam_lo_star"].split())
        assert all(float(v) == 0.0 for v in out["lam_hi_star"].split())

    def test_oracle_tight_scenario(self, capsys, scenario8):
        assert cli.main(["oracle", str(data_path("feeder8_static.ini"))]) == 0
        out = dict(line.split(": ", 1) for line in capsys.readouterr().out.splitlines())
        assert float(out["kkt_residual"]) <= 1e-8
        assert float(out["lam_lo_star"].split()[3]) > 0
        # Step bound by hand from the printed constants.
        N, d, L = int(out["N"]), int(out["d"]), float(out["L"])
        assert float(out["gamma_max"]) == pytest.approx(2 / ((1 + (d + 1) * np.sqrt(N)) * L), rel=1e-15)

    def test_oracle_no_convergence_exit(self, monkeypatch, capsys):
        from distvolt import oracle
        real = oracle.centralized_solve
        monkeypatch.setattr(cli, "centralized_solve", lambda *a, **k: real(*a, max_iter=3, **k))
        assert cli.main(["oracle", str(data_path("feeder8_static.ini"))]) == 2

    def test_log_level_env(self, monkeypatch, capsys):
        monkeypatch.setenv("DISTVOLT_LOG", "debug")
        assert cli.main(["oracle", str(data_path("feeder8_slack.ini"))]) == 0
