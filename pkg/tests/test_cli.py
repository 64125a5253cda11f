import json
import os

import numpy as np
import pytest

from photonpaint import cli
from photonpaint.config import (build_cavity, build_detector, build_system,
                                parse_quantity, resolve_config)
from photonpaint.exceptions import ConfigError


def write(path, text):
    path.write_text(text)
    return str(path)


SMALL_DICKE = """
[system]
n_atoms = 4

[drive]
m_target = 1

[run]
t_d_count = 2
"""


class TestConfig:
    def test_parse_rate_units(self):
        assert parse_quantity("500 MHz", "rate") == 2 * np.pi * 5e8
        assert parse_quantity("1 kHz", "rate") == 2 * np.pi * 1e3
        assert parse_quantity("2.5 rad/s", "rate") == 2.5
        assert parse_quantity(3.0, "rate") == 3.0

    def test_parse_time_and_angle(self):
        assert parse_quantity("3 us", "time") == 3e-6
        assert abs(parse_quantity("90 deg", "angle") - np.pi / 2) < 1e-12
        assert parse_quantity(0.5, "angle") == 0.5

    def test_bad_quantity_rejected(self):
        for bad in ("1 parsec", "fast", "1 2 3"):
            with pytest.raises(ConfigError):
                parse_quantity(bad, "rate")

    def test_resolve_merges_defaults(self):
        cfg = resolve_config("dicke", {"system": {"n_atoms": 4}})
        assert cfg["system"]["n_atoms"] == 4
        assert cfg["system"]["omega_s"] == 1.0
        assert cfg["cavity"]["kappa"] == 1.0

    def test_mixed_system_keys_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config("dicke", {"system": {"omega_m": 1.0}})

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config("nope", {})

    def test_build_models(self):
        cfg = resolve_config("fock", {})
        system = build_system(cfg)
        cavity = build_cavity(cfg, system)
        detector = build_detector(cfg)
        assert system.x1 == 0.5
        assert cavity.kappa == 1.0
        assert detector.q == 1.0

    def test_cooperativity_loss_route(self):
        cfg = resolve_config("dicke", {"cavity": {"eta": 8.0}})
        system = build_system(cfg)
        cavity = build_cavity(cfg, system)
        # kappa_loss = N omega_s^2/(2 eta kappa)
        assert abs(cavity.kappa_loss - 8 * 1.0 / (2 * 8.0 * 1.0)) < 1e-12


class TestPresetRuns:
    def test_dicke_run_outputs(self, tmp_path):
        cfg = write(tmp_path / "c.toml", SMALL_DICKE)
        out = tmp_path / "out"
        rc = cli.main(["dicke", "--config", cfg, "--out", str(out),
                       "--jobs", "1"])
        assert rc == 0
        assert (out / "results.csv").exists()
        assert (out / "metadata.json").exists()
        assert (out / "resolved_config.json").exists()
        assert (out / "waveform.json").exists()
        lines = (out / "results.csv").read_text().strip().split("\n")
        assert lines[0].split(",")[0] == "preset"
        assert len(lines) == 3  # header + 2 detection times
        # config echo carries the defaulted values
        echo = json.loads((out / "resolved_config.json").read_text())
        assert echo["system"]["omega_s"] == 1.0
        assert echo["system"]["n_atoms"] == 4

    def test_determinism_byte_identical(self, tmp_path):
        cfg = write(tmp_path / "c.toml", SMALL_DICKE)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli.main(["dicke", "--config", cfg, "--out", str(out1),
                         "--jobs", "1"]) == 0
        assert cli.main(["dicke", "--config", cfg, "--out", str(out2),
                         "--jobs", "1"]) == 0
        assert (out1 / "results.csv").read_bytes() \
            == (out2 / "results.csv").read_bytes()

    def test_config_error_exit_code(self, tmp_path):
        bad = write(tmp_path / "bad.toml", "[system]\nomega_m = 1.0\n")
        rc = cli.main(["dicke", "--config", bad, "--out",
                       str(tmp_path / "o"), "--jobs", "1"])
        assert rc == 2

    def test_missing_config_file_exit_code(self, tmp_path):
        rc = cli.main(["dicke", "--config", str(tmp_path / "none.toml"),
                       "--out", str(tmp_path / "o"), "--jobs", "1"])
        assert rc == 2

    def test_physics_error_exit_code(self, tmp_path):
        # phonon cutoff far too small for the requested Fock target
        cfg = write(tmp_path / "c.toml", """
[system]
omega_m = 1.0
g0 = 3.0
n_ph_max = 4

[drive]
m_target = 2
""")
        rc = cli.main(["fock", "--config", cfg, "--out",
                       str(tmp_path / "o"), "--jobs", "1"])
        assert rc == 3


class TestSweepCommand:
    def test_empty_plan_header_only(self, tmp_path):
        plan = write(tmp_path / "plan.toml", "")
        out = tmp_path / "out"
        rc = cli.main(["sweep", "--plan", plan, "--out", str(out),
                       "--jobs", "1"])
        assert rc == 0
        lines = (out / "results.csv").read_text().strip().split("\n")
        assert len(lines) == 1
        assert lines[0].startswith("preset,eps_over_omega")

    def test_two_by_two_grid_row_major(self, tmp_path):
        plan = write(tmp_path / "plan.toml", """
preset = "dicke"

[axes]
eps_over_omega = [1e-3, 2e-3]
rd_over_qkappa = [0.0, 1e-4]
""")
        cfgp = write(tmp_path / "c.toml", SMALL_DICKE)
        out = tmp_path / "out"
        rc = cli.main(["sweep", "--plan", plan, "--config", cfgp,
                       "--out", str(out), "--jobs", "1"])
        assert rc == 0
        lines = (out / "results.csv").read_text().strip().split("\n")
        assert len(lines) == 5
        eps_col = [float(l.split(",")[1]) for l in lines[1:]]
        rd_col = [float(l.split(",")[5]) for l in lines[1:]]
        assert eps_col == [1e-3, 1e-3, 2e-3, 2e-3]
        assert rd_col == [0.0, 1e-4, 0.0, 1e-4]

    def test_oversized_axis_rejected(self, tmp_path):
        plan = write(tmp_path / "plan.toml",
                     "preset = \"dicke\"\n[axes]\nt_d = "
                     + str(list(np.linspace(7, 8, 10_001).round(6))) + "\n")
        rc = cli.main(["sweep", "--plan", plan, "--out",
                       str(tmp_path / "o"), "--jobs", "1"])
        assert rc == 2


class TestPhaseSpaceCommands:
    def test_husimi_output(self, tmp_path):
        cfg = write(tmp_path / "c.toml", """
[system]
n_atoms = 6
[drive]
phi_sep = 2.0943951023931953
eps_over_omega = [1e-3]
[run]
t_d = 2.8
""")
        out = tmp_path / "out"
        rc = cli.main(["husimi", "--preset", "cat-spin", "--config", cfg,
                       "--out", str(out), "--format", "csv", "--format",
                       "svg"])
        assert rc == 0
        assert (out / "husimi.csv").exists()
        assert (out / "husimi.svg").exists()

    def test_wigner_output(self, tmp_path):
        cfg = write(tmp_path / "c.toml", """
[system]
omega_m = 1.0
g0 = 0.5
n_ph_max = 24
[drive]
m_target = 1
[run]
t_d = 7.0
""")
        out = tmp_path / "out"
        rc = cli.main(["wigner", "--preset", "fock", "--config", cfg,
                       "--out", str(out)])
        assert rc == 0
        header = (out / "wigner.csv").read_text().split("\n", 1)[0]
        assert header == "x,p,W"

    def test_wigner_needs_mech(self, tmp_path):
        rc = cli.main(["wigner", "--preset", "dicke", "--out",
                       str(tmp_path / "o")])
        assert rc == 2


class TestWaveformRoundTrip:
    def test_emitted_waveform_reloads(self, tmp_path):
        cfg = write(tmp_path / "c.toml", SMALL_DICKE)
        out = tmp_path / "out"
        assert cli.main(["dicke", "--config", cfg, "--out", str(out),
                         "--jobs", "1"]) == 0
        from photonpaint.pulses import DriveWaveform
        wf = DriveWaveform.load(out / "waveform.json")
        wf.save(out / "waveform2.json")
        assert (out / "waveform.json").read_bytes() \
            == (out / "waveform2.json").read_bytes()
