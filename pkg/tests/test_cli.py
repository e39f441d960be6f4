"""Config parsing/serialization, dispatch pipelines, determinism."""

import os

import numpy as np
import pytest

from darcylayers.cli import (
    ConfigError,
    dispatch,
    main,
    parse_config,
    serialize_config,
)
from darcylayers.transport import read_record

MINIMAL = """
[layers]
interfaces = [0.0, -1.0]
K = [1.0]
D = [1.0]
"""

NULL_CONTRAST = """
[layers]
L = 1.0
interfaces = [0.0, -1.0]
K = [1.0]
D = [1.0]

[profile]
delta = 0.1
c0 = 0.0
c_mH = 0.0

[grid]
nx = 8
target_dz = 0.1

[time]
t_end = 0.05
dt_max = 0.01
safety = 0.5
observer_cadence = 0.025

[init]
kind = "zero"
"""

SWEEP_NULL = """
[layers]
interfaces = [0.0, -0.5, -1.0]
K = [1.0, 1.0]
D = [1.0, 1.0]

[profile]
delta = 0.1
c0 = 1.0
c_mH = 0.0

[grid]
nx = 8
target_dz = 0.1

[time]
t_end = 0.1
dt_max = 0.01
safety = 0.5
observer_cadence = 0.05

[init]
kind = "mode"
amplitude = 0.05
mode = 1

[thin]
j = 2
thin_K = 1.0
thin_D = 1.0
epsilons = [0.1, 0.05]
"""


class TestParseConfig:
    def test_minimal_defaults_filled(self):
        cfg = parse_config(MINIMAL)
        assert cfg.layers.K == (1.0,)
        assert cfg.grid.nx == 32          # default
        assert cfg.time.safety == 0.5     # default
        assert cfg.thin is None
        assert cfg.init.kind == "zero"

    def test_delta_overlap_names_key(self):
        bad = MINIMAL + "\n[profile]\ndelta = 0.6\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert any("profile.delta" in issue for issue in err.value.issues)

    def test_unknown_section_and_key(self):
        bad = MINIMAL + "\n[bogus]\nx = 1\n\n[grid]\nny = 3\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        issues = "\n".join(err.value.issues)
        assert "bogus" in issues and "grid.ny" in issues

    def test_all_errors_collected(self):
        bad = """
[layers]
interfaces = [0.0, -1.0]
K = [1.0]
D = [1.0]

[profile]
delta = 0.9

[grid]
nx = 2

[time]
safety = 3.0
"""
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert len(err.value.issues) >= 3

    def test_syntax_error_reported(self):
        with pytest.raises(ConfigError) as err:
            parse_config("[layers\nK = [1.0]")
        assert any("syntax" in issue for issue in err.value.issues)

    def test_zero_epsilon_accepted(self):
        cfg = parse_config(SWEEP_NULL.replace(
            "epsilons = [0.1, 0.05]", "epsilons = [0.1, 0.05, 0.0]"
        ))
        assert cfg.thin.epsilons == (0.1, 0.05, 0.0)

    def test_thin_h_mismatch_rejected(self):
        bad = SWEEP_NULL + "h = 0.3\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert any("thin.h" in issue for issue in err.value.issues)

    def test_thin_h_matching_accepted(self):
        cfg = parse_config(SWEEP_NULL + "h = 0.5\n")
        assert cfg.thin.h == 0.5

    def test_round_trip(self):
        for text in (MINIMAL, NULL_CONTRAST, SWEEP_NULL):
            cfg = parse_config(text)
            assert parse_config(serialize_config(cfg)) == cfg

    def test_type_errors_reported(self):
        bad = MINIMAL + "\n[grid]\nnx = 8.5\n"
        with pytest.raises(ConfigError) as err:
            parse_config(bad)
        assert any("grid.nx" in issue for issue in err.value.issues)

    def test_delta_default_scales_with_depth(self):
        shallow = MINIMAL.replace("[0.0, -1.0]", "[0.0, -0.2]")
        cfg = parse_config(shallow)
        assert cfg.profile.delta == pytest.approx(0.025)  # H/8


class TestDispatch:
    def test_simulate_null_contrast(self, tmp_path):
        cfg = parse_config(NULL_CONTRAST)
        status = dispatch("simulate", cfg, str(tmp_path))
        assert status == 0
        rec = read_record(tmp_path / "trajectory.txt")
        assert np.all(rec.psi_sq == 0.0)
        assert (tmp_path / "config.toml").exists()
        assert (tmp_path / "psi_final.field").exists()

    def test_verify_detects_corruption(self, tmp_path):
        cfg = parse_config(NULL_CONTRAST.replace('kind = "zero"',
                                                 'kind = "mode"\namplitude = 0.1'))
        run_dir = tmp_path / "run"
        assert dispatch("simulate", cfg, str(run_dir)) == 0
        # corrupt the record: inflate the L2 column far above the envelope,
        # leaving the initial sample intact
        lines = (run_dir / "trajectory.txt").read_text().splitlines()
        out = []
        seen_data = 0
        for ln in lines:
            if ln.startswith("#") or not ln.strip():
                out.append(ln)
                continue
            seen_data += 1
            if seen_data == 1:
                out.append(ln)
                continue
            cols = ln.split()
            cols[1] = "1e6"
            out.append(" ".join(cols))
        bad_path = tmp_path / "corrupt.txt"
        bad_path.write_text("\n".join(out) + "\n")
        ver_dir = tmp_path / "verify"
        status = dispatch("verify", cfg, str(ver_dir), record_path=str(bad_path))
        assert status != 0
        assert "fail" in (ver_dir / "summary.txt").read_text()

    def test_verify_passes_clean_record(self, tmp_path):
        cfg = parse_config(NULL_CONTRAST)
        run_dir = tmp_path / "run"
        dispatch("simulate", cfg, str(run_dir))
        status = dispatch("verify", cfg, str(tmp_path / "v"),
                          record_path=str(run_dir / "trajectory.txt"))
        assert status == 0

    def test_sweep_null_family_flagged(self, tmp_path):
        cfg = parse_config(SWEEP_NULL)
        status = dispatch("sweep-epsilon", cfg, str(tmp_path))
        assert status == 0
        rates = (tmp_path / "rates.txt").read_text()
        assert "# null_family = true" in rates
        assert (tmp_path / "eps_0.1.txt").exists()
        assert (tmp_path / "eps_0.05.txt").exists()

    def test_unknown_command(self, tmp_path):
        cfg = parse_config(MINIMAL)
        assert dispatch("frobnicate", cfg, str(tmp_path)) == 2

    def test_sweep_requires_thin_section(self, tmp_path):
        cfg = parse_config(NULL_CONTRAST)
        with pytest.raises(ConfigError):
            dispatch("sweep-epsilon", cfg, str(tmp_path))

    def test_snapshot_saving(self, tmp_path):
        text = NULL_CONTRAST + "\n[output]\nsave_snapshots = true\n"
        cfg = parse_config(text)
        assert dispatch("simulate", cfg, str(tmp_path)) == 0
        snaps = sorted(p for p in os.listdir(tmp_path) if p.startswith("psi_0"))
        assert len(snaps) == 3  # t = 0, 0.025, 0.05

    def test_attractor_outputs(self, tmp_path):
        cfg = parse_config(SWEEP_NULL + """
[attractor]
n_init = 1
radius = 0.5
spin_pad = 0.0
window = 0.5
cadence = 0.25
min_snapshots = 2
""")
        assert dispatch("attractor", cfg, str(tmp_path)) == 0
        semis = (tmp_path / "semidistance.txt").read_text().splitlines()
        assert len(semis) == 3  # header + two eps rows
        assert (tmp_path / "attractor_eps_0.1.txt").exists()
        assert (tmp_path / "attractor_eps_0.txt").exists()


class TestDeterminism:
    def _run_twice(self, cfg_text, cmd, tmp_path, **kw):
        cfg = parse_config(cfg_text)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert dispatch(cmd, cfg, str(out1), **kw) == dispatch(cmd, cfg, str(out2), **kw)
        files1 = sorted(os.listdir(out1))
        files2 = sorted(os.listdir(out2))
        assert files1 == files2
        for name in files1:
            b1 = (out1 / name).read_bytes()
            b2 = (out2 / name).read_bytes()
            assert b1 == b2, f"{cmd}: {name} differs between runs"

    def test_simulate_byte_identical(self, tmp_path):
        text = NULL_CONTRAST.replace('kind = "zero"',
                                     'kind = "random"\nnorm = 0.2\nseed = 9')
        self._run_twice(text, "simulate", tmp_path)

    def test_sweep_byte_identical(self, tmp_path):
        self._run_twice(SWEEP_NULL, "sweep-epsilon", tmp_path)


class TestMain:
    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2

    def test_config_errors_exit_2(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(MINIMAL + "\n[profile]\ndelta = 0.9\n")
        assert main(["simulate", "--config", str(path)]) == 2

    def test_simulate_via_main(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(NULL_CONTRAST)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        assert (out / "trajectory.txt").exists()

    def test_epsilon_override(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(SWEEP_NULL)
        out = tmp_path / "out"
        status = main(["sweep-epsilon", "--config", str(path),
                       "--out", str(out), "--epsilons", "0.2,0.1"])
        assert status == 0
        assert (out / "eps_0.2.txt").exists()

    def test_verify_requires_record_flag(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(NULL_CONTRAST)
        with pytest.raises(SystemExit):
            main(["verify", "--config", str(path)])
