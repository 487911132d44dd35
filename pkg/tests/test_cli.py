"""Tests for the CLI module."""

import pytest

from magrasp.cli import create_parser, main

SHORT_RUN = """
scenario = balloon
duration = 1.0
seed = 2
control.grasp.theta_r = 0.35
"""


class TestCreateParser:
    """Tests for argument parser creation."""

    def test_creates_parser(self):
        parser = create_parser()
        assert parser.prog == "magrasp"

    def test_version_flag(self, capsys):
        parser = create_parser()
        with pytest.raises(SystemExit) as exc_info:
            parser.parse_args(["--version"])
        assert exc_info.value.code == 0
        assert "magrasp" in capsys.readouterr().out

    def test_run_defaults(self):
        args = create_parser().parse_args(["run", "balloon.cfg"])
        assert args.command == "run"
        assert args.config == "balloon.cfg"
        assert args.seed is None
        assert args.out is None
        assert args.dump_stream is False
        assert args.quiet is False

    def test_run_with_flags(self):
        args = create_parser().parse_args(["run", "balloon.cfg", "--seed", "7", "-o", "out", "-q", "--dump-stream"])
        assert args.seed == 7
        assert args.out == "out"
        assert args.quiet is True
        assert args.dump_stream is True

    def test_replay_takes_stream(self):
        args = create_parser().parse_args(["replay", "stream.bin", "--out", "decoded"])
        assert args.stream == "stream.bin"
        assert args.out == "decoded"

    def test_validate_has_no_out(self):
        with pytest.raises(SystemExit):
            create_parser().parse_args(["validate", "x.cfg", "--out", "dir"])

    def test_seed_must_be_integer(self):
        with pytest.raises(SystemExit):
            create_parser().parse_args(["run", "x.cfg", "--seed", "abc"])


class TestMain:
    """Tests for the main entry point."""

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 0
        assert "usage" in capsys.readouterr().out.lower()

    def test_validate_valid(self, scenarios_dir, capsys):
        path = scenarios_dir / "balloon.cfg"
        assert main(["validate", str(path)]) == 0
        assert f"✅ {path} is valid" in capsys.readouterr().out

    def test_validate_verbose_prints_canonical_form(self, scenarios_dir, capsys):
        assert main(["validate", str(scenarios_dir / "bottle.cfg"), "-v", "--no-color"]) == 0
        out = capsys.readouterr().out
        assert "scenario = bottle" in out
        assert "object.kind = bottle" in out

    def test_validate_invalid(self, write_config, capsys):
        path = write_config("duration = -1.0\ncontrol.grasp.stiffness = 2.0\n")
        assert main(["validate", str(path)]) == 1
        err = capsys.readouterr().err
        assert f"❌ Error: invalid configuration {path}" in err
        assert "  duration:" in err
        assert "  control.grasp.stiffness:" in err

    def test_validate_missing_file(self, temp_dir, capsys):
        assert main(["validate", str(temp_dir / "missing.cfg")]) == 1
        assert "cannot read file" in capsys.readouterr().err

    def test_replay_missing_stream(self, temp_dir, capsys):
        assert main(["replay", str(temp_dir / "missing.bin")]) == 1
        assert "does not exist" in capsys.readouterr().err

    def test_run_writes_outputs(self, write_config, temp_dir, capsys):
        path = write_config(SHORT_RUN)
        out = temp_dir / "out"
        assert main(["run", str(path), "--out", str(out), "--dump-stream", "--no-color"]) == 0
        for name in ("ticks.csv", "snapshots.csv", "metrics.txt", "config.cfg", "stream.bin"):
            assert (out / name).is_file()
        assert "seed = 2" in (out / "metrics.txt").read_text(encoding="utf-8")
        assert "magrasp v" in capsys.readouterr().out

    def test_run_then_replay(self, write_config, temp_dir, capsys):
        path = write_config(SHORT_RUN)
        run_dir = temp_dir / "run"
        assert main(["run", str(path), "-o", str(run_dir), "--dump-stream", "-q"]) == 0
        replay_dir = temp_dir / "replay"
        assert main(["replay", str(run_dir / "stream.bin"), "-o", str(replay_dir), "-q"]) == 0
        frames = (replay_dir / "frames.csv").read_text(encoding="utf-8").splitlines()
        errors = (replay_dir / "framing_errors.csv").read_text(encoding="utf-8").splitlines()
        assert frames[0] == "t,node,seq,bx,by,bz"
        assert len(frames) > 1
        assert errors == ["start,end,reason"]
        assert capsys.readouterr().out == ""

    def test_seed_override(self, write_config, temp_dir):
        path = write_config(SHORT_RUN)
        out = temp_dir / "out"
        assert main(["run", str(path), "--seed", "11", "-o", str(out), "-q"]) == 0
        assert "seed = 11" in (out / "config.cfg").read_text(encoding="utf-8")

    def test_sweep_outputs(self, scenarios_dir, temp_dir):
        out = temp_dir / "sweep"
        assert main(["sweep", str(scenarios_dir / "sweep.cfg"), "-o", str(out), "-q"]) == 0
        rows = (out / "sweep.csv").read_text(encoding="utf-8").splitlines()
        assert len(rows) == 50
        assert "improvement = " in (out / "sweep.txt").read_text(encoding="utf-8")

    def test_calibrate_outputs(self, write_config, temp_dir):
        path = write_config("scenario = calibrate\nduration = 1.0\ncalibration.samples = 50\ncalibration.holdout = 50")
        out = temp_dir / "cal"
        assert main(["calibrate", str(path), "-o", str(out), "-q"]) == 0
        assert "sensor.1.a = " in (out / "calibration.txt").read_text(encoding="utf-8")
        assert "holdout_rms_z_N = " in (out / "calibration_metrics.txt").read_text(encoding="utf-8")

    def test_ablate_outputs(self, write_config, temp_dir):
        path = write_config(SHORT_RUN)
        out = temp_dir / "ablate"
        assert main(["ablate", str(path), "-o", str(out), "-q"]) == 0
        assert (out / "baseline" / "ticks.csv").is_file()
        assert (out / "ablated" / "ticks.csv").is_file()
        comparison = (out / "comparison.txt").read_text(encoding="utf-8")
        assert comparison.startswith("# ablated flags: force_feedback, payload_ff")

    @pytest.mark.slow
    def test_run_is_reproducible(self, scenarios_dir, temp_dir):
        config = str(scenarios_dir / "balloon.cfg")
        first, second = temp_dir / "a", temp_dir / "b"
        assert main(["run", config, "--seed", "7", "-o", str(first), "-q"]) == 0
        assert main(["run", config, "--seed", "7", "-o", str(second), "-q"]) == 0
        assert (first / "ticks.csv").read_bytes() == (second / "ticks.csv").read_bytes()
