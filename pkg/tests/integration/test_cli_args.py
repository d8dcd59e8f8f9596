"""Integration tests for command-line argument handling in robocell.py.

Tests that parse_args() wires defaults from robocell_config and that main()
maps outcomes to exit codes (0 ok, 1 error, 2 collision).
"""

import json
import tempfile
from pathlib import Path

import pytest

import robocell
from robocell_carve import save_model
from robocell_kinematics import JointTrajectory, save_chain, save_trajectory


@pytest.fixture(autouse=True)
def no_logging_setup(mocker):
    """Keep main() from replacing the root handlers that caplog relies on."""
    return mocker.patch("robocell.configure_logging")


@pytest.fixture
def saved_cell(slider_chain, shell_model):
    """chain.json and v_o.json for the slider in the shell model."""
    with tempfile.TemporaryDirectory() as tmpdir:
        d = Path(tmpdir)
        save_chain(slider_chain, d / "chain.json")
        save_model(shell_model, d / "v_o.json")
        yield d


class TestParseArgs:
    """Tests for parse_args()."""

    def test_sweep_defaults(self):
        args = robocell.parse_args(["sweep", "--chain", "c.json", "--traj", "t.csv"])
        assert args.command == "sweep"
        assert args.spacing == robocell.config.GRID_SPACING
        assert args.iso_offset is None
        assert args.out_dir == "sv"

    def test_iso_offset_value(self):
        args = robocell.parse_args(["sweep", "--chain", "c", "--traj", "t", "--iso-offset", "0.01"])
        assert args.iso_offset == 0.01

    def test_iso_offset_auto(self):
        args = robocell.parse_args(["sweep", "--chain", "c", "--traj", "t", "--iso-offset", "AUTO"])
        assert args.iso_offset is None

    def test_iso_offset_invalid(self):
        with pytest.raises(SystemExit):
            robocell.parse_args(["sweep", "--chain", "c", "--traj", "t", "--iso-offset", "big"])

    def test_check_needs_traj_or_q(self):
        with pytest.raises(SystemExit):
            robocell.parse_args(["check", "--chain", "c", "--model", "m"])

    def test_check_traj_and_q_exclusive(self):
        with pytest.raises(SystemExit):
            robocell.parse_args(["check", "--chain", "c", "--model", "m", "--traj", "t", "--q", "0"])

    def test_check_q_list(self):
        args = robocell.parse_args(["check", "--chain", "c", "--model", "m", "--q", "0.1, -0.2,0.3"])
        assert args.q == [0.1, -0.2, 0.3]
        assert args.clearance == 0.0

    def test_allow_penetration_values(self):
        base = ["check", "--chain", "c", "--model", "m", "--q", "0"]
        assert robocell.parse_args(base).allow_penetration == 0.0
        assert robocell.parse_args(base + ["--allow-penetration", "margin"]).allow_penetration == "margin"
        assert robocell.parse_args(base + ["--allow-penetration", "0.02"]).allow_penetration == 0.02
        with pytest.raises(SystemExit):
            robocell.parse_args(base + ["--allow-penetration", "deep"])

    def test_decimate_topology_flag(self):
        args = robocell.parse_args(["decimate", "--in", "sv", "--out", "svd", "--no-preserve-topology"])
        assert args.no_preserve_topology is True
        assert args.target == robocell.config.DECIMATE_TARGET

    def test_carve_default_bounding_volume(self):
        args = robocell.parse_args(["carve", "--svs", "sv"])
        assert args.bv == f"auto-{robocell.config.BOUNDING_KIND}"

    def test_harness_subcommands(self):
        args = robocell.parse_args(["harness", "gen", "--scene", "wall", "--out", "w.csv", "--n", "10"])
        assert args.harness_command == "gen"
        assert args.n == 10
        args = robocell.parse_args(["harness", "oracle", "--mesh", "a.obj", "--mesh", "b.obj"])
        assert args.mesh == ["a.obj", "b.obj"]

    def test_command_required(self):
        with pytest.raises(SystemExit):
            robocell.parse_args([])


class TestMainExitCodes:
    """Tests for main() dispatch and exit codes."""

    def test_free_configuration(self, saved_cell, capsys):
        code = robocell.main(["check", "--chain", str(saved_cell / "chain.json"),
                              "--model", str(saved_cell / "v_o.json"), "--q", "0"])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["collision"] is False

    def test_collision_returns_two(self, saved_cell, capsys):
        code = robocell.main(["check", "--chain", str(saved_cell / "chain.json"),
                              "--model", str(saved_cell / "v_o.json"), "--q", "0.4"])
        assert code == 2

    def test_allowed_penetration_frees_shallow_contact(self, saved_cell, capsys):
        args = ["check", "--chain", str(saved_cell / "chain.json"), "--model", str(saved_cell / "v_o.json"),
                "--q", "0.15"]
        assert robocell.main(args) == 2
        capsys.readouterr()
        assert robocell.main(args + ["--allow-penetration", "0.1"]) == 0

    def test_trajectory_report_file(self, saved_cell, slider_chain):
        save_trajectory(JointTrajectory([0.0, 1.0], [[0.0], [0.3]]), saved_cell / "plan.csv")
        report = saved_cell / "check.json"
        code = robocell.main(["check", "--chain", str(saved_cell / "chain.json"),
                              "--model", str(saved_cell / "v_o.json"),
                              "--traj", str(saved_cell / "plan.csv"), "--report", str(report)])
        assert code == 2
        doc = json.loads(report.read_text())
        assert doc["first_collision"] == 1

    def test_clearance_check_resamples(self, saved_cell):
        save_trajectory(JointTrajectory([0.0, 1.0], [[0.0], [0.04]]), saved_cell / "plan.csv")
        report = saved_cell / "check.json"
        code = robocell.main(["check", "--chain", str(saved_cell / "chain.json"),
                              "--model", str(saved_cell / "v_o.json"), "--traj", str(saved_cell / "plan.csv"),
                              "--clearance", "0.01", "--report", str(report)])
        assert code == 0
        assert json.loads(report.read_text())["n_samples"] > 2

    def test_missing_model_is_error(self, saved_cell, caplog):
        code = robocell.main(["check", "--chain", str(saved_cell / "chain.json"),
                              "--model", str(saved_cell / "nope.json"), "--q", "0"])
        assert code == 1
        assert "check failed" in caplog.text

    def test_carve_needs_chain_for_auto_bv(self, saved_cell):
        assert robocell.main(["carve", "--svs", str(saved_cell)]) == 1

    def test_decimate_empty_directory(self, tmp_path):
        assert robocell.main(["decimate", "--in", str(tmp_path), "--out", str(tmp_path / "out")]) == 1

    def test_logging_configured_with_level(self, saved_cell, no_logging_setup):
        robocell.main(["--log-level", "DEBUG", "check", "--chain", str(saved_cell / "chain.json"),
                       "--model", str(saved_cell / "v_o.json"), "--q", "0"])
        no_logging_setup.assert_called_once_with("DEBUG")
