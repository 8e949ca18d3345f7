import json

import pytest

from qbm import __version__, cli
from qbm.cli import main
from qbm.errors import ConfigError, PoleError


def _data_rows(text):
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    return lines[0].split(","), [[float(v) for v in l.split(",")] for l in lines[1:]]


def test_propagator_csv(tmp_path):
    out = tmp_path / "prop.csv"
    assert main(["propagator", "--set", "n_points=5", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith(f"# qbm {__version__}\n")
    assert "# gamma=0.1" in text
    columns, rows = _data_rows(text)
    assert columns == ["t", "G", "Gdot", "Gddot", "detPhi"]
    assert len(rows) == 5
    assert rows[0][:3] == pytest.approx([0.0, 0.0, 1.0], abs=1e-12)
    assert json.loads(text.splitlines()[-1][2:]) == {}


def test_sub_ohmic_det_phi_column_changes_sign(capsys):
    argv = ["propagator", "--set", "family=sub_ohmic", "--set", "gamma=0.25", "--set", "t_max=80",
            "--set", "n_points=161"]
    assert main(argv) == 0
    _, rows = _data_rows(capsys.readouterr().out)
    det = [r[4] for r in rows]
    assert det[0] == pytest.approx(1.0, abs=1e-10)
    assert det[-1] < 0


def test_output_is_reproducible(tmp_path):
    """Two runs with the same configuration produce byte-identical files."""
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["covariance", "--set", "n_points=4", "--set", "T=1", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_json_format(tmp_path):
    out = tmp_path / "state.json"
    assert main(["state", "--set", "n_points=3", "--set", "kick=1", "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["version"] == __version__
    assert doc["config"]["kick"] == 1.0
    assert doc["columns"][:3] == ["t", "x", "p"]
    assert len(doc["rows"]) == 3
    assert doc["footer"] == {"kick": 1.0}


def test_config_file_and_overrides(tmp_path):
    """Values from the file apply unless --set overrides them."""
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# bath\ngamma = 0.2  # weak\nT = 0.5\nn_points = 2\n")
    out = tmp_path / "out.csv"
    assert main(["propagator", "--config", str(cfg), "--set", "T=1.5", "--out", str(out)]) == 0
    text = out.read_text()
    assert "# gamma=0.2" in text
    assert "# T=1.5" in text


@pytest.mark.parametrize("argv", [
    ["propagator", "--set", "colour=blue"],
    ["propagator", "--set", "gamma=-1"],
    ["propagator", "--set", "gamma"],
    ["propagator", "--config", "/nonexistent/qbm.cfg"],
    ["state", "--set", "family=custom"],
    ["state", "--set", "sxx0=0.1", "--set", "spp0=0.1"],
])
def test_configuration_errors_exit_2(argv):
    assert main(argv) == 2


@pytest.mark.parametrize("error, code", [
    (ValueError("thermal_sum needs T > 0"), 3),
    (PoleError("digamma has a pole"), 3),
    (ConfigError("--regime needs family=ohmic"), 2),
])
def test_handler_errors_map_to_exit_codes(monkeypatch, error, code):
    """Library argument errors raised mid-run are numerical failures, not configuration errors."""
    def failing(config, args):
        raise error

    monkeypatch.setitem(cli.HANDLERS, "propagator", failing)
    assert main(["propagator", "--set", "n_points=2"]) == code


def test_regime_flag(capsys):
    assert main(["propagator", "--regime", "--set", "n_points=2"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "Underdamped"
    assert '"regime": "Underdamped"' in out
    assert main(["propagator", "--regime", "--set", "family=sub_ohmic", "--set", "n_points=2"]) == 2


def test_single_point_grid(capsys):
    """n_points = 1 evaluates only t = 0, where sigma_T vanishes."""
    assert main(["covariance", "--set", "n_points=1"]) == 0
    _, rows = _data_rows(capsys.readouterr().out)
    assert rows == [[0.0, 0.0, 0.0, 0.0, 0.0]]


def test_decohere_footer(capsys):
    assert main(["decohere", "--set", "n_points=101", "--set", "t_max=0.5", "--set", "T=5",
                 "--set", "Lambda=100"]) == 0
    footer = json.loads(capsys.readouterr().out.splitlines()[-1][2:])
    assert footer["cutoff_time"] == pytest.approx(0.01)
    assert footer["t_dec_estimate"] == pytest.approx(0.25)


def test_validate_passes_and_fails(tmp_path):
    """Default ohmic checks pass; an impossible tolerance makes the run exit with 4."""
    out = tmp_path / "validate.csv"
    assert main(["validate", "--set", "n_points=5", "--out", str(out)]) == 0
    text = out.read_text()
    assert "FAIL" not in text
    assert json.loads(text.splitlines()[-1][2:])["failed"] == []
    assert main(["validate", "--set", "n_points=5", "--set", "validate_tol=1e-300", "--out", str(out)]) == 4
    assert "FAIL" in out.read_text()


@pytest.mark.parametrize("command, columns", [
    ("diffusion", ["t", "OmegaR2", "Gamma", "Dxp", "Dpp"]),
    ("force", ["t", "x_F", "p_F"]),
    ("spectrum-check", ["t", "gamma", "nu"]),
])
def test_remaining_commands(capsys, command, columns):
    assert main([command, "--set", "n_points=3", "--set", "t_max=2", "--set", "T=1", "--set", "force=0.5"]) == 0
    header, rows = _data_rows(capsys.readouterr().out)
    assert header == columns
    assert len(rows) == 3


def test_decohere_help_documents_half_separation(capsys):
    with pytest.raises(SystemExit):
        main(["decohere", "--help"])
    assert "half the lobe separation" in " ".join(capsys.readouterr().out.split())


def test_monte_carlo_checkpoints():
    """validate samples the ensemble at ten evenly spaced steps and accepts 3 standard errors."""
    assert cli._mc_checkpoints(400) == list(range(40, 401, 40))
    assert len(cli._mc_checkpoints(16)) == 10 and cli._mc_checkpoints(16)[-1] == 16
    assert cli.MC_STDERR == 3.0
