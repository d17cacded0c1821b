from pathlib import Path

import pytest

from hybridcst import io
from hybridcst.cli import main
from hybridcst.config import ExperimentConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DEMO = str(CONFIGS / "demo.yaml")


def minimal_config(tmp_path):
    d = ExperimentConfig.load(DEMO).to_dict()
    d["solvers"] = {"TK": {"grid": [1e-4, 1.0, 3], "max_iterations": 200}}
    d["study"] = {"schemes": ["hybrid", "uniform"], "solvers": ["TK"], "phantoms": ["centre"],
                  "sweep_snr_db": None, "snr_db": [None], "n_reps": 1}
    d["phantoms"]["centre"]["cell_size"] = 0.2
    p = tmp_path / "min.yaml"
    p.write_text(ExperimentConfig.from_dict(d).dumps())
    return str(p)


def test_mesh_command(tmp_path, capsys):
    assert main(["mesh", "--config", DEMO, "--mesh", "hybrid", "--out", str(tmp_path)]) == 0
    assert "N=52" in capsys.readouterr().out
    header, rows = io.read_csv(tmp_path / "mesh_hybrid.csv")
    assert len(rows) == 52 and header[0] == "id"
    assert (tmp_path / "mesh_hybrid.pgm").exists()


def test_sense_command(tmp_path, capsys):
    assert main(["sense", "--config", DEMO, "--mesh", "uniform", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "shape=32x49" in out
    for name in ("spectrum_uniform_extended.csv", "spectrum_uniform_raw.csv"):
        _, rows = io.read_csv(tmp_path / name)
        assert len(rows) == 49


def test_provenance_in_outputs(tmp_path):
    main(["svd", "--config", DEMO, "--mesh", "hybrid", "--out", str(tmp_path), "--seed", "5"])
    digest = ExperimentConfig.load(DEMO).digest()
    text = (tmp_path / "spectrum_hybrid_extended.csv").read_text()
    assert f"# config_sha256={digest}" in text and "# seed=5" in text


def test_phantom_project_reconstruct(tmp_path, capsys):
    args = ["--config", DEMO, "--mesh", "hybrid", "--out", str(tmp_path)]
    assert main(["phantom", *args]) == 0
    assert main(["project", *args, "--snr", "40"]) == 0
    assert main(["reconstruct", *args, "--solver", "ART", "--value", "0.2", "--snr", "none"]) == 0
    assert "IE_RoS=" in capsys.readouterr().out
    assert (tmp_path / "recon_hybrid_ART_centre_f1.pgm").exists()


def test_exit_codes(tmp_path, capsys):
    assert main(["mesh", "--config", DEMO, "--mesh", "nope", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("layouts: {}\n")
    assert main(["mesh", "--config", str(bad), "--out", str(tmp_path)]) == 1
    args = ["--config", DEMO, "--mesh", "hybrid", "--out", str(tmp_path)]
    assert main(["reconstruct", *args, "--solver", "ART", "--value", "5.0"]) == 2
    with pytest.raises(SystemExit):
        main(["bogus"])


def test_run_smoke_and_determinism(tmp_path):
    cfg = minimal_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--jobs", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--jobs", "1"]) == 0
    header, rows = io.read_csv(a / "comparison.csv")
    assert len(rows) == 2 and "ie_ros" in header
    files = sorted(p.name for p in a.iterdir())
    assert "summary.txt" in files and any(f.startswith("recon_hybrid_TK") for f in files)
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_sweep_command(tmp_path):
    cfg = minimal_config(tmp_path)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path), "--mesh", "hybrid", "--jobs", "1"]) == 0
    _, rows = io.read_csv(tmp_path / "sweep_hybrid_TK.csv")
    assert len(rows) == 3
