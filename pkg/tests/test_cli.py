# tests/test_cli.py
import os

import pandas as pd
import pytest

from models.neural_interp import load_model
from models.run_model import get_runs
from ui.cli import run_scenario_cli
from utils.report_io import DEFAULT_OUT


@pytest.fixture
def paths(tmp_path):
    return {"out": str(tmp_path / "out"), "db": str(tmp_path / "runs.db"), "root": tmp_path}


def cli(*args, paths=None):
    argv = list(args) + ["-q"]
    if paths is not None:
        argv += [f"--db={paths['db']}"]
    return run_scenario_cli(argv)


def test_help_exits_zero(capsys):
    assert run_scenario_cli(["--help"]) == 0
    assert "Usage:" in capsys.readouterr().out


def test_usage_errors_exit_two(paths):
    assert run_scenario_cli(["run"]) == 2
    assert run_scenario_cli(["frobnicate"]) == 2
    assert cli("run", "--scenario=one_blob", "--particles=many", paths=paths) == 2
    assert cli("run", "--scenario=one_blob", "--method=spectral", paths=paths) == 2
    assert cli("converge", "--scenario=one_blob", "--axis=space", paths=paths) == 2


def test_unknown_scenario_exits_one(paths):
    assert cli("run", "--scenario=nowhere", f"--out={paths['out']}", paths=paths) == 1


def test_fdm_run_writes_snapshots(tiny_scenario_file, paths):
    out = paths["out"]
    assert cli("run", f"--scenario={tiny_scenario_file}", "--method=fdm", f"--out={out}",
               "--xlsx", paths=paths) == 0
    for name in ("rho_t0.phks", "conc_t0.2.phks", "metrics.csv", "slice_rho_t0.2.csv",
                 "slice_c_t0.2.csv", "reports.xlsx"):
        assert os.path.exists(os.path.join(out, name)), name
    metrics = pd.read_csv(os.path.join(out, "metrics.csv"))
    assert metrics["time"].tolist() == [0.0, 0.2]
    runs = get_runs(db_file=paths["db"])
    assert runs[0]["method"] == "fdm" and runs[0]["out_dir"] == out


def test_particle_run_writes_particles(tiny_scenario_file, paths):
    out = paths["out"]
    assert cli("run", f"--scenario={tiny_scenario_file}", "--method=sipf-classical",
               "--particles=200", "--save-times=0.1,0.2", f"--out={out}", paths=paths) == 0
    for name in ("particles_t0.1.phkp", "particles_t0.2.phkp", "rho_t0.1.phks", "conc_t0.2.phks"):
        assert os.path.exists(os.path.join(out, name)), name
    assert get_runs(db_file=paths["db"])[0]["particles"] == 200


def test_neural_run_needs_a_model(tiny_scenario_file, paths):
    assert cli("run", f"--scenario={tiny_scenario_file}", "--method=sipf-neural",
               f"--out={paths['out']}", paths=paths) == 1


def test_generate_train_and_run_neural(tiny_scenario_file, paths):
    root = paths["root"]
    radial = str(root / "radial")
    model_dir = str(root / "model")
    assert cli("gen-radial", f"--scenario={tiny_scenario_file}", "--snapshots=3",
               "--radial-points=64", f"--out={radial}", paths=paths) == 0
    assert os.path.exists(os.path.join(radial, "index.csv"))
    assert cli("train", f"--data={radial}", f"--scenario={tiny_scenario_file}", "--epochs=1",
               "--patches=2", "--patch-size=8", f"--out={model_dir}", paths=paths) == 0
    model_file = os.path.join(model_dir, "model.phkw")
    assert load_model(model_file).parameter_count() == 83937
    assert len(pd.read_csv(os.path.join(model_dir, "loss_curve.csv"))) == 1
    assert cli("run", f"--scenario={tiny_scenario_file}", "--method=sipf-neural",
               f"--model={model_file}", "--particles=100", f"--out={paths['out']}",
               paths=paths) == 0
    raw = pd.read_csv(os.path.join(paths["out"], "slice_c_t0.2.csv"), header=None)
    refined = pd.read_csv(os.path.join(paths["out"], "slice_c_refined_t0.2.csv"), header=None)
    assert raw.shape == refined.shape == (8, 8)


def test_output_directory_defaults_to_exports(tiny_scenario_file, paths, monkeypatch):
    monkeypatch.chdir(paths["root"])
    assert cli("run", f"--scenario={tiny_scenario_file}", "--method=fdm", paths=paths) == 0
    exports = paths["root"] / DEFAULT_OUT
    assert (exports / "metrics.csv").exists()
    assert not (exports / "slice_c_refined_t0.2.csv").exists()


def test_converge_both_axes(tiny_scenario_file, paths):
    out = paths["out"]
    assert cli("converge", f"--scenario={tiny_scenario_file}", "--axis=particles",
               "--p-list=50,100", "--reference-p=200", "--t-end=0.2", f"--out={out}",
               paths=paths) == 0
    assert len(pd.read_csv(os.path.join(out, "convergence.csv"))) == 2
    assert cli("converge", f"--scenario={tiny_scenario_file}", "--dt-list=0.1,0.05",
               "--reference-dt=0.025", "--particles=100", "--t-end=0.2", f"--out={out}",
               paths=paths) == 0
    df = pd.read_csv(os.path.join(out, "convergence.csv"))
    assert df["level"].tolist() == [0.1, 0.05]


def test_bench_compare_and_runs(tiny_scenario_file, paths, capsys):
    out = paths["out"]
    assert cli("runs", paths=paths) == 0
    assert "No runs recorded." in capsys.readouterr().out
    assert cli("bench", f"--scenario={tiny_scenario_file}", "--methods=fdm,sipf-classical",
               "--resolutions=8", "--particles=50", "--t-end=0.1", f"--out={out}", paths=paths) == 0
    assert pd.read_csv(os.path.join(out, "bench.csv"))["method"].tolist() == ["fdm", "sipf-classical"]
    assert cli("compare", f"--scenario={tiny_scenario_file}", "--particles=200", f"--out={out}",
               paths=paths) == 0
    assert len(pd.read_csv(os.path.join(out, "comparison.csv"))) == 2
    capsys.readouterr()
    assert cli("runs", "--method=sipf-classical", paths=paths) == 0
    printed = capsys.readouterr().out
    assert "sipf-classical" in printed and "fdm " not in printed
