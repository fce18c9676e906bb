import csv
import json
import subprocess

import pytest

from shs_sentinel import experiments as ex
from shs_sentinel.cli import main
from shs_sentinel.scenarios import CatalogSpec
from shs_sentinel.simulator import NOISE_OFF


def _rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_entry_point_installed():
    out = subprocess.run(["shs-sentinel"], capture_output=True, text=True)
    assert out.returncode == 1 and "usage" in out.stderr


@pytest.mark.parametrize("argv", [["frobnicate"], ["build-catalog", "--bogus"],
                                  ["eigen-table", "--tau", "abc"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_validation_errors_exit_1(tmp_path, capsys):
    assert main(["build-catalog", "--grid", str(tmp_path / "nope.grid")]) == 1
    assert main(["run-switching", "--tau1", "0.05", "--tau0", "0.02", "--length", "1"]) == 1
    assert main(["report", str(tmp_path / "missing.csv")]) == 1
    assert "error" in capsys.readouterr().err


def test_malformed_grid_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.grid"
    bad.write_text("this is not a grid\n")
    assert main(["build-catalog", "--grid", str(bad)]) == 1


def test_runtime_error_exit_2(tmp_path, capsys):
    # without mitigation the unstable scenarios drive the carried state to overflow
    code = main(["run-switching", "--mitigation", "none", "--length", "300", "--method", "shs",
                 "--out", str(tmp_path / "x.csv")])
    assert code == 2
    assert "non-finite" in capsys.readouterr().err


def test_build_catalog(tmp_path, capsys):
    out = tmp_path / "cat.csv"
    assert main(["build-catalog", "--grid", "ieee33.grid", "--out", str(out)]) == 0
    rows = _rows(out)
    assert len(rows) == 93
    assert [r["alpha"] for r in rows] == [str(a) for a in range(1, 94)]
    assert {r["class"] for r in rows} == {"Normal", "Physical", "Control", "Measurement"}
    assert out.read_text().startswith("# manifest=")
    manifest = json.loads((tmp_path / "cat.csv.manifest.json").read_text())
    assert manifest["command"] == "build-catalog" and manifest["finished"] is not None
    assert "93 scenarios" in capsys.readouterr().err


def test_eigen_table(tmp_path):
    out = tmp_path / "eig.csv"
    assert main(["eigen-table", "--grid", "ieee33.grid", "--out", str(out)]) == 0
    lines = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    assert len(lines) == 17 and len(lines[0].split(",")) == 95


def test_config_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv(ex.SEED_ENV, raising=False)
    ini = tmp_path / "sim.ini"
    ini.write_text("[sim]\ntau0 = 0.05\nnoise_db = -150\nseed = 12\n")
    man = tmp_path / "m.json"
    assert main(["build-catalog", "--config", str(ini), "--tau0", "0.02", "--manifest", str(man),
                 "--out", str(tmp_path / "c.csv")]) == 0
    cfg = json.loads(man.read_text())["config"]
    assert cfg["tau0"] == 0.02 and cfg["noise_db"] == -150 and cfg["seed"] == 12


def test_config_rejects_unknown_key(tmp_path):
    ini = tmp_path / "sim.ini"
    ini.write_text("[sim]\nspeed = 3\n")
    assert main(["build-catalog", "--config", str(ini)]) == 1


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(ex.SEED_ENV, "99")
    man = tmp_path / "m.json"
    assert main(["build-catalog", "--manifest", str(man), "--out", str(tmp_path / "c.csv")]) == 0
    assert json.loads(man.read_text())["seeds"]["seed"] == 99
    assert main(["build-catalog", "--seed", "5", "--manifest", str(man),
                 "--out", str(tmp_path / "c.csv")]) == 0
    assert json.loads(man.read_text())["seeds"]["seed"] == 5
    monkeypatch.setenv(ex.SEED_ENV, "not-a-number")
    assert main(["build-catalog", "--out", str(tmp_path / "c.csv")]) == 1


def test_dataset_train_and_model(tmp_path):
    data = tmp_path / "d.csv"
    model = tmp_path / "m.knn"
    rep = tmp_path / "r.csv"
    assert main(["gen-dataset", "--per-class", "15", "--levels=-200,-100", "--seed", "3",
                 "--out", str(data)]) == 0
    assert len(_rows(data)) == 120
    assert main(["train", "--data", str(data), "--noise-db", "-200", "--model", str(model),
                 "--out", str(rep)]) == 0
    assert model.read_text().startswith("#knn-model")
    assert float(_rows(rep)[0]["test_accuracy"]) >= 0.9
    assert main(["train", "--data", str(data), "--noise-db", "-50"]) == 1


def test_switching_byte_identical_without_timing(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}.csv"
        assert main(["run-switching", "--length", "6", "--per-class", "10", "--seed", "4",
                     "--noise-db", "-100", "--no-timing", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    rows = _rows(tmp_path / "run0.csv")
    assert len(rows) == 12 and {r["method"] for r in rows} == {"shs", "lshs"}
    assert all(r["elapsed_us"] == "" for r in rows)


def test_compare_identifiers_and_report(tmp_path, capsys):
    acc, tim, res = tmp_path / "acc.csv", tmp_path / "t.csv", tmp_path / "res.csv"
    assert main(["compare-identifiers", "--sequences", "4", "--per-class", "10", "--seed", "2",
                 "--tau0-list", "0.02,0.05", "--out", str(acc), "--timing", str(tim),
                 "--results", str(res), "--repeats", "2"]) == 0
    rows = _rows(acc)
    assert [(r["method"], r["tau0"]) for r in rows] == [
        ("shs", "0.02"), ("lshs", "0.02"), ("shs", "0.05"), ("lshs", "0.05")]
    assert "Control_exact" in rows[0]
    assert len(_rows(tim)) == 16
    assert main(["report", str(res)]) == 0
    text = capsys.readouterr().out
    assert "lshs" in text and "0.05" in text


def test_report_rejects_non_results(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("a,b\n1,2\n")
    assert main(["report", str(f)]) == 1


# -- harness-level properties --------------------------------------------------


def test_single_scenario_degenerate_run():
    setup = ex.build_setup(catalog_spec=CatalogSpec.empty())
    assert setup.catalog.m == 1
    cfg = ex.build_config({}, {"noise_db": -100.0, "seed": 1})
    run = ex.run_switching(setup, cfg, 1, 1, None, ("shs",))
    assert run.metrics(setup.catalog)["shs"].exact_accuracy == 1.0


def test_zero_noise_perfect_for_both_methods():
    setup = ex.build_setup()
    cfg = ex.build_config({}, {"noise_db": NOISE_OFF, "seed": 3, "tau0": 0.02})
    data = ex.make_dataset(setup, cfg, 30, [NOISE_OFF], 3)
    clf, _ = ex.train_and_evaluate(data, 3)
    run = ex.run_switching(setup, cfg, 60, 3, clf)
    met = run.metrics(setup.catalog)
    assert met["shs"].exact_accuracy == 1.0 and met["lshs"].exact_accuracy == 1.0


def test_manifest_id_ignores_wall_clock():
    setup = ex.build_setup()
    cfg = ex.build_config({}, {"seed": 1})
    a = ex.new_manifest("x", setup, cfg, {"seed": 1}, n=3)
    b = ex.new_manifest("x", setup, cfg, {"seed": 1}, n=3)
    b.started += 100.0
    assert a.id == b.id and len(a.id) == 16
    assert ex.new_manifest("x", setup, cfg, {"seed": 2}, n=3).id != a.id
