import csv
import json

import pytest

import main
from parsers.scenario_parser import read_dataset
from services.errors import NonConvergence

SMALL = ["--n-t", "10", "--repeats", "2", "--n-w", "20"]


def _run(capsys, *argv) -> tuple[int, str, str]:
    code = main.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def datasets(tmp_path, capsys):
    """合成 LVD の学習・テスト CSV（n_t=10）。"""
    paths = {}
    for name, n, seed in (("train", 60, 1), ("test", 15, 2)):
        paths[name] = tmp_path / f"{name}.csv"
        code, _, _ = _run(capsys, "synth", "--category", "lvd", "--n", n, "--seed", seed,
                          "--n-t", 10, "--format", "csv", "--out", paths[name])
        assert code == 0
    return paths


def test_synth_is_byte_identical_for_same_seed(tmp_path, capsys):
    outputs = []
    for name in ("a.jsonl", "b.jsonl"):
        code, out, _ = _run(capsys, "synth", "--category", "cut_in", "--n", 12, "--seed", 7, "--out", tmp_path / name)
        assert code == 0
        assert out == "seed=7\n"
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]
    assert len(outputs[0].splitlines()) == 12


def test_fit_generate_evaluate(tmp_path, capsys, datasets):
    model = tmp_path / "model.json"
    generated = tmp_path / "generated.csv"
    report = tmp_path / "report.json"
    plans = tmp_path / "plans"
    assert _run(capsys, "fit", "--input", datasets["train"], "--d", 3, "--out", model)[0] == 0
    assert json.loads(model.read_text(encoding="utf-8"))["basis"]["d"] == 3
    code, _, _ = _run(capsys, "generate", "--model", model, "--n-w", 40, "--seed", 5,
                      "--format", "csv", "--out", generated)
    assert code == 0
    assert len(read_dataset(generated)) == 40
    code, _, _ = _run(capsys, "evaluate", "--generated", generated, "--test", datasets["test"],
                      "--train", datasets["train"], "--beta", 0.5, "--seed", 5,
                      "--plan-dir", plans, "--out", report)
    assert code == 0
    data = json.loads(report.read_text(encoding="utf-8"))
    assert data["seed"] == 5
    assert data["sr"] == pytest.approx(data["w_test"] + 0.5 * (data["w_test"] - data["w_train"]))
    with open(plans / "plan_test.csv", "r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    assert sum(float(r["mass"]) for r in rows) == pytest.approx(1.0)
    assert (plans / "plan_train.csv").exists()


def test_generate_is_reproducible(tmp_path, capsys, datasets):
    model = tmp_path / "model.json"
    _run(capsys, "fit", "--input", datasets["train"], "--d", 2, "--out", model)
    for name in ("a.csv", "b.csv"):
        _run(capsys, "generate", "--model", model, "--n-w", 15, "--seed", 3, "--format", "csv", "--out", tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_evaluating_the_test_set_itself(tmp_path, capsys, datasets):
    report = tmp_path / "report.json"
    code, _, _ = _run(capsys, "evaluate", "--generated", datasets["test"], "--test", datasets["test"],
                      "--train", datasets["train"], "--out", report)
    assert code == 0
    data = json.loads(report.read_text(encoding="utf-8"))
    assert data["w_test"] == pytest.approx(0.0, abs=1e-9)
    assert data["sr"] <= 1e-9


def test_fit_from_scenario_file(tmp_path, capsys):
    scenarios = tmp_path / "lvd.jsonl"
    _run(capsys, "synth", "--category", "lvd", "--n", 30, "--seed", 4, "--out", scenarios)
    model = tmp_path / "model.json"
    assert _run(capsys, "fit", "--input", scenarios, "--n-t", 12, "--d", 2, "--out", model)[0] == 0
    assert json.loads(model.read_text(encoding="utf-8"))["basis"]["layout"]["n_t"] == 12


def test_select_d_report_is_deterministic(tmp_path, capsys, datasets):
    outputs = []
    for name in ("a.json", "b.json"):
        code, _, _ = _run(capsys, "select-d", "--input", datasets["train"], "--d-range", "1,2", *SMALL,
                          "--seed", 9, "--out", tmp_path / name)
        assert code == 0
        outputs.append((tmp_path / name).read_bytes())
    assert outputs[0] == outputs[1]
    data = json.loads(outputs[0])
    assert data["argmin_d"] in (1, 2)
    assert [pt["key"] for pt in data["points"]] == ["resample", "1", "2"]


def test_calibrate_beta_csv_curve(tmp_path, capsys, datasets):
    out = tmp_path / "beta.csv"
    code, _, _ = _run(capsys, "calibrate-beta", "--input", datasets["train"], "--d", 2, "--d-range", "1,2,3",
                      "--n-large", 80, *SMALL, "--format", "csv", "--out", out)
    assert code == 0
    with open(out, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["beta", "correlation"]
    assert len(rows) == 21


def test_compare_selected_methods(tmp_path, capsys, datasets):
    out = tmp_path / "compare.json"
    code, _, _ = _run(capsys, "compare", "--input", datasets["train"], "--d", 2, *SMALL,
                      "--methods", "svd+kde+dep", "fixed+gauss+dep", "--out", out)
    assert code == 0
    assert sorted(json.loads(out.read_text(encoding="utf-8"))["ranking"]) == ["fixed+gauss+dep", "svd+kde+dep"]


def test_missing_input_file(tmp_path, capsys):
    code, _, err = _run(capsys, "fit", "--input", tmp_path / "nope.csv", "--out", tmp_path / "m.json")
    assert code == 1
    assert err.startswith("error=file_not_found ")
    assert len(err.strip().splitlines()) == 1


def test_usage_and_argument_errors(tmp_path, capsys):
    assert _run(capsys, "synth", "--category", "lvd", "--n", 3, "--format", "xml", "--out", tmp_path / "a")[0] == 1
    code, _, err = _run(capsys, "synth", "--category", "lvd", "--n", 0, "--out", tmp_path / "a.jsonl")
    assert code == 1
    assert err.startswith("error=invalid_argument ")


def test_domain_error_codes(tmp_path, capsys, datasets):
    code, _, err = _run(capsys, "fit", "--input", datasets["test"], "--d", 99, "--out", tmp_path / "m.json")
    assert code == 1
    assert err.startswith("error=d_too_large ")


def test_non_convergence_is_reported(tmp_path, capsys, datasets, monkeypatch):
    def never_converges(full, beta0, config):
        raise NonConvergence([(1, beta0), (2, 0.3)])

    monkeypatch.setattr(main, "iterate_d_beta", never_converges)
    code, _, err = _run(capsys, "auto", "--input", datasets["train"], "--out", tmp_path / "auto.json")
    assert code == 1
    assert err.startswith("error=non_convergence ")


def test_unexpected_failure_is_internal_error(tmp_path, capsys, datasets, monkeypatch):
    def broken(full, config, beta=None):
        raise RuntimeError("boom")

    monkeypatch.setattr(main, "select_d", broken)
    code, _, err = _run(capsys, "select-d", "--input", datasets["train"], "--out", tmp_path / "s.json")
    assert code == 2
    assert "error=internal" in err


def test_generate_defaults_to_dataset_csv(tmp_path, capsys, datasets):
    model = tmp_path / "model.json"
    _run(capsys, "fit", "--input", datasets["train"], "--d", 2, "--out", model)
    generated = tmp_path / "generated.csv"
    assert _run(capsys, "generate", "--model", model, "--n-w", 7, "--seed", 1, "--out", generated)[0] == 0
    assert generated.read_text(encoding="utf-8").startswith("id,sig.lead_acceleration.0,")
    assert len(read_dataset(generated)) == 7


def _subcommand_argv(command: str, paths: dict, out) -> list:
    train, test = paths["train"], paths["test"]
    argv = {
        "synth": ["--category", "cut_in", "--n", 8, "--n-t", 10],
        "fit": ["--input", train, "--d", 2],
        "generate": ["--model", paths["model"], "--n-w", 12],
        "evaluate": ["--generated", paths["generated"], "--test", test, "--train", train, "--beta", 0.3],
        "select-d": ["--input", train, "--d-range", "1,2", *SMALL],
        "calibrate-beta": ["--input", train, "--d", 2, "--d-range", "1,2", "--n-large", 50, *SMALL],
        "auto": ["--input", train, "--d-range", "1,2", "--n-large", 50, *SMALL],
        "compare": ["--input", train, "--d", 2, *SMALL, "--methods", "svd+kde+dep", "resample"],
    }[command]
    return [command, *argv, "--seed", 13, "--out", out]


@pytest.mark.parametrize(
    "command",
    ["synth", "fit", "generate", "evaluate", "select-d", "calibrate-beta", "auto", "compare"],
)
def test_every_subcommand_is_byte_identical_for_same_seed(tmp_path, capsys, datasets, command):
    paths = dict(datasets, model=tmp_path / "model.json", generated=tmp_path / "generated.csv")
    assert _run(capsys, "fit", "--input", datasets["train"], "--d", 2, "--out", paths["model"])[0] == 0
    assert _run(capsys, "generate", "--model", paths["model"], "--n-w", 20, "--out", paths["generated"])[0] == 0
    results = []
    for name in ("a", "b"):
        out = tmp_path / f"{command}-{name}.out"
        code, stdout, err = _run(capsys, *_subcommand_argv(command, paths, out))
        errors = [line for line in err.splitlines() if line.startswith("error=")]
        results.append((code, stdout, errors, out.read_bytes() if out.exists() else None))
    assert results[0] == results[1]
    code, _, errors, written = results[0]
    # auto は d が安定しなければ non_convergence で終わる
    if command == "auto" and code == 1:
        assert errors[0].startswith("error=non_convergence ")
    else:
        assert code == 0
        assert written
