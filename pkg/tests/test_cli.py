import csv
import json

import pytest

from gridcoord.cli import EXIT_DOMAIN, EXIT_LIMIT, EXIT_OK, EXIT_USAGE, main
from gridcoord.config import RunConfig


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = main([*map(str, args), "--out", str(out)])
    return code, out


def test_pipeline_two_region(two_region_path, tmp_path):
    code, out = run(["pipeline", two_region_path, "--seed", "7"], tmp_path)
    assert code == EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert result["u"] == {"k1": 1}
    for name in ("stage1_trace.csv", "stage2_trace.csv", "messages.jsonl"):
        assert (out / name).exists()


def test_trace_headers(two_region_path, tmp_path):
    _, out = run(["pipeline", two_region_path], tmp_path)
    with open(out / "stage1_trace.csv") as f:
        assert next(csv.reader(f)) == ["nu", "region", "u_prop", "u_tpc", "LB", "UB", "gap"]
    with open(out / "stage2_trace.csv") as f:
        assert next(csv.reader(f)) == ["sigma", "max_residual", "objective"]


def test_missing_case_names_path(tmp_path, capsys):
    code, _ = run(["centralized", tmp_path / "missing.json"], tmp_path)
    assert code == EXIT_DOMAIN
    assert "missing.json" in capsys.readouterr().err


def test_forced_iteration_limit_writes_partial_trace(two_region_path, tmp_path):
    code, out = run(["stage1", two_region_path, "--max-iter", "1"], tmp_path)
    assert code == EXIT_LIMIT
    rows = list(csv.DictReader(open(out / "stage1_trace.csv")))
    assert [r["nu"] for r in rows] == ["1", "1"]
    assert json.loads((out / "result.json").read_text())["reason"] == "iteration-limit"


def test_pipeline_limit_exit_code(two_region_path, tmp_path):
    code, out = run(["pipeline", two_region_path, "--max-iter-stage2", "2"], tmp_path)
    assert code == EXIT_LIMIT
    assert json.loads((out / "result.json").read_text())["reason"] == "stage2-iteration-limit"


@pytest.mark.parametrize("argv", [["frobnicate", "x.json"], [], ["pipeline", "x.json", "--mode", "sometimes"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_bad_parameter_is_domain_error(two_region_path, tmp_path):
    code, _ = run(["stage1", two_region_path, "--eps", "-1"], tmp_path)
    assert code == EXIT_DOMAIN


def test_centralized_and_bruteforce_agree(two_region_path, tmp_path):
    _, a = run(["centralized", two_region_path], tmp_path, "a")
    _, b = run(["bruteforce", two_region_path], tmp_path, "b")
    ra, rb = (json.loads((p / "result.json").read_text()) for p in (a, b))
    assert ra["objective"] == pytest.approx(47000, rel=1e-6)
    assert ra["objective"] == pytest.approx(rb["objective"], rel=1e-9)


def test_validate(two_region_path, tmp_path):
    code, out = run(["validate", two_region_path], tmp_path)
    assert code == EXIT_OK and json.loads((out / "result.json").read_text())["ok"] is True


def test_game_json(two_region_path, tmp_path, capsys):
    code, _ = run(["game", two_region_path, "--format", "json"], tmp_path)
    assert code == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["social_optimum"] == [[1, 1]]


def test_stage2_with_explicit_build(two_region_path, tmp_path):
    code, out = run(["stage2", two_region_path, "--u", "k1=0"], tmp_path)
    assert code == EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert result["u"] == {"k1": 0}
    assert result["plan"]["objective"] == pytest.approx(106500, rel=1e-3)


def test_bad_build_vector(two_region_path, tmp_path):
    code, _ = run(["stage2", two_region_path, "--u", "k9=1"], tmp_path)
    assert code == EXIT_DOMAIN


@pytest.mark.parametrize("extra", [[], ["--mode", "asynchronous", "--p", "0.3", "--seed", "11"]],
                         ids=["sync", "async"])
def test_reruns_are_byte_identical(two_region_path, tmp_path, extra):
    _, a = run(["pipeline", two_region_path, *extra], tmp_path, "a")
    _, b = run(["pipeline", two_region_path, *extra], tmp_path, "b")
    for name in ("result.json", "stage1_trace.csv", "stage2_trace.csv", "messages.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_config_file_then_flag_override(two_region_path, tmp_path):
    cfg = RunConfig()
    cfg.stage1.max_iter = 1
    cfg.stage2.eta = 0.5
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg.to_dict()))
    code, _ = run(["stage1", two_region_path, "--config", path], tmp_path, "a")
    assert code == EXIT_LIMIT
    code, out = run(["stage1", two_region_path, "--config", path, "--max-iter-stage1", "200"], tmp_path, "b")
    assert code == EXIT_OK
    assert json.loads((out / "result.json").read_text())["u"] == {"k1": 1}
