import io
import json

import pytest

from kgapprox.cli import main
from kgapprox.oracle import exact_query
from kgapprox.query import load_query

from conftest import FIXTURES

HUB = FIXTURES / "synthetic" / "hub"
DATA = ["--nodes", str(HUB / "nodes.tsv"), "--edges", str(HUB / "edges.tsv"),
        "--attrs", str(HUB / "attrs.tsv"), "--simtable", str(HUB / "simtable.tsv")]
Q1 = str(FIXTURES / "queries" / "q1_count.json")


def run(argv, stdin=""):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, io.StringIO(stdin), out, err)
    return code, out.getvalue(), err.getvalue()


def test_query_json_exit_zero():
    code, out, err = run(["query", *DATA, "--query", Q1, "--seed", "7"])
    assert code == 0, err
    report = json.loads(out)
    assert report["terminated_by"] == "bound-met"
    assert report["ci"][0] <= report["estimate"] <= report["ci"][1]


def test_query_byte_identical():
    a = run(["query", *DATA, "--query", Q1, "--seed", "7"])[1]
    b = run(["query", *DATA, "--query", Q1, "--seed", "7"])[1]
    assert a == b


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("KGAPPROX_SEED", "7")
    assert run(["query", *DATA, "--query", Q1])[1] == run(["query", *DATA, "--query", Q1, "--seed", "7"])[1]


def test_missing_query_is_usage_error():
    code, out, err = run(["query", *DATA])
    assert code == 1 and out == ""
    assert len(err.strip().splitlines()) == 1


def test_bad_data_is_single_line_error(tmp_path):
    code, _, err = run(["query", "--nodes", str(tmp_path / "nope.tsv"), "--edges", "x", "--simtable", "y",
                        "--query", Q1])
    assert code == 1 and len(err.strip().splitlines()) == 1


def test_iteration_cap_exit_two():
    code, out, _ = run(["query", *DATA, "--query", Q1, "--eb", "0.0001", "--max-iter", "2", "--seed", "1"])
    assert code == 2
    report = json.loads(out)
    assert report["terminated_by"] == "iteration-cap" and report["ci"] is not None


def test_table_format():
    code, out, _ = run(["query", *DATA, "--query", Q1, "--seed", "7", "--format", "table"])
    assert code == 0
    assert out.splitlines()[0].split() == ["func", "count"]
    est = next(line for line in out.splitlines() if line.startswith("estimate")).split()[1]
    assert len(est.replace(".", "").lstrip("0")) <= 4


def test_exact_matches_oracle(hub):
    code, out, _ = run(["exact", *DATA, "--query", Q1])
    assert code == 0
    g, p = hub
    assert json.loads(out) == exact_query(g, p, load_query(Q1)).to_dict()


def test_inline_query_and_override():
    doc = json.dumps({"shape": "simple", "func": "count", "subqueries": [
        {"specific": {"name": "Germany", "types": ["Country"]}, "hops": [{"types": ["Automobile"], "predicate": "product"}]}],
        "config": {"n": 2}})
    code, out, _ = run(["query", *DATA, "--query", doc, "--seed", "1", "--eb", "0.2", "--t", "2"])
    assert code == 0
    assert len(json.loads(out)["diagnostics"]["small_sample_sizes"]) == 2


def test_repl_session():
    script = f"run {Q1}\neb 0.2\nbogus\nshow\neb 0.02\nquit\n"
    code, out, err = run(["repl", *DATA, "--seed", "3"], script)
    assert code == 0
    assert "already satisfied; 0 new samples" in out
    assert "unknown command" in err
    reports = [json.loads(chunk) for chunk in _json_chunks(out)]
    assert len(reports) == 4
    assert len(reports[-1]["delta_history"]) > len(reports[0]["delta_history"])
    assert reports[-1]["diagnostics"]["validation_recomputations"] == 0


def _json_chunks(text):
    chunk, depth = [], 0
    for line in text.splitlines():
        if not chunk and not line.startswith("{"):
            continue
        chunk.append(line)
        depth += line.count("{") - line.count("}")
        if depth == 0:
            yield "\n".join(chunk)
            chunk = []


def test_bench(tmp_path):
    qdir = tmp_path / "qs"
    qdir.mkdir()
    (qdir / "q1.json").write_text((FIXTURES / "queries" / "q1_count.json").read_text())
    code, out, _ = run(["bench", *DATA, "--queries", str(qdir), "--runs", "2", "--seed", "1"])
    assert code == 0
    row = json.loads(out)[0]
    assert row["oracle"] == 76.0 and row["rel_error"] < 0.1 and row["time_ms"] > 0


def test_gen_deterministic(tmp_path):
    spec = str(FIXTURES / "synthetic" / "hub_spec.json")
    assert run(["gen", "--spec", spec, "--seed", "7", "--out", str(tmp_path / "a")])[0] == 0
    assert run(["gen", "--spec", spec, "--seed", "7", "--out", str(tmp_path / "b")])[0] == 0
    for name in ("nodes.tsv", "edges.tsv", "attrs.tsv", "simtable.tsv", "ground_truth.json", "query.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the shipped fixture was produced by the same command
    for name in ("nodes.tsv", "edges.tsv", "ground_truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (HUB / name).read_bytes()
