"""Command-line entry point: query, exact, repl, bench, gen."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .accuracy import EstimateReport, Session, prepare_plan, run_query
from .errors import KGApproxError
from .kg_store import GeneratorSpec, generate_synthetic_kg, load_graph, write_graph
from .oracle import exact_query
from .query import AggregateQuery, EngineConfig, parse_query
from .semantics import load_embeddings, load_simtable, write_simtable

EXIT_OK, EXIT_ERROR, EXIT_CAP = 0, 1, 2

# flag dest -> EngineConfig field
OVERRIDES = {
    "eb": "e_b",
    "alpha": "alpha",
    "tau": "tau",
    "n": "n",
    "r": "r",
    "lam": "lam",
    "t": "t",
    "m": "m",
    "B": "B",
    "pss": "p_ss",
    "seed": "seed",
    "sampler": "sampler_backend",
    "max_iter": "max_iterations",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _data_args(sp: argparse.ArgumentParser, needs_query: bool = True) -> None:
    sp.add_argument("--nodes", required=True)
    sp.add_argument("--edges", required=True)
    sp.add_argument("--attrs")
    sim = sp.add_mutually_exclusive_group(required=True)
    sim.add_argument("--simtable")
    sim.add_argument("--embeddings")
    if needs_query:
        sp.add_argument("--query", required=True, help="query JSON file or inline JSON")
    sp.add_argument("--eb", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--r", type=int)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--t", type=int)
    sp.add_argument("--m", type=float)
    sp.add_argument("--B", type=int)
    sp.add_argument("--pss", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sampler", choices=("categorical", "walk"))
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--format", choices=("json", "table"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgapprox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _data_args(sub.add_parser("query", help="approximate one aggregate query"))
    _data_args(sub.add_parser("exact", help="exhaustive ground truth for one query"))
    _data_args(sub.add_parser("repl", help="interactive session with error-bound refinement"), needs_query=False)
    bench = sub.add_parser("bench", help="estimate vs oracle over a directory of queries")
    _data_args(bench, needs_query=False)
    bench.add_argument("--queries", required=True)
    bench.add_argument("--runs", type=int, default=5)
    gen = sub.add_parser("gen", help="write a synthetic KG")
    gen.add_argument("--spec", required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    return parser


# -- shared plumbing -----------------------------------------------------------------


def _overrides(args: argparse.Namespace) -> dict:
    out = {field: getattr(args, dest) for dest, field in OVERRIDES.items() if getattr(args, dest, None) is not None}
    if "seed" not in out and os.environ.get("KGAPPROX_SEED"):
        out["seed"] = int(os.environ["KGAPPROX_SEED"])
    return out


def _read_query(text: str, args: argparse.Namespace) -> AggregateQuery:
    if text.lstrip().startswith("{"):
        q = parse_query(text)
    else:
        q = parse_query(Path(text).read_text(encoding="utf-8"))
    overrides = _overrides(args)
    if overrides:
        q = dataclasses.replace(q, config=q.config.replace(**overrides))
    return q


def _load_data(args: argparse.Namespace, eps_sim: float):
    g = load_graph(args.nodes, args.edges, args.attrs)
    if args.simtable:
        p = load_simtable(args.simtable, eps_sim=eps_sim)
    else:
        p = load_embeddings(args.embeddings, eps_sim=eps_sim)
    return g, p


def _rng(cfg: EngineConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.4g}"
    return str(x)


def render_report(report: EstimateReport, fmt: str) -> str:
    if fmt == "json":
        return report.to_json()
    d = report.to_dict()
    ci = d["ci"]
    rows = [
        ("func", d["func"]),
        ("estimate", d["estimate"]),
        ("moe", d["moe"]),
        ("ci", "-" if ci is None else f"[{_fmt(ci[0])}, {_fmt(ci[1])}]"),
        ("confidence", d["confidence"]),
        ("iterations", d["iterations"]),
        ("sample_size", d["sample_size"]),
        ("validated_size", d["validated_size"]),
        ("delta_history", " ".join(str(x) for x in d["delta_history"]) or "-"),
        ("terminated_by", d["terminated_by"]),
    ]
    lines = [f"{k:<16}{_fmt(v)}" for k, v in rows]
    for key, gr in (d.get("groups") or {}).items():
        tag = " (low support)" if gr["low_support"] else ""
        lines.append(f"group {key}: {_fmt(gr['estimate'])} +/- {_fmt(gr['moe'])} n={gr['support']}{tag}")
    return "\n".join(lines)


def _exit_for(report: EstimateReport) -> int:
    return EXIT_CAP if report.terminated_by == "iteration-cap" else EXIT_OK


# -- commands ------------------------------------------------------------------------


def cmd_query(args: argparse.Namespace, out: TextIO) -> int:
    q = _read_query(args.query, args)
    g, p = _load_data(args, q.config.eps_sim)
    report = run_query(g, p, q, q.config, _rng(q.config))
    print(render_report(report, args.format), file=out)
    return _exit_for(report)


def cmd_exact(args: argparse.Namespace, out: TextIO) -> int:
    q = _read_query(args.query, args)
    g, p = _load_data(args, q.config.eps_sim)
    result = exact_query(g, p, q)
    if args.format == "json":
        print(json.dumps(result.to_dict(), indent=2), file=out)
    else:
        print(f"{'value':<16}{_fmt(result.value)}\n{'answer_count':<16}{result.answer_count}", file=out)
        for key, (v, c) in sorted((result.per_group or {}).items()):
            print(f"group {key}: {_fmt(v)} n={c}", file=out)
    return EXIT_OK


def cmd_repl(args: argparse.Namespace, inp: TextIO, out: TextIO, err: TextIO) -> int:
    g, p = _load_data(args, EngineConfig().eps_sim)
    session: Session | None = None
    for line in inp:
        parts = line.split()
        if not parts:
            continue
        cmd, rest = parts[0], parts[1:]
        try:
            if cmd == "quit":
                break
            if cmd == "run" and len(rest) == 1:
                q = _read_query(rest[0], args)
                session = Session(g, p, q, q.config, _rng(q.config))
                t0 = time.perf_counter()
                report = session.run()
                print(render_report(report, args.format), file=out)
                print(f"# {report.sample_size} samples in {time.perf_counter() - t0:.3f}s", file=out)
            elif cmd == "eb" and len(rest) == 1:
                if session is None:
                    raise KGApproxError("no active session; use 'run <query.json>' first")
                before = session.sample_size
                t0 = time.perf_counter()
                report = session.refine(float(rest[0]))
                added = session.sample_size - before
                elapsed = time.perf_counter() - t0
                if added == 0:
                    print("already satisfied; 0 new samples", file=out)
                else:
                    print(f"# +{added} samples in {elapsed:.3f}s", file=out)
                print(render_report(report, args.format), file=out)
            elif cmd == "show" and not rest:
                if session is None or session.report is None:
                    raise KGApproxError("no active session")
                print(render_report(session.report, args.format), file=out)
            else:
                raise UsageError(f"unknown command: {line.strip()!r} (expected run, eb, show, quit)")
        except (KGApproxError, UsageError, OSError, ValueError) as exc:
            print(f"error: {exc}", file=err)
        out.flush()
    return EXIT_OK


def cmd_bench(args: argparse.Namespace, out: TextIO) -> int:
    paths = sorted(Path(args.queries).glob("*.json"))
    if not paths:
        raise UsageError(f"no *.json queries in {args.queries}")
    g = p = None
    rows = []
    for path in paths:
        q = _read_query(str(path), args)
        if g is None:
            g, p = _load_data(args, q.config.eps_sim)
        truth = exact_query(g, p, q).value
        plan = prepare_plan(g, p, q, q.config)
        base = q.config.seed or 0
        errs, times, sizes, ests = [], [], [], []
        for k in range(args.runs):
            t0 = time.perf_counter()
            cfg = q.config.replace(seed=base + k)
            rep = run_query(g, p, q, cfg, np.random.default_rng(cfg.seed), plan)
            times.append(time.perf_counter() - t0)
            ests.append(rep.estimate)
            sizes.append(rep.sample_size)
            if truth and rep.estimate is not None:
                errs.append(abs(rep.estimate - truth) / abs(truth))
        rows.append({
            "query": path.name,
            "estimate": float(np.mean([e for e in ests if e is not None])) if any(e is not None for e in ests) else None,
            "oracle": truth,
            "rel_error": float(np.mean(errs)) if errs else None,
            "time_ms": 1000.0 * float(np.mean(times)),
            "sample_size": float(np.mean(sizes)),
        })
    if args.format == "json":
        print(json.dumps(rows, indent=2), file=out)
    else:
        cols = ("query", "estimate", "oracle", "rel_error", "time_ms", "sample_size")
        print("\t".join(cols), file=out)
        for row in rows:
            print("\t".join(_fmt(row[c]) for c in cols), file=out)
    return EXIT_OK


def cmd_gen(args: argparse.Namespace, out: TextIO) -> int:
    spec = GeneratorSpec.load(args.spec)
    g = generate_synthetic_kg(spec, args.seed)
    target = Path(args.out)
    target.mkdir(parents=True, exist_ok=True)
    files = write_graph(g, target)
    qp = spec.query_predicate
    sims = {(pred, qp): s for pred, s in spec.predicates.items() if pred != qp}
    sims[(qp, qp)] = 1.0
    write_simtable(sims, target / "simtable.tsv")
    files["simtable"] = str(target / "simtable.tsv")
    truth: dict = {"seed": args.seed, "nodes": len(g.nodes), "edges": len(g.edges)}
    if spec.layout == "hub" and spec.anchor_name:
        query = {
            "shape": "simple",
            "subqueries": [{
                "specific": {"name": spec.anchor_name, "types": [spec.anchor_type]},
                "hops": [{"types": [spec.target_type], "predicate": qp}],
            }],
            "func": "count",
            "config": {"n": 2},
        }
        (target / "query.json").write_text(json.dumps(query, indent=2) + "\n", encoding="utf-8")
        files["query"] = str(target / "query.json")
        p = load_simtable(target / "simtable.tsv")
        q = parse_query(query)
        truth["count"] = exact_query(g, p, q).value
        for attr in sorted(spec.attr_ranges):
            for func in ("sum", "avg"):
                qa = dataclasses.replace(q, func=func, attr=attr)
                try:
                    truth[f"{func}_{attr}"] = exact_query(g, p, qa).value
                except KGApproxError:
                    truth[f"{func}_{attr}"] = None
    (target / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    files["ground_truth"] = str(target / "ground_truth.json")
    print(json.dumps(files, indent=2), file=out)
    return EXIT_OK


def main(argv: Sequence[str] | None = None, stdin: TextIO | None = None,
         stdout: TextIO | None = None, stderr: TextIO | None = None) -> int:
    inp, out, err = stdin or sys.stdin, stdout or sys.stdout, stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command == "query":
            return cmd_query(args, out)
        if args.command == "exact":
            return cmd_exact(args, out)
        if args.command == "repl":
            return cmd_repl(args, inp, out, err)
        if args.command == "bench":
            return cmd_bench(args, out)
        return cmd_gen(args, out)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_ERROR
    except (KGApproxError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".splitlines()[0], file=err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
