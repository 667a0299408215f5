"""Command-line entry point: ``multipath-sql <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import COMPARATORS, STRATEGIES, PipelineConfig, load_config, with_overrides
from .execution import Database, cluster_outcomes, format_outcome
from .fixer import fix_pool
from .generation import generate_candidates
from .harness import (PoolModel, bounds_analysis, emit_report, load_benchmark, load_results,
                      make_backends, run_benchmark, simulate_selection)
from .models import CandidateQuery, GeneratorKind, QuestionContext
from .plan import explain_to_narrative
from .registry import DatabaseRegistry
from .retrieval import ValueIndex, build_index, extract_keywords, retrieve_values
from .schema import introspect_database
from .selection import (AdversarialComparator, ExportRun, OracleComparator, RemoteComparator, SimulatedComparator,
                        adversarial_pick, export_pair_dataset, oracle_pick, ranker_pick, regeneration_directives,
                        run_tournament, selectable, self_consistency_pick, write_pairs)

log = logging.getLogger("multipath_sql")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--backend", choices=("remote", "mock"), help="completion backend")
    p.add_argument("--mock-script", help="JSON script for the mock backend")
    p.add_argument("--n-per-generator", type=int, help="completions per generator (default 7)")
    p.add_argument("--temperature", type=float, help="sampling temperature (default 0.5)")
    p.add_argument("--beta", type=int, help="repair attempts per candidate (default 3)")
    p.add_argument("--strategy", action="append", choices=STRATEGIES, help="selection strategy; repeatable")
    p.add_argument("--comparator", choices=COMPARATORS, help="tournament comparator")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _question_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--db", required=True, type=Path, help="SQLite database file")
    p.add_argument("--question", required=True)
    p.add_argument("--hint", default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="multipath-sql", description="Multi-path text-to-SQL toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="build the value index of a database")
    p.add_argument("db", type=Path)

    p = sub.add_parser("retrieve", parents=[common], help="retrieve database values for a question")
    _question_args(p)
    p.add_argument("--index", type=Path, help="saved index (built on the fly otherwise)")

    p = sub.add_parser("generate", parents=[common], help="generate candidate queries for a question")
    _question_args(p)

    p = sub.add_parser("fix", parents=[common], help="run the repair loop on one query")
    _question_args(p)
    p.add_argument("--sql", required=True)

    p = sub.add_parser("select", parents=[common], help="pick one query from a candidate file")
    _question_args(p)
    p.add_argument("--candidates", required=True, type=Path,
                   help="JSON array of SQL strings, or JSONL of candidate objects from 'generate'")
    p.add_argument("--gold", help="gold SQL, needed by the oracle and adversarial strategies")

    p = sub.add_parser("run", parents=[common], help="run the full pipeline over a benchmark file")
    p.add_argument("benchmark", type=Path)
    p.add_argument("--db-root", required=True, type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--limit", type=int, help="only the first N questions")
    p.add_argument("--no-resume", action="store_true", help="discard earlier results in the output directory")

    p = sub.add_parser("bounds", parents=[common], help="bounds and reports from a results file")
    p.add_argument("results", type=Path)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo comparison of selection strategies")
    p.add_argument("--p", type=float, nargs="+", default=[0.5, 0.6, 0.71, 0.9, 1.0], help="comparator accuracies")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--pool-per-generator", type=int, default=7)
    p.add_argument("--correctness", type=float, nargs="+", default=[0.55, 0.55, 0.55])
    p.add_argument("--spread", type=float, default=0.45)
    p.add_argument("--wrong-answers", type=int, default=3)
    p.add_argument("--wrong-skew", type=float, default=1.5)
    p.add_argument("--error-rate", type=float, default=0.0)

    p = sub.add_parser("export-pairs", parents=[common], help="comparator training pairs from a results file")
    p.add_argument("results", type=Path)
    p.add_argument("--db-root", required=True, type=Path)
    p.add_argument("--directives", type=Path, help="also write regeneration directives here (JSONL)")

    p = sub.add_parser("narrate-plan", parents=[common], help="explain a query's execution plan step by step")
    p.add_argument("--db", required=True, type=Path)
    p.add_argument("--sql", required=True)
    return parser


def _config(args) -> PipelineConfig:
    return with_overrides(load_config(args.config), n_per_generator=args.n_per_generator,
                          temperature=args.temperature, beta=args.beta, strategy=args.strategy,
                          comparator=args.comparator, seed=args.seed, backend=args.backend,
                          mock_script=args.mock_script, out=args.out, workers=getattr(args, "workers", None))


def _single(args, config: PipelineConfig):
    db = Database(args.db)
    catalog = introspect_database(args.db)
    ctx = QuestionContext(args.question, catalog.db_id, args.hint)
    return db, catalog, ctx


def _emit(obj, out: Path | None) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False)
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cand_json(c: CandidateQuery) -> dict:
    return {"id": c.id, "sql": c.sql, "generator": c.generator.value, "shuffle_seed": c.shuffle_seed,
            "repair_count": c.repair_count, "flags": list(c.flags)}


def cmd_index(args, config):
    index = build_index(args.db, config.retrieval)
    out = args.out or args.db.with_suffix(".index.jsonl")
    index.save(out, args.db.stem)
    print(f"indexed {len(index)} values from {args.db} -> {out}")


def cmd_retrieve(args, config):
    db, catalog, ctx = _single(args, config)
    backends = make_backends(config)
    index = ValueIndex.load(args.index) if args.index else build_index(args.db, config.retrieval)
    keywords = extract_keywords(ctx, backends.completion)
    values = retrieve_values(keywords, index, backends.embedder, config.retrieval)
    _emit({"keywords": list(keywords),
           "values": [{"table": v.table, "column": v.column, "value": v.value, "score": round(v.score, 6),
                       "flags": list(v.flags)} for v in values]}, args.out)


def cmd_generate(args, config):
    db, catalog, ctx = _single(args, config)
    cands = generate_candidates(ctx, catalog, config.generation, make_backends(config).completion)
    _emit([_cand_json(c) for c in cands], args.out)


def cmd_fix(args, config):
    db, catalog, ctx = _single(args, config)
    cand = CandidateQuery(0, args.sql, GeneratorKind.DIVIDE_CONQUER)
    [(fixed, outcome)] = fix_pool([cand], ctx, catalog, db, make_backends(config).completion, config.fixer)
    _emit({"sql": fixed.sql, "repair_count": fixed.repair_count, "status": outcome.status.value,
           "result": format_outcome(outcome)}, args.out)


def _read_candidates(path: Path) -> list[CandidateQuery]:
    text = path.read_text(encoding="utf-8").strip()
    data = json.loads(text) if text.startswith("[") else [json.loads(l) for l in text.splitlines() if l.strip()]
    out = []
    for k, item in enumerate(data):
        if isinstance(item, str):
            out.append(CandidateQuery(k, item, GeneratorKind.DIVIDE_CONQUER))
        else:
            out.append(CandidateQuery(k, item["sql"], GeneratorKind(item.get("generator", "DivideConquer")),
                                      shuffle_seed=item.get("shuffle_seed", 0)))
    return out


def cmd_select(args, config):
    db, catalog, ctx = _single(args, config)
    pool = [(c, db.execute(c.sql, config.run.timeout_ms)) for c in _read_candidates(args.candidates)]
    mode = config.run.compare_mode
    strategies = config.selection.strategies
    remote = ("tournament" in strategies and config.selection.comparator == "remote") or "ranker" in strategies
    llm = make_backends(config).completion if remote else None
    gold = db.execute(args.gold) if args.gold else None
    picks = {}
    for s in config.selection.strategies:
        if s == "tournament":
            if config.selection.comparator == "remote":
                comparator = RemoteComparator(llm, catalog)
            elif gold is None:
                sys.exit("the oracle, adversarial and simulated comparators need --gold")
            else:
                comparator = _gold_comparator(config, gold)
            winner, board = run_tournament(selectable(pool), ctx, catalog, comparator, mode)
            picks[s] = {"id": winner.id, "sql": winner.sql, "scores": board.scores}
        elif s == "consistency":
            c = self_consistency_pick(cluster_outcomes(pool, mode), pool)
            picks[s] = {"id": c.id, "sql": c.sql}
        elif s == "ranker":
            c = ranker_pick(selectable(pool), ctx, catalog, llm, mode)
            picks[s] = {"id": c.id, "sql": c.sql, "flags": list(c.flags)}
        elif gold is None:
            log.warning("strategy %s needs --gold; skipped", s)
        else:
            c = (oracle_pick if s == "oracle" else adversarial_pick)(pool, gold, mode)
            picks[s] = {"id": c.id, "sql": c.sql}
    _emit(picks, args.out)


def _gold_comparator(config, gold):
    mode, sel = config.run.compare_mode, config.selection
    if sel.comparator == "adversarial":
        return AdversarialComparator(gold, mode)
    if sel.comparator == "simulated":
        return SimulatedComparator(gold, sel.p, sel.seed, mode)
    return OracleComparator(gold, mode)


def cmd_run(args, config):
    registry = DatabaseRegistry(args.db_root, config.run.index_dir or None, config.retrieval)
    items = load_benchmark(args.benchmark, registry)
    if args.limit is not None:
        items = items[: args.limit]
    out = Path(config.run.out)
    backends = make_backends(config, out / "audit" if config.run.audit else None)
    results = run_benchmark(items, config, backends, registry, out, resume=not args.no_resume,
                            progress=lambda r: log.info("done %s ex=%s", r.question_id, r.ex))
    bounds = bounds_analysis(results)
    paths = emit_report(results, bounds, out, config.selection.strategies)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    print((out / "summary.md").read_text(encoding="utf-8"))


def cmd_bounds(args, config):
    results = load_results(args.results)
    bounds = bounds_analysis(results)
    if args.out:
        emit_report(results, bounds, args.out)
    print(json.dumps(bounds.to_dict(), indent=2, sort_keys=True))


def cmd_simulate(args, config):
    model = PoolModel(args.pool_per_generator, tuple(args.correctness), args.spread, args.wrong_answers,
                      args.wrong_skew, args.error_rate)
    seed = config.selection.seed
    rows = [simulate_selection(model, p, args.trials, seed).to_dict() for p in args.p]
    print(f"{'p':>6} {'tournament':>11} {'consistency':>12} {'oracle':>8} {'adversarial':>12} {'maj.wrong':>10}")
    for r in rows:
        m = r["mean"]
        print(f"{r['p']:>6.2f} {m['tournament']:>11.4f} {m['consistency']:>12.4f} {m['oracle']:>8.4f} "
              f"{m['adversarial']:>12.4f} {r['majority_incorrect']:>10.4f}")
    if args.out:
        _emit({"pool_model": dataclasses.asdict(model), "trials": args.trials,
               "seed": seed, "rows": rows}, args.out)


def cmd_export_pairs(args, config):
    registry = DatabaseRegistry(args.db_root)
    runs = [ExportRun(QuestionContext(r.question, r.db_id, r.hint), tuple(r.pool), r.gold_sql)
            for r in load_results(args.results) if r.candidates]
    seed = config.selection.seed if args.seed is not None else 42
    pairs = export_pair_dataset(runs, registry, seed, config.run.compare_mode)
    out = args.out or Path("pairs.jsonl")
    write_pairs(pairs, out)
    print(f"wrote {len(pairs)} pairs to {out}")
    if args.directives:
        lines = [json.dumps({"question": d.ctx.question, "db_id": d.ctx.db_id, "hint": d.hint}, ensure_ascii=False)
                 for d in regeneration_directives(runs, registry, config.run.compare_mode)]
        args.directives.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
        print(f"wrote {len(lines)} regeneration directives to {args.directives}")


def cmd_narrate_plan(args, config):
    narrative = explain_to_narrative(Database(args.db), args.sql, introspect_database(args.db))
    print(narrative.render(), end="")


COMMANDS = {
    "index": cmd_index, "retrieve": cmd_retrieve, "generate": cmd_generate, "fix": cmd_fix, "select": cmd_select,
    "run": cmd_run, "bounds": cmd_bounds, "simulate": cmd_simulate, "export-pairs": cmd_export_pairs,
    "narrate-plan": cmd_narrate_plan,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        COMMANDS[args.command](args, config)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
