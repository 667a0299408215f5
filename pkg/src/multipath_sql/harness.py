"""Benchmark ingestion, end-to-end runs, bound analyses, selection simulation and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backends import (AuditedBackend, AuditLog, CompletionBackend, EmbeddingBackend, HashingEmbedder, MockBackend,
                       RemoteBackend, RemoteEmbedder)
from .config import STRATEGIES, PipelineConfig
from .errors import BackendError, FormatError, GenerationError, ParseError
from .execution import ExecutionOutcome, cluster_outcomes, results_equal
from .fixer import fix_pool
from .generation import build_baseline_prompt, generate_candidates, parse_sql
from .models import GENERATOR_ORDER, CandidateQuery, GeneratorKind, QuestionContext
from .registry import DatabaseRegistry
from .retrieval import extract_keywords, retrieve_values
from .schema import select_columns
from .selection import (AdversarialComparator, OracleComparator, RemoteComparator, ScoreBoard, SimulatedComparator,
                        adversarial_pick, consistency_pick, oracle_pick, pair_uniform, ranker_pick, run_tournament,
                        selectable, self_consistency_pick)

log = logging.getLogger(__name__)

DIFFICULTIES = ("simple", "moderate", "challenging")


# --------------------------------------------------------------------------
# benchmark files


@dataclass(frozen=True)
class BenchmarkItem:
    question_id: str
    db_id: str
    question: str
    gold_sql: str
    evidence: str | None = None
    difficulty: str | None = None

    def context(self) -> QuestionContext:
        return QuestionContext(self.question, self.db_id, self.evidence or None)


def _item(raw: dict, index: int) -> BenchmarkItem:
    try:
        question, db_id = raw["question"], raw["db_id"]
        gold = raw["SQL"] if "SQL" in raw else raw["query"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"benchmark record {index} lacks field {exc}") from exc
    difficulty = raw.get("difficulty")
    if difficulty is not None and difficulty not in DIFFICULTIES:
        log.warning("record %d has unknown difficulty %r", index, difficulty)
    evidence = raw.get("evidence")
    return BenchmarkItem(str(raw.get("question_id", index)), db_id, question, gold, evidence or None, difficulty)


def load_benchmark(path: str | Path, db_root: str | Path | DatabaseRegistry) -> list[BenchmarkItem]:
    """Read a BIRD (``question/evidence/SQL/db_id/difficulty``) or Spider
    (``question/query/db_id``) JSON array. Items whose database is missing are skipped."""
    registry = db_root if isinstance(db_root, DatabaseRegistry) else DatabaseRegistry(db_root)
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise FormatError(f"{path} must hold a JSON array of questions")
    items = []
    for k, raw in enumerate(data):
        item = _item(raw, k)
        if item.db_id not in registry:
            log.warning("skipping question %s: database %r not found", item.question_id, item.db_id)
            continue
        items.append(item)
    return items


def dump_benchmark(items: Sequence[BenchmarkItem], path: str | Path) -> None:
    """Write items in the BIRD layout (the inverse of :func:`load_benchmark`)."""
    records = []
    for it in items:
        rec = {"question_id": it.question_id, "db_id": it.db_id, "question": it.question,
               "evidence": it.evidence or "", "SQL": it.gold_sql}
        if it.difficulty is not None:
            rec["difficulty"] = it.difficulty
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# backends


@dataclass
class Backends:
    completion: CompletionBackend
    embedder: EmbeddingBackend | None = None
    selector: CompletionBackend | None = None  # defaults to ``completion``


def make_backends(config: PipelineConfig, audit_dir: str | Path | None = None) -> Backends:
    b = config.backend
    if b.kind == "remote":
        if not (b.endpoint and b.model):
            raise ValueError("remote backend needs [backend] endpoint and model")
        llm: CompletionBackend = RemoteBackend(b.endpoint, b.model, b.api_key_env, b.timeout, b.max_retries)
    else:
        if not b.mock_script:
            raise ValueError("mock backend needs a script file (--mock-script or [backend] mock_script)")
        llm = MockBackend.from_file(b.mock_script)
    if b.embedder == "remote":
        embedder: EmbeddingBackend | None = RemoteEmbedder(b.embed_endpoint or b.endpoint, b.embed_model,
                                                           b.api_key_env)
    elif b.embedder == "hashing":
        embedder = HashingEmbedder()
    else:
        embedder = None
    if audit_dir is not None:
        audit = AuditLog(audit_dir)
        return Backends(AuditedBackend(llm, audit, "completion"), embedder, AuditedBackend(llm, audit, "selector"))
    return Backends(llm, embedder)


# --------------------------------------------------------------------------
# pipeline


def _cand_to_dict(c: CandidateQuery) -> dict:
    return {"id": c.id, "sql": c.sql, "generator": c.generator.value, "reasoning": c.reasoning,
            "temperature": c.temperature, "shuffle_seed": c.shuffle_seed, "repair_count": c.repair_count,
            "flags": list(c.flags)}


def _cand_from_dict(d: dict) -> CandidateQuery:
    return CandidateQuery(d["id"], d["sql"], GeneratorKind(d["generator"]), d.get("reasoning", ""),
                          d.get("temperature", 0.0), d.get("shuffle_seed", 0), d.get("repair_count", 0),
                          tuple(d.get("flags", ())))


@dataclass
class PipelineResult:
    question_id: str
    db_id: str
    question: str
    hint: str | None
    gold_sql: str
    difficulty: str | None = None
    candidates: list[CandidateQuery] = field(default_factory=list)
    outcomes: dict[int, ExecutionOutcome] = field(default_factory=dict)
    gold_ok: bool = False
    correct_ids: list[int] = field(default_factory=list)
    board: ScoreBoard | None = None
    picks: dict[str, int] = field(default_factory=dict)
    ex: dict[str, bool] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = {c.id for c in self.candidates}
        for strategy, pick in self.picks.items():
            if pick not in ids:
                raise ValueError(f"{strategy} pick {pick} is not a pool member")

    @property
    def pool(self) -> list[tuple[CandidateQuery, ExecutionOutcome]]:
        return [(c, self.outcomes[c.id]) for c in self.candidates]

    def correct_generators(self) -> frozenset[GeneratorKind]:
        correct = set(self.correct_ids)
        return frozenset(c.generator for c in self.candidates if c.id in correct)

    def to_dict(self, timings: bool = True) -> dict:
        d = {
            "question_id": self.question_id, "db_id": self.db_id, "question": self.question, "hint": self.hint,
            "gold_sql": self.gold_sql, "difficulty": self.difficulty,
            "candidates": [_cand_to_dict(c) for c in self.candidates],
            "outcomes": {str(k): o.to_dict() for k, o in sorted(self.outcomes.items())},
            "gold_ok": self.gold_ok, "correct_ids": list(self.correct_ids),
            "board": self.board.to_dict() if self.board else None,
            "picks": dict(sorted(self.picks.items())), "ex": dict(sorted(self.ex.items())),
            "errors": list(self.errors),
        }
        if timings:
            d["timings"] = dict(self.timings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineResult":
        return cls(
            d["question_id"], d["db_id"], d["question"], d.get("hint"), d["gold_sql"], d.get("difficulty"),
            [_cand_from_dict(c) for c in d.get("candidates", [])],
            {int(k): ExecutionOutcome.from_dict(o) for k, o in d.get("outcomes", {}).items()},
            d.get("gold_ok", False), list(d.get("correct_ids", [])),
            ScoreBoard.from_dict(d["board"]) if d.get("board") else None,
            dict(d.get("picks", {})), dict(d.get("ex", {})), dict(d.get("timings", {})), list(d.get("errors", [])),
        )


class _Stopwatch:
    def __init__(self, timings: dict):
        self.timings = timings

    def __call__(self, name: str):
        watch = self

        class _Lap:
            def __enter__(self):
                self.start = time.perf_counter()

            def __exit__(self, *exc):
                watch.timings[name] = round(time.perf_counter() - self.start, 4)
                return False

        return _Lap()


def _make_comparator(config: PipelineConfig, backends: Backends, catalog, gold: ExecutionOutcome, item_seed: int):
    sel, mode = config.selection, config.run.compare_mode
    if sel.comparator == "oracle":
        return OracleComparator(gold, mode)
    if sel.comparator == "adversarial":
        return AdversarialComparator(gold, mode)
    if sel.comparator == "simulated":
        return SimulatedComparator(gold, sel.p, item_seed, mode)
    return RemoteComparator(backends.selector or backends.completion, catalog)


def _item_seed(seed: int, question_id: str) -> int:
    return int(pair_uniform(seed, zlib.crc32(question_id.encode("utf-8")), 0) * 2**62)


def run_pipeline(item: BenchmarkItem, config: PipelineConfig, backends: Backends,
                 registry: DatabaseRegistry) -> PipelineResult:
    """Retrieval, column selection, generation, fixing, clustering and every configured
    selection strategy for one question. Stage failures are recorded on the result."""
    result = PipelineResult(item.question_id, item.db_id, item.question, item.evidence, item.gold_sql,
                            item.difficulty)
    lap = _Stopwatch(result.timings)
    db = registry.database(item.db_id)
    catalog = registry.catalog(item.db_id)
    llm = backends.completion
    mode, timeout = config.run.compare_mode, config.run.timeout_ms
    ctx = item.context()

    gold = db.execute(item.gold_sql, timeout)
    result.gold_ok = gold.is_ok
    if not gold.is_ok:
        log.warning("gold query of %s fails: %s", item.question_id, gold.error_text or gold.status.value)
        result.errors.append("gold: query does not execute")

    with lap("retrieval"):
        try:
            index = registry.value_index(item.db_id)
            keywords = extract_keywords(ctx, llm)
            ctx = ctx.with_values(retrieve_values(keywords, index, backends.embedder, config.retrieval))
        except (BackendError, ParseError, ValueError) as exc:
            result.errors.append(f"retrieval: {exc}")
    with lap("column_selection"):
        try:
            ctx = ctx.with_selection(select_columns(ctx, catalog, ctx.retrieved_values, llm))
        except (BackendError, ValueError) as exc:
            result.errors.append(f"column_selection: {exc}")
    with lap("generation"):
        try:
            candidates = generate_candidates(ctx, catalog, config.generation, llm)
        except GenerationError as exc:
            result.errors.append(f"generation: {exc}")
            result.ex = {s: False for s in config.selection.strategies}
            return result
    with lap("fixing"):
        fixer_cfg = replace(config.fixer, timeout_ms=timeout)
        pool = fix_pool(candidates, ctx, catalog, db, llm, fixer_cfg)
    result.candidates = [c for c, _ in pool]
    result.outcomes = {c.id: o for c, o in pool}
    if gold.is_ok:
        result.correct_ids = [c.id for c, o in pool if results_equal(o, gold, mode)]

    with lap("selection"):
        contenders = selectable(pool)
        picks: dict[str, CandidateQuery] = {}
        for strategy in config.selection.strategies:
            if strategy == "tournament":
                comparator = _make_comparator(config, backends, catalog, gold,
                                              _item_seed(config.selection.seed, item.question_id))
                picks[strategy], result.board = run_tournament(contenders, ctx, catalog, comparator, mode,
                                                               config.selection.max_workers)
            elif strategy == "consistency":
                picks[strategy] = self_consistency_pick(cluster_outcomes(pool, mode), pool)
            elif strategy == "ranker":
                picks[strategy] = ranker_pick(contenders, ctx, catalog, backends.selector or llm, mode)
            elif strategy == "oracle":
                picks[strategy] = oracle_pick(pool, gold, mode)
            elif strategy == "adversarial":
                picks[strategy] = adversarial_pick(pool, gold, mode)
    result.picks = {s: c.id for s, c in picks.items()}
    result.ex = {s: bool(gold.is_ok and results_equal(result.outcomes[c.id], gold, mode)) for s, c in picks.items()}
    for s, c in picks.items():
        for flag in c.flags:
            result.errors.append(f"{s}: {flag}")
    return result


def baseline_ex(items: Sequence[BenchmarkItem], config: PipelineConfig, backends: Backends,
                registry: DatabaseRegistry) -> float | None:
    """EX of one zero-shot completion per item (full schema, no retrieval, no repair).

    Items whose gold query fails are left out of the denominator.
    """
    hits = []
    for item in items:
        db, catalog = registry.database(item.db_id), registry.catalog(item.db_id)
        gold = db.execute(item.gold_sql, config.run.timeout_ms)
        if not gold.is_ok:
            continue
        try:
            text = backends.completion.complete(build_baseline_prompt(item.context(), catalog), temperature=0.0,
                                                max_tokens=config.generation.max_tokens)
            pred = db.execute(parse_sql(text), config.run.timeout_ms)
        except (BackendError, ParseError) as exc:
            log.warning("baseline failed on %s: %s", item.question_id, exc)
            hits.append(False)
            continue
        hits.append(results_equal(pred, gold, config.run.compare_mode))
    return _mean(hits)


def _sort_key(qid: str):
    return (0, int(qid), "") if qid.isdecimal() else (1, 0, qid)


def load_results(path: str | Path) -> list[PipelineResult]:
    path = Path(path)
    if not path.exists():
        return []
    by_id: dict[str, PipelineResult] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            r = PipelineResult.from_dict(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            log.warning("ignoring unreadable result line %d of %s (%s)", line_no, path, exc)
            continue
        by_id[r.question_id] = r
    return sorted(by_id.values(), key=lambda r: _sort_key(r.question_id))


def run_benchmark(items: Sequence[BenchmarkItem], config: PipelineConfig, backends: Backends,
                  registry: DatabaseRegistry, out_dir: str | Path, resume: bool = True,
                  progress: Callable[[PipelineResult], None] | None = None) -> list[PipelineResult]:
    """Run every item, appending each finished result to ``out_dir/results.jsonl``.

    With ``resume`` the items already present in that file are not run again.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "results.jsonl"
    done = {r.question_id: r for r in load_results(path)} if resume else {}
    if not resume and path.exists():
        path.unlink()
    todo = [it for it in items if it.question_id not in done]
    lock = threading.Lock()

    def work(item: BenchmarkItem) -> PipelineResult:
        try:
            res = run_pipeline(item, config, backends, registry)
        except Exception as exc:  # keep going with the next item
            log.exception("question %s failed", item.question_id)
            res = PipelineResult(item.question_id, item.db_id, item.question, item.evidence, item.gold_sql,
                                 item.difficulty, errors=[f"fatal: {exc!r}"],
                                 ex={s: False for s in config.selection.strategies})
        line = json.dumps(res.to_dict(), ensure_ascii=False)
        with lock, open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if progress:
            progress(res)
        return res

    if config.run.workers > 1:
        with ThreadPoolExecutor(config.run.workers) as ex:
            fresh = list(ex.map(work, todo))
    else:
        fresh = [work(it) for it in todo]
    wanted = {it.question_id for it in items}
    merged = [r for r in done.values() if r.question_id in wanted] + fresh
    return sorted(merged, key=lambda r: _sort_key(r.question_id))


# --------------------------------------------------------------------------
# bounds


def venn_label(kinds: frozenset[GeneratorKind]) -> str:
    return "+".join(k.short for k in GENERATOR_ORDER if k in kinds) or "none"


def _mean(xs: Sequence[bool]) -> float | None:
    return sum(xs) / len(xs) if xs else None


@dataclass
class BoundsReport:
    upper: float | None
    lower: float | None
    n_items: int
    n_excluded: int
    strategy_ex: dict[str, float | None]
    per_difficulty: dict[str, dict]
    per_database: dict[str, dict]
    overlap: dict[str, int]
    generators: dict[str, dict]
    violations: list[str]

    def to_dict(self) -> dict:
        return {
            "upper": self.upper, "lower": self.lower, "n_items": self.n_items, "n_excluded": self.n_excluded,
            "strategy_ex": self.strategy_ex, "per_difficulty": self.per_difficulty,
            "per_database": self.per_database, "overlap": self.overlap, "generators": self.generators,
            "violations": self.violations,
        }


def _is_upper(r: PipelineResult) -> bool:
    return bool(r.correct_ids)


def _is_lower(r: PipelineResult) -> bool:
    ok = [c.id for c in r.candidates if r.outcomes[c.id].is_ok]
    return bool(ok) and set(ok) <= set(r.correct_ids)


def _group_stats(rs: Sequence[PipelineResult], strategies: Sequence[str]) -> dict:
    out = {"n": len(rs), "upper": _mean([_is_upper(r) for r in rs]), "lower": _mean([_is_lower(r) for r in rs])}
    for s in strategies:
        out[s] = _mean([r.ex.get(s, False) for r in rs])
    out["generators"] = {k.short: sum(1 for r in rs if k in r.correct_generators()) for k in GENERATOR_ORDER}
    return out


def _strategies(results: Sequence[PipelineResult]) -> list[str]:
    seen = {s for r in results for s in r.ex}
    return [s for s in STRATEGIES if s in seen] + sorted(seen - set(STRATEGIES))


def bounds_analysis(results: Sequence[PipelineResult]) -> BoundsReport:
    """Oracle and adversarial bounds, splits by difficulty and database, and the counts
    of items whose correct candidates came from each exact subset of generators.

    Items whose gold query fails are excluded and counted in ``n_excluded``.
    """
    scored = [r for r in results if r.gold_ok]
    strategies = _strategies(scored)
    per_diff, per_db = {}, {}
    for key in sorted({r.difficulty or "unknown" for r in scored}):
        per_diff[key] = _group_stats([r for r in scored if (r.difficulty or "unknown") == key], strategies)
    for key in sorted({r.db_id for r in scored}):
        per_db[key] = _group_stats([r for r in scored if r.db_id == key], strategies)
    overlap: dict[str, int] = {}
    for r in scored:
        label = venn_label(r.correct_generators())
        overlap[label] = overlap.get(label, 0) + 1
    generators = {}
    for kind in GENERATOR_ORDER:
        firsts, anys = [], []
        for r in scored:
            mine = [c for c in r.candidates if c.generator is kind]
            if not mine:
                continue
            first = min(mine, key=lambda c: c.shuffle_seed)
            firsts.append(first.id in r.correct_ids)
            anys.append(any(c.id in r.correct_ids for c in mine))
        generators[kind.short] = {"n": len(firsts), "single_candidate_ex": _mean(firsts), "any_correct": _mean(anys)}
    violations = []
    for r in scored:
        lo, hi = r.ex.get("adversarial"), r.ex.get("oracle")
        for s, v in r.ex.items():
            if s in ("oracle", "adversarial"):
                continue
            if (lo is not None and lo > v) or (hi is not None and v > hi):
                violations.append(f"{r.question_id}:{s}")
    return BoundsReport(
        _mean([_is_upper(r) for r in scored]), _mean([_is_lower(r) for r in scored]), len(scored),
        len(results) - len(scored), {s: _mean([r.ex.get(s, False) for r in scored]) for s in strategies},
        per_diff, per_db, dict(sorted(overlap.items())), generators, violations,
    )


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class PoolModel:
    """Synthetic candidate pools.

    Each trial draws an item offset uniformly from ``[-spread, spread]`` that shifts
    every generator's correctness rate, so some items are easy for all generators and
    some hard for all. Incorrect candidates land in one of ``wrong_answers`` distinct
    wrong results with weights proportional to ``1 / (k + 1) ** wrong_skew``, which
    lets wrong answers form large clusters. A fraction ``error_rate`` of candidates
    fail to execute.
    """

    n_per_generator: int = 7
    correctness: tuple[float, ...] = (0.55, 0.55, 0.55)
    spread: float = 0.45
    wrong_answers: int = 3
    wrong_skew: float = 1.5
    error_rate: float = 0.0

    def __post_init__(self):
        if self.n_per_generator < 1 or not self.correctness or self.wrong_answers < 1:
            raise ValueError("pool model needs candidates, generators and at least one wrong answer")

    def sample(self, rng: np.random.Generator) -> tuple[list[tuple[CandidateQuery, ExecutionOutcome]],
                                                      ExecutionOutcome]:
        gold = ExecutionOutcome.ok([(0,)])
        weights = 1.0 / np.arange(1, self.wrong_answers + 1) ** self.wrong_skew
        cumulative = np.cumsum(weights / weights.sum())
        offset = rng.uniform(-self.spread, self.spread)
        pool = []
        kinds = GENERATOR_ORDER
        for g, rate in enumerate(self.correctness):
            kind = kinds[g % len(kinds)]
            for s in range(self.n_per_generator):
                cid = len(pool)
                u_err, u_ok, u_wrong = rng.random(3)
                if u_err < self.error_rate:
                    outcome = ExecutionOutcome.error("simulated failure")
                elif u_ok < min(1.0, max(0.0, rate + offset)):
                    outcome = gold
                else:
                    k = min(int(np.searchsorted(cumulative, u_wrong, side="right")), self.wrong_answers - 1)
                    outcome = ExecutionOutcome.ok([(k + 1,)])
                pool.append((CandidateQuery(cid, f"SELECT {cid}", kind, shuffle_seed=s), outcome))
        return pool, gold


@dataclass
class SimulationStats:
    p: float
    trials: int
    mean: dict[str, float]
    stderr: dict[str, float]
    ci95: dict[str, tuple[float, float]]
    majority_incorrect: float
    per_trial: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {"p": self.p, "trials": self.trials, "mean": self.mean, "stderr": self.stderr,
                "ci95": {k: list(v) for k, v in self.ci95.items()}, "majority_incorrect": self.majority_incorrect}


_SIM_CTX = QuestionContext("simulated question", "simulated")


def simulate_selection(pool_model: PoolModel, p: float, trials: int, seed: int = 0) -> SimulationStats:
    """Mean EX of the tournament (simulated comparator of accuracy ``p``), self-consistency,
    oracle and adversarial picks over ``trials`` sampled pools.

    Pools and comparator draws depend on (seed, trial) only, so sweeps over ``p`` with
    one seed compare the strategies on identical pools.
    """
    if not 0.5 <= p <= 1.0:
        raise ValueError("p must lie in [0.5, 1]")
    if trials < 1:
        raise ValueError("trials must be positive")
    names = ("tournament", "consistency", "oracle", "adversarial")
    hits = {k: np.zeros(trials, dtype=bool) for k in names}
    majority_wrong = np.zeros(trials, dtype=bool)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        pool, gold = pool_model.sample(rng)
        contenders = selectable(pool)
        comparator = SimulatedComparator(gold, p, seed=_splitmix_pair(seed, t))
        winner, _ = run_tournament(contenders, _SIM_CTX, None, comparator)
        picks = {
            "tournament": winner,
            "consistency": consistency_pick(pool),
            "oracle": oracle_pick(pool, gold),
            "adversarial": adversarial_pick(pool, gold),
        }
        outcomes = {c.id: o for c, o in pool}
        for k, c in picks.items():
            hits[k][t] = results_equal(outcomes[c.id], gold)
        majority_wrong[t] = not hits["consistency"][t]
    mean, stderr, ci = {}, {}, {}
    for k in names:
        m = float(hits[k].mean())
        se = math.sqrt(m * (1 - m) / trials)
        mean[k], stderr[k], ci[k] = m, se, (max(0.0, m - 1.96 * se), min(1.0, m + 1.96 * se))
    return SimulationStats(p, trials, mean, stderr, ci, float(majority_wrong.mean()), hits)


def _splitmix_pair(seed: int, t: int) -> int:
    return int(pair_uniform(seed, t, 0x5EED) * 2**62)


# --------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}"


def emit_report(results: Sequence[PipelineResult], bounds: BoundsReport, out_dir: str | Path,
                strategies: Sequence[str] | None = None) -> dict[str, Path]:
    """Write ``per_item.csv``, ``summary.json`` and ``summary.md``; the same inputs always
    produce the same bytes (timings are left out)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    strategies = list(strategies) if strategies is not None else (_strategies(results) or list(STRATEGIES))
    ordered = sorted(results, key=lambda r: _sort_key(r.question_id))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["question_id", "db_id", "difficulty", "gold_ok", "n_candidates", "n_correct"]
    for s in strategies:
        header += [f"{s}_pick", f"{s}_ex"]
    writer.writerow(header)
    for r in ordered:
        row = [r.question_id, r.db_id, r.difficulty or "", int(r.gold_ok), len(r.candidates), len(r.correct_ids)]
        for s in strategies:
            row += [r.picks.get(s, ""), "" if s not in r.ex else int(r.ex[s])]
        writer.writerow(row)
    paths = {"csv": out_dir / "per_item.csv", "json": out_dir / "summary.json", "md": out_dir / "summary.md"}
    paths["csv"].write_bytes(buf.getvalue().encode("utf-8"))

    summary = {
        "n_results": len(results),
        "strategies": strategies,
        "strategy_ex": {s: bounds.strategy_ex.get(s) for s in strategies},
        "bounds": bounds.to_dict(),
        "errors": {r.question_id: r.errors for r in ordered if r.errors},
    }
    paths["json"].write_bytes((json.dumps(summary, indent=2, sort_keys=True) + "\n").encode("utf-8"))

    lines = ["# Run summary", "",
             f"Items scored: {bounds.n_items} (excluded for failing gold queries: {bounds.n_excluded})", "",
             "## Execution accuracy by selection strategy", "", "| strategy | EX (%) |", "|---|---|"]
    lines += [f"| {s} | {_fmt(bounds.strategy_ex.get(s))} |" for s in strategies]
    lines += ["", f"Upper bound (any correct candidate): {_fmt(bounds.upper)}",
              f"Lower bound (every executed candidate correct): {_fmt(bounds.lower)}", "",
              "## Generators", "", "| generator | single-candidate EX (%) | any correct (%) |", "|---|---|---|"]
    for g, st in bounds.generators.items():
        lines.append(f"| {g} | {_fmt(st['single_candidate_ex'])} | {_fmt(st['any_correct'])} |")
    lines += ["", "## Correct candidates by generator subset", "", "| generators | items |", "|---|---|"]
    lines += [f"| {k} | {v} |" for k, v in bounds.overlap.items()]
    for title, table in (("difficulty", bounds.per_difficulty), ("database", bounds.per_database)):
        lines += ["", f"## By {title}", "", "| " + title + " | n | upper | lower | "
                  + " | ".join(strategies) + " |", "|---" * (4 + len(strategies)) + "|"]
        for key, st in table.items():
            cells = [key, str(st["n"]), _fmt(st["upper"]), _fmt(st["lower"])] + [_fmt(st.get(s)) for s in strategies]
            lines.append("| " + " | ".join(cells) + " |")
    if bounds.violations:
        lines += ["", "## Bound violations", ""] + [f"- {v}" for v in bounds.violations]
    paths["md"].write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return paths
