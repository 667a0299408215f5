"""Picking one query from a candidate pool.

The tournament compares every ordered pair of candidates. A pair whose execution
results agree is decided in favour of the first candidate without consulting the
comparator; other pairs go to a binary comparator. The candidate with the most
wins is picked, ties going to the lowest id.
"""

from __future__ import annotations

import enum
import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence

from . import prompts
from .backends import CompletionBackend
from .errors import BackendError
from .execution import ExecutionOutcome, ResultCluster, cluster_outcomes, format_outcome, results_equal
from .models import CandidateQuery, QuestionContext
from .schema import SchemaCatalog, SchemaSubset, render_schema, schema_union

log = logging.getLogger(__name__)

Member = tuple[CandidateQuery, ExecutionOutcome]

EXECUTION_MATCH = "ExecutionMatch"
COMPARATOR = "Comparator"


class Winner(str, enum.Enum):
    A = "A"
    B = "B"


class Verdict(NamedTuple):
    winner: Winner
    flags: tuple[str, ...] = ()


class Comparator(Protocol):
    def compare(self, ctx: QuestionContext, schema: SchemaSubset | None, a: Member, b: Member) -> Winner: ...


# --------------------------------------------------------------------------
# comparators


class RemoteComparator:
    """Asks a completion backend which of two candidates is right; the reply must be
    exactly ``A`` or ``B`` after trimming, anything else counts as ``A``."""

    def __init__(self, llm: CompletionBackend, catalog: SchemaCatalog, temperature: float = 0.0,
                 max_tokens: int = 16, max_rows: int = 20):
        self.llm = llm
        self.catalog = catalog
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_rows = max_rows

    def prompt(self, ctx: QuestionContext, schema: SchemaSubset | None, a: Member, b: Member) -> str:
        selection = schema.as_selection() if schema is not None and schema.entries else None
        return prompts.fill(
            prompts.load("selector"),
            DATABASE_SCHEMA=render_schema(self.catalog, selection),
            QUESTION=ctx.question,
            HINT=ctx.hint or "",
            CANDIDATE_A_QUERY=a[0].sql,
            CANDIDATE_A_RESULT=format_outcome(a[1], self.max_rows),
            CANDIDATE_B_QUERY=b[0].sql,
            CANDIDATE_B_RESULT=format_outcome(b[1], self.max_rows),
        )

    def judge(self, ctx: QuestionContext, schema: SchemaSubset | None, a: Member, b: Member) -> Verdict:
        reply = self.llm.complete(self.prompt(ctx, schema, a, b), temperature=self.temperature,
                                  max_tokens=self.max_tokens)
        answer = reply.strip()
        if answer in ("A", "B"):
            return Verdict(Winner(answer))
        log.warning("comparator reply %r is neither A nor B; counting it as A", answer[:40])
        return Verdict(Winner.A, ("comparator_parse_failure",))

    def compare(self, ctx, schema, a, b) -> Winner:
        return self.judge(ctx, schema, a, b).winner


class _GoldComparator:
    def __init__(self, gold: ExecutionOutcome, mode: str = "multiset"):
        self.gold = gold
        self.mode = mode

    def correct(self, member: Member) -> bool:
        return results_equal(member[1], self.gold, self.mode)


class OracleComparator(_GoldComparator):
    """Prefers the side matching gold; with neither (or both) correct the first argument wins."""

    def compare(self, ctx, schema, a, b) -> Winner:
        return Winner.B if self.correct(b) and not self.correct(a) else Winner.A


class AdversarialComparator(_GoldComparator):
    """Prefers the side not matching gold; otherwise the first argument wins."""

    def compare(self, ctx, schema, a, b) -> Winner:
        return Winner.B if self.correct(a) and not self.correct(b) else Winner.A


_MASK = (1 << 64) - 1


def _splitmix(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def pair_uniform(seed: int, i: int, j: int) -> float:
    """Uniform in [0, 1) determined by (seed, i, j) alone."""
    return _splitmix(_splitmix(_splitmix(seed & _MASK) ^ (i & _MASK)) ^ (j & _MASK)) / 2.0**64


class SimulatedComparator(_GoldComparator):
    """Judge that is right on a mixed pair with probability ``p``.

    Each ordered pair (i, j) draws one uniform u from (seed, i, j): a mixed pair goes
    to the correct side when u < p, any other pair to A when u < 0.5. Draws do not
    depend on call order, so concurrent tournaments stay reproducible, and raising
    ``p`` with the same seed only flips mixed pairs towards the correct side.
    """

    def __init__(self, gold: ExecutionOutcome, p: float, seed: int = 0, mode: str = "multiset"):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        super().__init__(gold, mode)
        self.p = p
        self.seed = seed

    def compare(self, ctx, schema, a, b) -> Winner:
        u = pair_uniform(self.seed, a[0].id, b[0].id)
        ca, cb = self.correct(a), self.correct(b)
        if ca != cb:
            right_wins = u < self.p
            return Winner.A if ca == right_wins else Winner.B
        return Winner.A if u < 0.5 else Winner.B


# --------------------------------------------------------------------------
# tournament


@dataclass(frozen=True)
class Comparison:
    i: int
    j: int
    mechanism: str
    winner: Winner
    flags: tuple[str, ...] = ()

    @property
    def winner_id(self) -> int:
        return self.i if self.winner is Winner.A else self.j


@dataclass
class ScoreBoard:
    scores: dict[int, int] = field(default_factory=dict)
    comparisons: list[Comparison] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.scores.values())

    def winner_id(self) -> int:
        return min(self.scores, key=lambda k: (-self.scores[k], k))

    def to_dict(self) -> dict:
        return {
            "scores": {str(k): v for k, v in sorted(self.scores.items())},
            "comparisons": [[c.i, c.j, c.mechanism, c.winner.value, list(c.flags)] for c in self.comparisons],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreBoard":
        return cls({int(k): v for k, v in d["scores"].items()},
                   [Comparison(i, j, m, Winner(w), tuple(f)) for i, j, m, w, f in d["comparisons"]])


def run_tournament(pool: Sequence[Member], ctx: QuestionContext, catalog: SchemaCatalog | None,
                   comparator: Comparator, mode: str = "multiset", max_workers: int = 1
                   ) -> tuple[CandidateQuery, ScoreBoard]:
    """Round robin over all ordered pairs of ``pool``; returns the winner and the score board.

    ``catalog`` may be None when the comparator does not look at the schema.
    """
    if not pool:
        raise ValueError("cannot run a tournament on an empty pool")
    members = sorted(pool, key=lambda m: m[0].id)
    by_id = {m[0].id: m for m in members}
    if len(by_id) != len(members):
        raise ValueError("candidate ids must be unique within a pool")
    pairs = [(a, b) for a in members for b in members if a[0].id != b[0].id]
    unions: dict[tuple[int, int], SchemaSubset] = {}

    def union(a: Member, b: Member) -> SchemaSubset | None:
        if catalog is None:
            return None
        key = (min(a[0].id, b[0].id), max(a[0].id, b[0].id))
        if key not in unions:  # racing threads compute the same value
            unions[key] = schema_union(catalog, a[0].sql, b[0].sql, key)
        return unions[key]

    def decide(pair: tuple[Member, Member]) -> Comparison:
        a, b = pair
        if results_equal(a[1], b[1], mode):
            return Comparison(a[0].id, b[0].id, EXECUTION_MATCH, Winner.A)
        schema = union(a, b)
        try:
            judge = getattr(comparator, "judge", None)
            verdict = judge(ctx, schema, a, b) if judge else Verdict(comparator.compare(ctx, schema, a, b))
        except BackendError as exc:
            log.warning("comparison %d vs %d failed (%s); counting it as A", a[0].id, b[0].id, exc)
            verdict = Verdict(Winner.A, ("comparator_error",))
        return Comparison(a[0].id, b[0].id, COMPARATOR, Winner(verdict.winner), tuple(verdict.flags))

    if max_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers) as ex:
            results = list(ex.map(decide, pairs))
    else:
        results = [decide(p) for p in pairs]

    board = ScoreBoard({m[0].id: 0 for m in members})
    for comp in results:
        board.scores[comp.winner_id] += 1
        board.comparisons.append(comp)
    return by_id[board.winner_id()][0], board


# --------------------------------------------------------------------------
# baselines and bounds


def selectable(pool: Sequence[Member]) -> list[Member]:
    """Candidates that executed, or the whole pool when none did."""
    ok = [m for m in pool if m[1].is_ok]
    return ok or list(pool)


def self_consistency_pick(clusters: Sequence[ResultCluster], pool: Sequence[Member]) -> CandidateQuery:
    """Lowest-id member of the largest result cluster; size ties go to the cluster with
    the smallest member id. With no clusters, the lowest-id candidate."""
    by_id = {m[0].id: m[0] for m in pool}
    if not by_id:
        raise ValueError("empty pool")
    if not clusters:
        return by_id[min(by_id)]
    best = min(clusters, key=lambda c: (-len(c.members), min(c.members)))
    return by_id[min(best.members)]


def consistency_pick(pool: Sequence[Member], mode: str = "multiset") -> CandidateQuery:
    return self_consistency_pick(cluster_outcomes(pool, mode), pool)


def oracle_pick(pool: Sequence[Member], gold: ExecutionOutcome, mode: str = "multiset") -> CandidateQuery:
    """Lowest-id correct candidate when one exists: the upper bound of any selector."""
    members = sorted(selectable(pool), key=lambda m: m[0].id)
    for cand, outcome in members:
        if results_equal(outcome, gold, mode):
            return cand
    return members[0][0]


def adversarial_pick(pool: Sequence[Member], gold: ExecutionOutcome, mode: str = "multiset") -> CandidateQuery:
    """Lowest-id incorrect candidate among those that executed: the lower bound."""
    members = sorted(selectable(pool), key=lambda m: m[0].id)
    for cand, outcome in members:
        if not results_equal(outcome, gold, mode):
            return cand
    return members[0][0]


_RANKING_RE = re.compile(r"Ranking\s*:\s*(.*)", re.I)


def build_ranker_prompt(pool: Sequence[Member], ctx: QuestionContext, catalog: SchemaCatalog,
                        max_rows: int = 20) -> str:
    blocks = [
        f"Candidate {cand.id}\n{cand.sql}\nExecution result\n{format_outcome(outcome, max_rows)}"
        for cand, outcome in sorted(pool, key=lambda m: m[0].id)
    ]
    return prompts.fill(prompts.load("ranker"), DATABASE_SCHEMA=render_schema(catalog), QUESTION=ctx.question,
                        HINT=ctx.hint or "", CANDIDATES="\n\n".join(blocks))


def parse_ranking(text: str) -> list[int]:
    m = _RANKING_RE.search(text)
    body = m.group(1) if m else text
    return [int(x) for x in re.findall(r"\d+", body)]


def ranker_pick(pool: Sequence[Member], ctx: QuestionContext, catalog: SchemaCatalog, llm: CompletionBackend,
                mode: str = "multiset", max_tokens: int = 256) -> CandidateQuery:
    """One prompt ranks all candidates; the top-ranked pool member wins. Failures fall
    back to self-consistency and flag the pick."""
    if not pool:
        raise ValueError("empty pool")
    by_id = {m[0].id: m[0] for m in pool}
    try:
        reply = llm.complete(build_ranker_prompt(pool, ctx, catalog), temperature=0.0, max_tokens=max_tokens)
    except BackendError as exc:
        log.warning("ranker backend failed (%s); using self-consistency", exc)
        return consistency_pick(pool, mode).flagged("ranker_backend_error")
    for rid in parse_ranking(reply):
        if rid in by_id:
            return by_id[rid]
    log.warning("ranker reply named no candidate; using self-consistency")
    return consistency_pick(pool, mode).flagged("ranker_fallback")


# --------------------------------------------------------------------------
# comparator training pairs


@dataclass(frozen=True)
class PairExample:
    question: str
    hint: str
    schema: str
    candidate_a: str
    candidate_b: str
    result_a: str
    result_b: str
    label: Winner
    hint_injected: bool = False

    def to_record(self) -> dict:
        return {
            "question": self.question,
            "hint": self.hint,
            "schema": self.schema,
            "candidate_a": self.candidate_a,
            "candidate_b": self.candidate_b,
            "result_a": self.result_a,
            "result_b": self.result_b,
            "label": self.label.value,
        }


@dataclass(frozen=True)
class ExportRun:
    ctx: QuestionContext
    pool: tuple[Member, ...]
    gold_sql: str


@dataclass(frozen=True)
class RegenerationDirective:
    """A question whose pool had no correct candidate, to be regenerated with the gold
    query shown as a hint."""

    ctx: QuestionContext
    gold_sql: str

    @property
    def hint(self) -> str:
        prefix = f"{self.ctx.hint}\n" if self.ctx.hint else ""
        return f"{prefix}A correct query for this question is: {self.gold_sql}"


def _split(run: ExportRun, registry, mode: str) -> tuple[list[Member], list[Member]] | None:
    gold = registry.database(run.ctx.db_id).execute(run.gold_sql)
    if not gold.is_ok:
        log.warning("gold query of %r does not execute; run skipped", run.ctx.question[:60])
        return None
    ok = sorted((m for m in run.pool if m[1].is_ok), key=lambda m: m[0].id)
    correct = [m for m in ok if results_equal(m[1], gold, mode)]
    wrong = [m for m in ok if not results_equal(m[1], gold, mode)]
    return correct, wrong


def export_pair_dataset(runs: Sequence[ExportRun], registry, seed: int = 42,
                        mode: str = "multiset") -> list[PairExample]:
    """One example per (correct, incorrect) candidate pair of every run that has both.

    The correct side is placed in slot A or B by a single stream seeded with ``seed``.
    """
    rng = random.Random(seed)
    out: list[PairExample] = []
    for run in runs:
        split = _split(run, registry, mode)
        if split is None:
            continue
        correct, wrong = split
        if not correct or not wrong:
            continue
        catalog = registry.catalog(run.ctx.db_id)
        for good in correct:
            for bad in wrong:
                union = schema_union(catalog, good[0].sql, bad[0].sql)
                schema = render_schema(catalog, union.as_selection() if union.entries else None)
                first, second, label = (good, bad, Winner.A) if rng.random() < 0.5 else (bad, good, Winner.B)
                out.append(PairExample(run.ctx.question, run.ctx.hint or "", schema, first[0].sql, second[0].sql,
                                       format_outcome(first[1]), format_outcome(second[1]), label))
    return out


def regeneration_directives(runs: Sequence[ExportRun], registry, mode: str = "multiset"
                            ) -> list[RegenerationDirective]:
    out = []
    for run in runs:
        split = _split(run, registry, mode)
        if split is not None and not split[0]:
            out.append(RegenerationDirective(run.ctx, run.gold_sql))
    return out


def write_pairs(pairs: Sequence[PairExample], path: str | Path) -> None:
    lines = [json.dumps(p.to_record(), ensure_ascii=False) + "\n" for p in pairs]
    Path(path).write_bytes("".join(lines).encode("utf-8"))
