"""Bounded repair loop for candidates that fail to execute or return nothing."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from . import prompts
from .backends import CompletionBackend
from .errors import BackendError, ParseError
from .execution import DEFAULT_TIMEOUT_MS, ExecutionOutcome, as_database, format_outcome
from .generation import parse_sql
from .models import CandidateQuery, QuestionContext
from .schema import SchemaCatalog, render_schema

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FixerConfig:
    beta: int = 3
    treat_empty_as_failure: bool = True
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    temperature: float = 0.0
    max_tokens: int = 4096
    max_workers: int = 1

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def needs_repair(outcome: ExecutionOutcome, config: FixerConfig) -> bool:
    return not outcome.is_ok or (config.treat_empty_as_failure and outcome.is_empty)


def build_fixer_prompt(ctx: QuestionContext, catalog: SchemaCatalog, sql: str, outcome: ExecutionOutcome) -> str:
    return prompts.fill(
        prompts.load("fixer"),
        EXAMPLES=prompts.load("fixer_demos"),
        DATABASE_SCHEMA=render_schema(catalog),
        QUESTION=ctx.question,
        HINT=ctx.hint or "",
        QUERY=sql,
        RESULT=format_outcome(outcome),
    )


def fix_candidate(candidate: CandidateQuery, ctx: QuestionContext, catalog: SchemaCatalog, db,
                  llm: CompletionBackend, config: FixerConfig = FixerConfig()
                  ) -> tuple[CandidateQuery, ExecutionOutcome]:
    """Execute ``candidate`` and ask for up to ``beta`` revisions while it keeps failing.

    Returns the first healthy revision; otherwise the last revision that executed
    (possibly empty); otherwise the original with its failing outcome. Each prompt
    shows the most recent revision and its outcome.
    """
    db = as_database(db)
    outcome = db.execute(candidate.sql, config.timeout_ms)
    if not needs_repair(outcome, config):
        return candidate, outcome

    best: tuple[CandidateQuery, ExecutionOutcome] | None = (candidate, outcome) if outcome.is_ok else None
    current, current_outcome = candidate, outcome
    for attempt in range(1, config.beta + 1):
        prompt = build_fixer_prompt(ctx, catalog, current.sql, current_outcome)
        try:
            text = llm.complete(prompt, temperature=config.temperature, max_tokens=config.max_tokens)
        except BackendError as exc:
            log.warning("fixer backend failed on candidate %d: %s", candidate.id, exc)
            kept, kept_outcome = best or (candidate, outcome)
            return kept.flagged("fixer_backend_error"), kept_outcome
        try:
            sql = parse_sql(text)
        except ParseError:
            log.warning("fixer revision %d of candidate %d had no SQL", attempt, candidate.id)
            continue
        revised = replace(candidate, sql=sql, repair_count=attempt)
        revised_outcome = db.execute(sql, config.timeout_ms)
        if not needs_repair(revised_outcome, config):
            return revised, revised_outcome
        if revised_outcome.is_ok:
            best = (revised, revised_outcome)
        current, current_outcome = revised, revised_outcome
    return best or (candidate, outcome)


def fix_pool(candidates: Sequence[CandidateQuery], ctx: QuestionContext, catalog: SchemaCatalog, db,
             llm: CompletionBackend, config: FixerConfig = FixerConfig()
             ) -> list[tuple[CandidateQuery, ExecutionOutcome]]:
    db = as_database(db)
    run = lambda c: fix_candidate(c, ctx, catalog, db, llm, config)  # noqa: E731
    if config.max_workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(config.max_workers) as pool:
            return list(pool.map(run, candidates))
    return [run(c) for c in candidates]
