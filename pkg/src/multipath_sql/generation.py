"""Prompt construction and candidate generation for the three reasoning strategies."""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import prompts
from .backends import CompletionBackend
from .errors import BackendError, GenerationError, ParseError, SyntheticGenerationError
from .models import GENERATOR_ORDER, CandidateQuery, GeneratorKind, QuestionContext
from .schema import SchemaCatalog, render_schema
from .sqltext import strip_trailing_semicolons

log = logging.getLogger(__name__)

FEATURE_GUIDELINE = (
    "Generate a mixture of examples that together cover these SQL features: equality and non-equality "
    "predicates, single table and multi-table JOIN, nested JOIN, ORDER BY and LIMIT, GROUP BY and HAVING, "
    "various aggregation functions. Include simple queries without JOIN as well as complex ones. "
    "Do not use CASE expressions."
)
FILTERED_GUIDELINE = (
    "Write simple, realistic questions that use only the tables and columns listed below, so that each "
    "example shows which column answers which kind of question."
)

FEATURES = "features"
FILTERED = "filtered"


@dataclass(frozen=True)
class SyntheticGenSpec:
    n_f: int = 5
    n_t: int = 5
    guideline_f: str = FEATURE_GUIDELINE
    guideline_t: str = FILTERED_GUIDELINE

    def __post_init__(self):
        if self.n_f < 0 or self.n_t < 0 or self.n_f + self.n_t == 0:
            raise ValueError("need n_f, n_t >= 0 and n_f + n_t > 0")


@dataclass(frozen=True)
class SyntheticExample:
    question: str
    sql: str
    origin: str  # FEATURES or FILTERED


@dataclass(frozen=True)
class ExampleSet:
    pairs: tuple[SyntheticExample, ...] = ()
    flags: tuple[str, ...] = ()

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class GenerationConfig:
    n_per_generator: int = 7
    temperature: float = 0.5
    max_tokens: int = 4096
    base_seed: int = 0
    generators: tuple[GeneratorKind, ...] = GENERATOR_ORDER
    synthetic: SyntheticGenSpec = field(default_factory=SyntheticGenSpec)
    max_workers: int = 1

    def __post_init__(self):
        if self.n_per_generator < 1:
            raise ValueError("n_per_generator must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


# --------------------------------------------------------------------------
# prompts


def format_values(ctx: QuestionContext) -> str:
    if not ctx.retrieved_values:
        return "(none)"
    return "\n".join(f"{v.table}.{v.column}: '{v.value}'" for v in ctx.retrieved_values)


def _common(ctx: QuestionContext, catalog: SchemaCatalog, shuffle_seed: int | None) -> dict:
    return {
        "DATABASE_SCHEMA": render_schema(catalog, None, shuffle_seed),
        "VALUES": format_values(ctx),
        "QUESTION": ctx.question,
        "HINT": ctx.hint or "",
    }


def build_dc_prompt(ctx: QuestionContext, catalog: SchemaCatalog, shuffle_seed: int | None = None) -> str:
    return prompts.fill(prompts.load("divide_conquer"), EXAMPLES=prompts.load("divide_conquer_demos"),
                        **_common(ctx, catalog, shuffle_seed))


def build_qp_prompt(ctx: QuestionContext, catalog: SchemaCatalog, shuffle_seed: int | None = None) -> str:
    return prompts.fill(prompts.load("query_plan"), EXAMPLES=prompts.load("query_plan_demos"),
                        **_common(ctx, catalog, shuffle_seed))


def build_baseline_prompt(ctx: QuestionContext, catalog: SchemaCatalog, shuffle_seed: int | None = None) -> str:
    """Zero-shot reference prompt used to compare against the three strategies."""
    return prompts.fill(prompts.load("baseline"), **_common(ctx, catalog, shuffle_seed))


def order_examples(examples: "ExampleSet", seed: int | None) -> list[SyntheticExample]:
    pairs = list(examples.pairs)
    if seed is not None:
        random.Random(seed).shuffle(pairs)
    return pairs


def format_examples(pairs: Sequence[SyntheticExample]) -> str:
    if not pairs:
        return "(no examples)"
    return "\n\n".join(
        f"\"input\": {json.dumps(p.question, ensure_ascii=False)}\n\"output\": {json.dumps(p.sql, ensure_ascii=False)}"
        for p in pairs
    )


def build_os_prompt(ctx: QuestionContext, catalog: SchemaCatalog, examples: ExampleSet,
                    shuffle_seed: int | None = None) -> str:
    """Schema, the synthetic examples of both origins mixed in seed order, then the question."""
    return prompts.fill(prompts.load("online_synthetic"),
                        EXAMPLES=format_examples(order_examples(examples, shuffle_seed)),
                        **_common(ctx, catalog, shuffle_seed))


# --------------------------------------------------------------------------
# synthetic examples

_KEY_RE = re.compile(r"\"?(input|output)\"?\s*:\s*", re.I)
_DECODER = json.JSONDecoder()


def _read_value(text: str, pos: int) -> tuple[str, int]:
    if text.startswith('"', pos):
        try:
            value, end = _DECODER.raw_decode(text, pos)
            if isinstance(value, str):
                return value, end
        except json.JSONDecodeError:
            pass
    end = text.find("\n", pos)
    end = len(text) if end < 0 else end
    return text[pos:end].strip().rstrip(",").strip().strip('"'), end


def parse_example_pairs(text: str, origin: str) -> tuple[list[SyntheticExample], int]:
    """Pairs of ``"input": ...`` / ``"output": ...``; returns (pairs, number of malformed entries)."""
    items: list[tuple[str, str]] = []
    pos = 0
    while True:
        m = _KEY_RE.search(text, pos)
        if not m:
            break
        value, pos = _read_value(text, m.end())
        items.append((m.group(1).lower(), value))
    pairs, bad = [], 0
    k = 0
    while k < len(items):
        key, value = items[k]
        if key == "input" and k + 1 < len(items) and items[k + 1][0] == "output":
            sql = strip_trailing_semicolons(items[k + 1][1])
            if value.strip() and re.match(r"\s*(SELECT|WITH)\b", sql, re.I):
                pairs.append(SyntheticExample(value.strip(), sql, origin))
            else:
                bad += 1
            k += 2
        else:
            bad += 1
            k += 1
    return pairs, bad


def generate_synthetic_examples(ctx: QuestionContext, catalog: SchemaCatalog, spec: SyntheticGenSpec,
                                llm: CompletionBackend, temperature: float = 0.5,
                                max_tokens: int = 4096) -> ExampleSet:
    """Two backend calls: feature-driven examples over the full schema, then examples over the
    selected columns (full schema when no selection is present)."""
    jobs = []
    if spec.n_f:
        jobs.append((FEATURES, prompts.fill(prompts.load("synthetic_features"), COUNT=str(spec.n_f),
                                            GUIDELINE=spec.guideline_f, DATABASE_SCHEMA=render_schema(catalog))))
    if spec.n_t:
        filtered = render_schema(catalog, ctx.column_selection) if ctx.column_selection else render_schema(catalog)
        jobs.append((FILTERED, prompts.fill(prompts.load("synthetic_filtered"), COUNT=str(spec.n_t),
                                            GUIDELINE=spec.guideline_t, DATABASE_SCHEMA=filtered)))
    pairs: list[SyntheticExample] = []
    failures = 0
    flags: list[str] = []
    for origin, prompt in jobs:
        try:
            text = llm.complete(prompt, temperature=temperature, max_tokens=max_tokens)
        except BackendError as exc:
            log.warning("synthetic example generation (%s) failed: %s", origin, exc)
            failures += 1
            flags.append(f"{origin}_failed")
            continue
        got, bad = parse_example_pairs(text, origin)
        if bad:
            log.warning("dropped %d malformed synthetic example(s) from the %s call", bad, origin)
        pairs.extend(got)
    if jobs and failures == len(jobs):
        raise SyntheticGenerationError("every synthetic example call failed")
    return ExampleSet(tuple(pairs), tuple(flags))


# --------------------------------------------------------------------------
# parsing completions

_MARKER_RE = re.compile(r"\**\s*Final (?:Optimized )?(?:SQL Query|Answer)\s*:?\s*\**\s*:?", re.I)
_FENCE_RE = re.compile(r"```[ \t]*(?:sql|sqlite)?[ \t]*\n?(.*?)```", re.S | re.I)
_STMT_START = re.compile(r"^\s*(SELECT|WITH)\b", re.I)


def _clean(sql: str) -> str:
    return strip_trailing_semicolons(sql.strip().strip("`").strip())


def parse_sql(completion: str) -> str:
    """SQL after the last final-answer marker; else the last fenced block; else the last
    paragraph that starts with SELECT or WITH."""
    markers = list(_MARKER_RE.finditer(completion))
    if markers:
        tail = completion[markers[-1].end():]
        fence = _FENCE_RE.search(tail)
        if fence and not tail[: fence.start()].strip():
            sql = _clean(fence.group(1))
        else:
            lines = tail.lstrip("\n").split("\n")
            block = []
            for line in lines:
                if not line.strip():
                    if block:
                        break
                    continue
                block.append(line.rstrip())
            sql = _clean("\n".join(block))
        sql = sql.split(";")[0].strip() if sql.count(";") and not _quoted_semicolon(sql) else sql
        if sql:
            return sql
    fences = _FENCE_RE.findall(completion)
    if fences and _clean(fences[-1]):
        return _clean(fences[-1])
    paragraphs = re.split(r"\n\s*\n", completion)
    for para in reversed(paragraphs):
        lines = para.strip().split("\n")
        for k, line in enumerate(lines):
            if _STMT_START.match(line):
                sql = _clean("\n".join(lines[k:]))
                if sql:
                    return sql
    raise ParseError("no SQL found in completion")


def _quoted_semicolon(sql: str) -> bool:
    from .sqltext import PUNCT, tokenize
    return sum(1 for t in tokenize(sql) if t.kind == PUNCT and t.text == ";") != sql.count(";")


# --------------------------------------------------------------------------
# candidate generation


def generate_candidates(ctx: QuestionContext, catalog: SchemaCatalog, config: GenerationConfig,
                        llm: CompletionBackend, examples: ExampleSet | None = None) -> list[CandidateQuery]:
    """``n_per_generator`` completions per strategy, each with its own schema shuffle seed.

    Candidates are ordered by (strategy, seed index) and numbered densely from 0;
    completions that fail or cannot be parsed are dropped.
    """
    os_flags: tuple[str, ...] = ()
    if GeneratorKind.ONLINE_SYNTHETIC in config.generators and examples is None:
        try:
            examples = generate_synthetic_examples(ctx, catalog, config.synthetic, llm, config.temperature,
                                                   config.max_tokens)
            os_flags = examples.flags
        except SyntheticGenerationError as exc:
            log.warning("%s; using a zero-example prompt", exc)
            examples, os_flags = ExampleSet(), ("no_synthetic_examples",)

    jobs = []
    for kind in config.generators:
        for s in range(config.n_per_generator):
            seed = config.base_seed + s
            if kind is GeneratorKind.DIVIDE_CONQUER:
                prompt = build_dc_prompt(ctx, catalog, seed)
            elif kind is GeneratorKind.QUERY_PLAN:
                prompt = build_qp_prompt(ctx, catalog, seed)
            else:
                prompt = build_os_prompt(ctx, catalog, examples, seed)
            jobs.append((kind, seed, prompt))

    def run(job):
        kind, seed, prompt = job
        try:
            text = llm.complete(prompt, temperature=config.temperature, max_tokens=config.max_tokens)
        except BackendError as exc:
            log.warning("%s completion (seed %d) failed: %s", kind.value, seed, exc)
            return None
        try:
            return text, parse_sql(text)
        except ParseError:
            log.warning("%s completion (seed %d) had no parseable SQL; dropped", kind.value, seed)
            return None

    if config.max_workers > 1:
        with ThreadPoolExecutor(config.max_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    out: list[CandidateQuery] = []
    for (kind, seed, _), res in zip(jobs, results):
        if res is None:
            continue
        text, sql = res
        flags = os_flags if kind is GeneratorKind.ONLINE_SYNTHETIC else ()
        out.append(CandidateQuery(len(out), sql, kind, text, config.temperature, seed, 0, flags))
    if not out:
        raise GenerationError("no generator produced a parseable candidate")
    return out
