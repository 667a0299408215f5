"""Read-only SQL execution, result normalization and execution-result equality."""

from __future__ import annotations

import enum
import logging
import math
import sqlite3
import threading
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .schema import connect_readonly
from .sqltext import normalize_sql, statement_count, write_keyword

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 30_000
DEFAULT_REL_TOL = 1e-6


class _Null:
    """The distinguished NULL cell token."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NULL"

    def __reduce__(self):
        return (_Null, ())


NULL = _Null()


class Status(str, enum.Enum):
    OK = "Ok"
    SQL_ERROR = "SqlError"
    TIMEOUT = "Timeout"


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _cell_key(v):
    if v is NULL:
        return (0, 0)
    if _is_number(v):
        if isinstance(v, float) and math.isfinite(v):
            return (1, float(f"{v:.9g}"))
        return (1, v)
    if isinstance(v, str):
        return (2, v)
    return (3, bytes(v))


def _row_key(row: tuple) -> tuple:
    return tuple(_cell_key(v) for v in row)


def normalize_cell(v):
    if v is None:
        return NULL
    if isinstance(v, memoryview):
        return bytes(v)
    return v


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of running one statement.

    ``rows`` holds the row multiset in canonical sorted order; ``preview`` keeps the
    first rows in engine order for display in prompts.
    """

    status: Status
    rows: tuple[tuple, ...] | None = None
    error_text: str | None = None
    elapsed_ms: int = 0
    columns: tuple[str, ...] = ()
    preview: tuple[tuple, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.status is Status.OK:
            if self.rows is None or self.error_text is not None:
                raise ValueError("Ok outcomes carry rows and no error text")
        elif self.status is Status.SQL_ERROR:
            if self.rows is not None or self.error_text is None:
                raise ValueError("SqlError outcomes carry error text and no rows")
        elif self.rows is not None or self.error_text is not None:
            raise ValueError("Timeout outcomes carry neither rows nor error text")

    @classmethod
    def ok(cls, rows: Iterable[Sequence], elapsed_ms: int = 0, columns: Sequence[str] = (),
           preview_rows: int = 20) -> "ExecutionOutcome":
        raw = [tuple(normalize_cell(v) for v in r) for r in rows]
        ordered = tuple(sorted(raw, key=_row_key))
        return cls(Status.OK, ordered, None, elapsed_ms, tuple(columns), tuple(raw[:preview_rows]))

    @classmethod
    def error(cls, message: str, elapsed_ms: int = 0) -> "ExecutionOutcome":
        return cls(Status.SQL_ERROR, None, message, elapsed_ms)

    @classmethod
    def timeout(cls, elapsed_ms: int = 0) -> "ExecutionOutcome":
        return cls(Status.TIMEOUT, None, None, elapsed_ms)

    @property
    def is_ok(self) -> bool:
        return self.status is Status.OK

    @property
    def is_empty(self) -> bool:
        return self.is_ok and not self.rows

    @cached_property
    def has_real(self) -> bool:
        return bool(self.rows) and any(isinstance(v, float) for r in self.rows for v in r)

    @cached_property
    def fingerprint(self) -> tuple:
        """Hashable key: equal fingerprints imply equal results (not conversely with floats)."""
        if not self.is_ok:
            return (self.status.value, self.error_text)
        return tuple(_row_key(r) for r in self.rows)

    def to_dict(self) -> dict:
        enc = lambda v: None if v is NULL else (v.hex() if isinstance(v, bytes) else v)  # noqa: E731
        return {
            "status": self.status.value,
            "rows": None if self.rows is None else [[enc(v) for v in r] for r in self.rows],
            "error_text": self.error_text,
            "elapsed_ms": self.elapsed_ms,
            "columns": list(self.columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExecutionOutcome":
        status = Status(d["status"])
        if status is Status.OK:
            return cls.ok(d["rows"], d.get("elapsed_ms", 0), d.get("columns", ()))
        if status is Status.SQL_ERROR:
            return cls.error(d["error_text"], d.get("elapsed_ms", 0))
        return cls.timeout(d.get("elapsed_ms", 0))


def format_outcome(outcome: ExecutionOutcome, max_rows: int = 20) -> str:
    """Prompt-facing text for an outcome, capped at ``max_rows`` rows plus the row count."""
    if outcome.status is Status.SQL_ERROR:
        return f"Error: {outcome.error_text}"
    if outcome.status is Status.TIMEOUT:
        return "Timeout: the query did not finish within the time limit."
    if not outcome.rows:
        return "The query executed successfully but returned no rows."
    shown = outcome.preview[:max_rows] if outcome.preview else outcome.rows[:max_rows]
    lines = []
    if outcome.columns:
        lines.append(" | ".join(outcome.columns))
    lines.extend(" | ".join(repr(v) if not isinstance(v, str) else v for v in r) for r in shown)
    total = len(outcome.rows)
    lines.append(f"({total} row{'s' if total != 1 else ''}{', truncated' if total > len(shown) else ''})")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# equality


def cells_equal(a, b, rel_tol: float = DEFAULT_REL_TOL) -> bool:
    if _is_number(a) and _is_number(b):
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return math.isclose(a, b, rel_tol=rel_tol, abs_tol=0.0)
    if _is_number(a) or _is_number(b):
        return False
    return a == b


def rows_equal(r1: tuple, r2: tuple, rel_tol: float = DEFAULT_REL_TOL) -> bool:
    return len(r1) == len(r2) and all(cells_equal(x, y, rel_tol) for x, y in zip(r1, r2))


def _match_multisets(xs: Sequence[tuple], ys: Sequence[tuple], rel_tol: float) -> bool:
    if len(xs) != len(ys):
        return False
    if all(rows_equal(x, y, rel_tol) for x, y in zip(xs, ys)):
        return True
    # sorted alignment failed near a rounding boundary: greedy matching
    remaining = list(ys)
    for x in xs:
        for k, y in enumerate(remaining):
            if rows_equal(x, y, rel_tol):
                del remaining[k]
                break
        else:
            return False
    return True


def _dedupe(rows: Sequence[tuple], rel_tol: float) -> list[tuple]:
    out: list[tuple] = []
    for r in rows:
        if not out or not rows_equal(out[-1], r, rel_tol):
            if not any(rows_equal(o, r, rel_tol) for o in out[-4:]):
                out.append(r)
    return out


def results_equal(a: ExecutionOutcome, b: ExecutionOutcome, mode: str = "multiset",
                  rel_tol: float = DEFAULT_REL_TOL) -> bool:
    """Unordered row comparison; errors and timeouts equal nothing, not even each other.

    ``mode="multiset"`` respects duplicate rows; ``mode="set"`` ignores them.
    Integers compare exactly, reals within ``rel_tol`` relative difference.
    """
    if not (a.is_ok and b.is_ok):
        return False
    if mode == "set":
        xs, ys = _dedupe(a.rows, rel_tol), _dedupe(b.rows, rel_tol)
        return _match_multisets(xs, ys, rel_tol)
    if mode != "multiset":
        raise ValueError(f"unknown comparison mode {mode!r}")
    if len(a.rows) != len(b.rows):
        return False
    if a.rows == b.rows and a.fingerprint == b.fingerprint:
        return True
    if not (a.has_real or b.has_real):
        return False
    return _match_multisets(a.rows, b.rows, rel_tol)


# --------------------------------------------------------------------------
# execution

_ALLOWED_ACTIONS = {sqlite3.SQLITE_SELECT, sqlite3.SQLITE_READ, sqlite3.SQLITE_FUNCTION,
                    getattr(sqlite3, "SQLITE_RECURSIVE", 33)}


def _authorizer(action, arg1, arg2, dbname, source):
    if action in _ALLOWED_ACTIONS:
        return sqlite3.SQLITE_OK
    # the engine reports schema loading as an update of sqlite_master
    if action == sqlite3.SQLITE_UPDATE and arg1 in ("sqlite_master", "sqlite_temp_master"):
        return sqlite3.SQLITE_OK
    return sqlite3.SQLITE_DENY


class Database:
    """A benchmark database opened read-only, with one connection per thread.

    Outcomes are cached per normalized SQL text, so re-running the same candidate
    inside a tournament or a report costs nothing.
    """

    def __init__(self, path: str | Path, db_id: str | None = None):
        self.path = Path(path)
        self.db_id = db_id or self.path.stem
        connect_readonly(self.path).close()  # fail fast on unreadable files
        self._local = threading.local()
        self._cache: dict[tuple, ExecutionOutcome] = {}
        self._lock = threading.Lock()

    def connection(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = connect_readonly(self.path)
            conn.set_authorizer(_authorizer)
            self._local.conn = conn
        return conn

    def cached(self, sql: str, timeout_ms: int) -> ExecutionOutcome | None:
        with self._lock:
            return self._cache.get((normalize_sql(sql), timeout_ms))

    def store(self, sql: str, timeout_ms: int, outcome: ExecutionOutcome) -> None:
        with self._lock:
            self._cache[(normalize_sql(sql), timeout_ms)] = outcome

    def execute(self, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecutionOutcome:
        hit = self.cached(sql, timeout_ms)
        if hit is not None:
            return hit
        outcome = _run(self.connection(), sql, timeout_ms)
        self.store(sql, timeout_ms, outcome)
        return outcome

    def __repr__(self):
        return f"Database({str(self.path)!r}, db_id={self.db_id!r})"


def as_database(db) -> Database:
    return db if isinstance(db, Database) else Database(db)


def _run(conn: sqlite3.Connection, sql: str, timeout_ms: int) -> ExecutionOutcome:
    start = time.perf_counter()
    elapsed = lambda: int((time.perf_counter() - start) * 1000)  # noqa: E731
    bad = write_keyword(sql)
    if bad:
        return ExecutionOutcome.error(f"write statements are not permitted: {bad}", elapsed())
    if statement_count(sql) > 1:
        return ExecutionOutcome.error("only a single statement may be executed", elapsed())

    deadline = start + timeout_ms / 1000.0
    expired = False

    def progress():
        nonlocal expired
        if time.perf_counter() > deadline:
            expired = True
            return 1
        return 0

    conn.set_progress_handler(progress, 1000)
    try:
        cur = conn.execute(sql)
        rows = cur.fetchall()
        columns = tuple(d[0] for d in cur.description) if cur.description else ()
    except (sqlite3.Error, sqlite3.Warning) as exc:
        if expired:
            return ExecutionOutcome.timeout(elapsed())
        return ExecutionOutcome.error(str(exc), elapsed())
    finally:
        conn.set_progress_handler(None, 0)
    return ExecutionOutcome.ok(rows, elapsed(), columns)


def execute_sql(db, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecutionOutcome:
    """Run ``sql`` against ``db`` (a :class:`Database` or a path) without side effects."""
    return as_database(db).execute(sql, timeout_ms)


# --------------------------------------------------------------------------
# clustering and EX


@dataclass(frozen=True)
class ResultCluster:
    key: tuple
    members: tuple[int, ...]


def cluster_outcomes(pool: Sequence[tuple], mode: str = "multiset") -> list[ResultCluster]:
    """Partition the Ok members of ``pool`` (pairs of candidate, outcome) by result equality.

    Clusters are ordered by their smallest member id.
    """
    groups: list[tuple[ExecutionOutcome, list[int]]] = []
    exact: dict[tuple, int] = {}
    for cand, outcome in sorted(pool, key=lambda p: p[0].id):
        if not outcome.is_ok:
            continue
        k = exact.get(outcome.fingerprint)
        if k is None:
            for idx, (rep, _members) in enumerate(groups):
                if results_equal(rep, outcome, mode):
                    k = idx
                    break
        if k is None:
            groups.append((outcome, [cand.id]))
            exact[outcome.fingerprint] = len(groups) - 1
        else:
            groups[k][1].append(cand.id)
            exact.setdefault(outcome.fingerprint, k)
    return [ResultCluster(rep.fingerprint, tuple(members)) for rep, members in groups]


def cluster_by_result(candidates: Sequence, db, timeout_ms: int = DEFAULT_TIMEOUT_MS,
                      mode: str = "multiset") -> tuple[dict[int, ExecutionOutcome], list[ResultCluster]]:
    db = as_database(db)
    outcomes = {c.id: db.execute(c.sql, timeout_ms) for c in candidates}
    clusters = cluster_outcomes([(c, outcomes[c.id]) for c in candidates], mode)
    return outcomes, clusters


def evaluate_ex(pred_sql: str, gold_sql: str, db, timeout_ms: int = DEFAULT_TIMEOUT_MS,
                mode: str = "multiset") -> bool:
    db = as_database(db)
    gold = db.execute(gold_sql, timeout_ms)
    if not gold.is_ok:
        log.warning("gold query fails on %s: %s", db.db_id, gold.error_text or gold.status.value)
        return False
    return results_equal(db.execute(pred_sql, timeout_ms), gold, mode)
