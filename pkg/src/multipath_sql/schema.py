"""Canonical schema model, prompt rendering, column selection and schema unions."""

from __future__ import annotations

import csv
import logging
import random
import re
import sqlite3
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from . import prompts
from .errors import DatabaseReadError, EmptyDatabase, InvalidSelection
from .sqltext import IDENT, PUNCT, WORD, Token, quote_ident, tokenize

if TYPE_CHECKING:
    from .backends import CompletionBackend
    from .models import QuestionContext, RetrievedValue

log = logging.getLogger(__name__)

Entry = tuple[str, str]  # (table, column), catalog spelling


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    declared_type: str = ""
    description: str | None = None
    value_examples: tuple = ()


@dataclass(frozen=True)
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass(frozen=True)
class TableInfo:
    name: str
    columns: tuple[ColumnInfo, ...]
    primary_key: tuple[str, ...] = ()
    foreign_keys: tuple[ForeignKey, ...] = ()

    def __post_init__(self):
        seen = set()
        for col in self.columns:
            key = col.name.lower()
            if key in seen:
                raise ValueError(f"duplicate column {col.name!r} in table {self.name!r}")
            seen.add(key)

    @cached_property
    def _by_lower(self) -> dict[str, ColumnInfo]:
        return {c.name.lower(): c for c in self.columns}

    def column(self, name: str) -> ColumnInfo | None:
        return self._by_lower.get(name.lower())

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class SchemaCatalog:
    db_id: str
    tables: tuple[TableInfo, ...]

    def __post_init__(self):
        names = [t.name.lower() for t in self.tables]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate table names in catalog {self.db_id!r}")
        for t in self.tables:
            for fk in t.foreign_keys:
                ref = self.table(fk.ref_table)
                if ref is None or ref.column(fk.ref_column) is None or t.column(fk.column) is None:
                    raise ValueError(f"dangling foreign key {t.name}.{fk.column} -> {fk.ref_table}.{fk.ref_column}")

    @cached_property
    def _by_lower(self) -> dict[str, TableInfo]:
        return {t.name.lower(): t for t in self.tables}

    def table(self, name: str) -> TableInfo | None:
        return self._by_lower.get(name.lower())

    def resolve(self, table: str, column: str) -> Entry | None:
        """Catalog spelling of ``table.column`` or None when either is unknown."""
        t = self.table(table)
        if t is None:
            return None
        c = t.column(column)
        return None if c is None else (t.name, c.name)

    def all_entries(self) -> frozenset[Entry]:
        return frozenset((t.name, c.name) for t in self.tables for c in t.columns)

    def primary_key_entries(self, tables: Iterable[str]) -> set[Entry]:
        out = set()
        for name in tables:
            t = self.table(name)
            if t is not None:
                out.update((t.name, pk) for pk in t.primary_key)
        return out


@dataclass(frozen=True)
class ColumnSelection:
    entries: frozenset[Entry]

    @classmethod
    def build(cls, catalog: SchemaCatalog, entries: Iterable[Entry]) -> "ColumnSelection":
        """Validate against ``catalog`` and close over primary keys of selected tables."""
        resolved = set()
        for table, column in entries:
            hit = catalog.resolve(table, column)
            if hit is None:
                raise InvalidSelection(f"unknown column {table}.{column}")
            resolved.add(hit)
        resolved |= catalog.primary_key_entries({t for t, _ in resolved})
        return cls(frozenset(resolved))

    @classmethod
    def full(cls, catalog: SchemaCatalog) -> "ColumnSelection":
        return cls(catalog.all_entries())

    @property
    def tables(self) -> set[str]:
        return {t for t, _ in self.entries}

    def validate(self, catalog: SchemaCatalog) -> None:
        for table, column in self.entries:
            if catalog.resolve(table, column) != (table, column):
                raise InvalidSelection(f"unknown column {table}.{column}")
        missing = catalog.primary_key_entries(self.tables) - self.entries
        if missing:
            raise InvalidSelection(f"selection lacks primary key columns {sorted(missing)}")


@dataclass(frozen=True)
class SchemaSubset:
    entries: frozenset[Entry]
    provenance: tuple = ()

    def as_selection(self) -> ColumnSelection:
        return ColumnSelection(self.entries)


# --------------------------------------------------------------------------
# introspection


def connect_readonly(path: str | Path) -> sqlite3.Connection:
    p = Path(path)
    if not p.is_file():
        raise DatabaseReadError(f"database file not found: {p}")
    try:
        conn = sqlite3.connect(f"{p.resolve().as_uri()}?mode=ro", uri=True, check_same_thread=False)
        conn.execute("SELECT name FROM sqlite_master LIMIT 1").fetchall()
    except sqlite3.DatabaseError as exc:
        raise DatabaseReadError(f"cannot read {p}: {exc}") from exc
    conn.text_factory = _lenient_text
    return conn


def _lenient_text(raw: bytes) -> str:
    # BIRD ships a few databases with non-UTF-8 text cells
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def introspect_database(path: str | Path, db_id: str | None = None,
                        description_dir: str | Path | None = None) -> SchemaCatalog:
    """Read every user table of a SQLite file into a :class:`SchemaCatalog`.

    Column descriptions are taken from BIRD-style ``database_description/<table>.csv``
    files; by default the directory next to the database file is used when it exists.
    """
    path = Path(path)
    db_id = db_id or path.stem
    if description_dir is None and (path.parent / "database_description").is_dir():
        description_dir = path.parent / "database_description"
    conn = connect_readonly(path)
    try:
        names = [
            r[0]
            for r in conn.execute(
                "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid"
            )
        ]
        if not names:
            raise EmptyDatabase(f"{path} has no user tables")
        raw = {}
        for name in names:
            info = conn.execute(f"PRAGMA table_info({quote_ident(name)})").fetchall()
            fks = conn.execute(f"PRAGMA foreign_key_list({quote_ident(name)})").fetchall()
            descriptions = _read_descriptions(description_dir, name) if description_dir else {}
            columns = []
            for _cid, col, ctype, _notnull, _default, _pk in info:
                examples = tuple(
                    r[0]
                    for r in conn.execute(
                        f"SELECT DISTINCT {quote_ident(col)} FROM {quote_ident(name)} "
                        f"WHERE {quote_ident(col)} IS NOT NULL LIMIT 3"
                    )
                )
                columns.append(ColumnInfo(col, ctype or "", descriptions.get(col.lower()), examples))
            pk = tuple(row[1] for row in sorted((r for r in info if r[5]), key=lambda r: r[5]))
            raw[name] = (columns, pk, fks)
    except sqlite3.DatabaseError as exc:
        raise DatabaseReadError(f"cannot read {path}: {exc}") from exc
    finally:
        conn.close()

    lower = {n.lower(): n for n in names}
    tables = []
    for name in names:
        columns, pk, fks = raw[name]
        resolved = []
        for fk in fks:
            local, ref_table, ref_col = fk[3], fk[2], fk[4]
            target = lower.get(str(ref_table).lower())
            if target is None:
                log.warning("%s: dropping foreign key to unknown table %s", name, ref_table)
                continue
            t_cols, t_pk, _ = raw[target]
            if ref_col is None:
                if len(t_pk) != 1:
                    continue
                ref_col = t_pk[0]
            col_names = {c.name.lower(): c.name for c in t_cols}
            local_names = {c.name.lower(): c.name for c in columns}
            if ref_col.lower() not in col_names or local.lower() not in local_names:
                log.warning("%s: dropping dangling foreign key %s -> %s.%s", name, local, ref_table, ref_col)
                continue
            resolved.append(ForeignKey(local_names[local.lower()], target, col_names[ref_col.lower()]))
        tables.append(TableInfo(name, tuple(columns), pk, tuple(resolved)))
    return SchemaCatalog(db_id, tuple(tables))


def _read_descriptions(directory: str | Path, table: str) -> dict[str, str]:
    directory = Path(directory)
    candidates = [p for p in directory.glob("*.csv") if p.stem.lower() == table.lower()]
    if not candidates:
        return {}
    for encoding in ("utf-8-sig", "latin-1"):
        try:
            with open(candidates[0], newline="", encoding=encoding) as fh:
                rows = list(csv.DictReader(fh))
            break
        except UnicodeDecodeError:
            continue
    out = {}
    for row in rows:
        row = {(k or "").strip().lower(): (v or "").strip() for k, v in row.items()}
        name = row.get("original_column_name") or row.get("column_name")
        if not name:
            continue
        parts = [row.get("column_description", ""), row.get("value_description", "")]
        text = " ".join(" ".join(p.split()) for p in parts if p)
        if text:
            out[name.lower()] = text
    return out


# --------------------------------------------------------------------------
# rendering


def _literal(value) -> str:
    if isinstance(value, str):
        v = value if len(value) <= 60 else value[:57] + "..."
        return "'" + v.replace("'", "''") + "'"
    if isinstance(value, bytes):
        return "<blob>"
    return repr(value)


def render_schema(catalog: SchemaCatalog, selection: ColumnSelection | None = None,
                  shuffle_seed: int | None = None) -> str:
    """CREATE TABLE statements with ``--`` comments carrying descriptions and example values.

    With ``shuffle_seed`` the table order and the column order inside each table are
    permuted by ``random.Random(shuffle_seed)``; key clauses keep their position.
    """
    if selection is not None:
        selection.validate(catalog)
        keep = {(t.lower(), c.lower()) for t, c in selection.entries}
        tables = [t for t in catalog.tables if t.name.lower() in {k[0] for k in keep}]
    else:
        keep = None
        tables = list(catalog.tables)
    rng = random.Random(shuffle_seed) if shuffle_seed is not None else None
    if rng:
        rng.shuffle(tables)
    kept_tables = {t.name.lower() for t in tables}

    blocks = []
    for t in tables:
        cols = [c for c in t.columns if keep is None or (t.name.lower(), c.name.lower()) in keep]
        if rng:
            rng.shuffle(cols)
        lines = [f"CREATE TABLE {quote_ident(t.name)} ("]
        for c in cols:
            line = f"  {quote_ident(c.name)} {c.declared_type}".rstrip() + ","
            notes = []
            if c.description:
                notes.append(c.description)
            if c.value_examples:
                notes.append("example values: " + ", ".join(_literal(v) for v in c.value_examples))
            if notes:
                line += " -- " + "; ".join(notes)
            lines.append(line)
        clauses = []
        if t.primary_key:
            clauses.append("  PRIMARY KEY (" + ", ".join(quote_ident(k) for k in t.primary_key) + ")")
        for fk in t.foreign_keys:
            local_kept = keep is None or (t.name.lower(), fk.column.lower()) in keep
            if local_kept and fk.ref_table.lower() in kept_tables:
                clauses.append(
                    f"  FOREIGN KEY ({quote_ident(fk.column)}) REFERENCES "
                    f"{quote_ident(fk.ref_table)} ({quote_ident(fk.ref_column)})"
                )
        lines.extend(c + "," for c in clauses[:-1])
        lines.extend(clauses[-1:])
        lines.append(");")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


# --------------------------------------------------------------------------
# identifier extraction


_CLAUSE_END = frozenset(
    {"WHERE", "GROUP", "ORDER", "HAVING", "LIMIT", "UNION", "INTERSECT", "EXCEPT", "ON", "USING",
     "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "CROSS", "NATURAL", "OUTER", "WINDOW", "SELECT"}
)
_STAR_PREFIX = frozenset({"SELECT", "DISTINCT", "ALL"})


def _table_refs(tokens: Sequence[Token], catalog: SchemaCatalog) -> tuple[dict[str, str], set[str]]:
    """Scan FROM/JOIN clauses: returns (alias -> table, referenced tables)."""
    aliases: dict[str, str] = {}
    tables: set[str] = set()
    n = len(tokens)
    k = 0
    while k < n:
        up = tokens[k].upper
        if up in ("FROM", "JOIN"):
            k += 1
            while k < n:
                tok = tokens[k]
                if tok.kind == PUNCT and tok.text == "(":
                    break  # derived table: its contents are scanned by the outer loop
                if not tok.is_name() or tok.upper in _CLAUSE_END:
                    break
                name = tok.text
                # schema-qualified name: main.t
                if k + 2 < n and tokens[k + 1].text == "." and tokens[k + 2].is_name():
                    k += 2
                    name = tokens[k].text
                info = catalog.table(name)
                k += 1
                alias = None
                if k < n and tokens[k].upper == "AS":
                    k += 1
                if k < n and tokens[k].is_name() and tokens[k].upper not in _CLAUSE_END:
                    alias = tokens[k].text
                    k += 1
                if info is not None:
                    tables.add(info.name)
                    aliases[info.name.lower()] = info.name
                    if alias:
                        aliases[alias.lower()] = info.name
                if k < n and tokens[k].kind == PUNCT and tokens[k].text == "," and up == "FROM":
                    k += 1
                    continue
                break
            continue
        k += 1
    return aliases, tables


def extract_identifiers(sql: str, catalog: SchemaCatalog) -> set[Entry]:
    """Catalog columns referenced by ``sql``, resolved through FROM/JOIN aliases.

    Best effort and purely lexical: qualified references resolve through the alias
    map, bare names match columns of any table referenced in the statement, and a
    projection ``*`` expands to every column of the referenced tables.
    """
    tokens = tokenize(sql)
    aliases, tables = _table_refs(tokens, catalog)
    found: set[Entry] = set()
    n = len(tokens)
    for k, tok in enumerate(tokens):
        prev = tokens[k - 1] if k else None
        if tok.kind == PUNCT and tok.text == "*":
            if prev is not None and prev.text == "." and k >= 2:
                owner = aliases.get(tokens[k - 2].text.lower())
                if owner:
                    found.update((owner, c) for c in catalog.table(owner).column_names)
            elif prev is None or prev.upper in _STAR_PREFIX or (prev.kind == PUNCT and prev.text == ","):
                for t in tables:
                    found.update((t, c) for c in catalog.table(t).column_names)
            continue
        if not tok.is_name():
            continue
        if prev is not None and prev.text == ".":
            continue  # handled as the right-hand side of a qualified name
        if k + 2 < n and tokens[k + 1].text == "." and tokens[k + 2].is_name():
            owner = aliases.get(tok.text.lower())
            if owner:
                hit = catalog.resolve(owner, tokens[k + 2].text)
                if hit:
                    found.add(hit)
            continue
        if tok.kind == WORD or tok.kind == IDENT:
            for t in tables:
                hit = catalog.resolve(t, tok.text)
                if hit:
                    found.add(hit)
    return found


def schema_union(catalog: SchemaCatalog, sql_a: str, sql_b: str, provenance: tuple = ()) -> SchemaSubset:
    entries = extract_identifiers(sql_a, catalog) | extract_identifiers(sql_b, catalog)
    entries |= catalog.primary_key_entries({t for t, _ in entries})
    return SchemaSubset(frozenset(entries), provenance)


# --------------------------------------------------------------------------
# column selection

_QUALIFIED_RE = re.compile(r"""(`[^`]+`|"[^"]+"|\[[^\]]+\]|[A-Za-z_][\w$]*)\s*\.\s*(`[^`]+`|"[^"]+"|\[[^\]]+\]|[A-Za-z_][\w$]*)""")


def _unquote(name: str) -> str:
    if name[:1] in ('"', "`", "[") and len(name) >= 2:
        return name[1:-1]
    return name


def parse_column_list(text: str, catalog: SchemaCatalog) -> set[Entry]:
    out = set()
    for m in _QUALIFIED_RE.finditer(text):
        hit = catalog.resolve(_unquote(m.group(1)), _unquote(m.group(2)))
        if hit:
            out.add(hit)
    return out


def select_columns(ctx: "QuestionContext", catalog: SchemaCatalog, retrieved: Sequence["RetrievedValue"],
                   llm: "CompletionBackend", max_tokens: int = 1024) -> ColumnSelection:
    """Columns relevant to the question: value-hosting columns, backend picks and their keys.

    Falls back to the whole catalog when the backend names no known column.
    """
    prompt = prompts.fill(
        prompts.load("column_selection"),
        DATABASE_SCHEMA=render_schema(catalog),
        QUESTION=ctx.question,
        HINT=ctx.hint or "",
    )
    response = llm.complete(prompt, temperature=0.0, max_tokens=max_tokens)
    picked = parse_column_list(response, catalog)
    if not picked:
        log.warning("column selection response had no known columns; using the full schema")
        return ColumnSelection.full(catalog)
    for rv in retrieved:
        hit = catalog.resolve(rv.table, rv.column)
        if hit:
            picked.add(hit)
    return ColumnSelection.build(catalog, picked)
