"""Lexical helpers for SQLite SQL text.

The tokenizer never raises: candidates are often malformed mid-pipeline, so an
unterminated string or quoted identifier simply runs to the end of the input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

WORD = "word"
IDENT = "ident"  # quoted identifier: "x", `x` or [x]
STRING = "string"
NUMBER = "number"
PUNCT = "punct"

_WORD_RE = re.compile(r"[A-Za-z_\u0080-￿][A-Za-z0-9_$\u0080-￿]*")
_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|0[xX][0-9a-fA-F]+")
_CLOSERS = {'"': '"', "`": "`", "[": "]"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int

    @property
    def upper(self) -> str:
        return self.text.upper() if self.kind == WORD else ""

    def is_name(self) -> bool:
        return self.kind in (WORD, IDENT)


def tokenize(sql: str) -> list[Token]:
    return list(_iter_tokens(sql))


def _iter_tokens(sql: str) -> Iterator[Token]:
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
        elif sql.startswith("--", i):
            j = sql.find("\n", i)
            i = n if j < 0 else j + 1
        elif sql.startswith("/*", i):
            j = sql.find("*/", i + 2)
            i = n if j < 0 else j + 2
        elif ch == "'":
            j, buf = i + 1, []
            while j < n:
                if sql[j] == "'":
                    if j + 1 < n and sql[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(sql[j])
                j += 1
            yield Token(STRING, "".join(buf), i)
            i = j + 1
        elif ch in _CLOSERS:
            close = _CLOSERS[ch]
            j = sql.find(close, i + 1)
            end = n if j < 0 else j
            yield Token(IDENT, sql[i + 1 : end], i)
            i = end + 1
        elif ch.isdecimal() or (ch == "." and i + 1 < n and sql[i + 1].isdecimal()):
            m = _NUMBER_RE.match(sql, i)
            assert m is not None
            yield Token(NUMBER, m.group(0), i)
            i = m.end()
        else:
            m = _WORD_RE.match(sql, i)
            if m:
                yield Token(WORD, m.group(0), i)
                i = m.end()
            else:
                two = sql[i : i + 2]
                if two in ("<=", ">=", "<>", "!=", "==", "||", "<<", ">>"):
                    yield Token(PUNCT, two, i)
                    i += 2
                else:
                    yield Token(PUNCT, ch, i)
                    i += 1


# Statement keywords that modify the database or the connection.
WRITE_KEYWORDS = frozenset(
    {
        "INSERT",
        "UPDATE",
        "DELETE",
        "CREATE",
        "DROP",
        "ALTER",
        "ATTACH",
        "DETACH",
        "VACUUM",
        "REINDEX",
        "PRAGMA",
        "BEGIN",
        "COMMIT",
        "ROLLBACK",
        "SAVEPOINT",
        "RELEASE",
    }
)


def write_keyword(sql: str) -> str | None:
    """Return the first write/DDL keyword found in ``sql``, or None.

    ``REPLACE`` is only flagged in statement position (``REPLACE INTO`` or
    ``INSERT OR REPLACE``) because ``replace()`` is an ordinary string function.
    """
    toks = tokenize(sql)
    for k, tok in enumerate(toks):
        up = tok.upper
        if up in WRITE_KEYWORDS:
            # words used as qualified names (t.update) are identifiers
            if k > 0 and toks[k - 1].text == ".":
                continue
            return up
        if up == "REPLACE":
            nxt = toks[k + 1] if k + 1 < len(toks) else None
            if k == 0 or (nxt is not None and nxt.upper == "INTO"):
                return up
    return None


def statement_count(sql: str) -> int:
    """Number of non-empty statements separated by top-level semicolons."""
    count, pending = 0, False
    for tok in tokenize(sql):
        if tok.kind == PUNCT and tok.text == ";":
            count += pending
            pending = False
        else:
            pending = True
    return count + pending


def strip_trailing_semicolons(sql: str) -> str:
    sql = sql.strip()
    while sql.endswith(";"):
        sql = sql[:-1].rstrip()
    return sql


def normalize_sql(sql: str) -> str:
    """Whitespace-collapsed form used as a cache key."""
    return " ".join(strip_trailing_semicolons(sql).split())


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'
