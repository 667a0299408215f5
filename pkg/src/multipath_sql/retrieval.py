"""Keyword extraction and typo-tolerant retrieval of database cell values.

Values are indexed with MinHash signatures over padded character trigrams and
banded locality-sensitive hashing; candidates sharing a band bucket with a keyword
are re-ranked by a blend of embedding similarity and edit distance.
"""

from __future__ import annotations

import base64
import json
import logging
import re
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import prompts
from .backends import CompletionBackend, EmbeddingBackend
from .errors import FormatError
from .models import QuestionContext, RetrievedValue
from .schema import connect_readonly
from .sqltext import quote_ident

log = logging.getLogger(__name__)

INDEX_FORMAT = "multipath-sql-value-index"
INDEX_VERSION = 1
_MERSENNE = np.uint64((1 << 61) - 1)


@dataclass(frozen=True)
class IndexConfig:
    signature_len: int = 128
    bands: int = 32
    rows_per_band: int = 4
    hash_seed: int = 0
    alpha: float = 0.6
    top_k_per_keyword: int = 5
    lsh_candidates: int = 50
    max_value_len: int = 256

    def __post_init__(self):
        if self.signature_len != self.bands * self.rows_per_band:
            raise ValueError("signature_len must equal bands * rows_per_band")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class KeywordSet:
    keywords: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.keywords)

    def __len__(self):
        return len(self.keywords)


@dataclass(frozen=True)
class ValueRecord:
    table: str
    column: str
    value: str


# --------------------------------------------------------------------------
# shingling and signatures


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def trigrams(text: str) -> set[str]:
    """Character trigrams of the lower-cased, whitespace-normalized text padded with two spaces."""
    norm = normalize_text(text)
    if not norm:
        return set()
    padded = f"  {norm}  "
    return {padded[i : i + 3] for i in range(len(padded) - 2)}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


class MinHasher:
    """``signature_len`` hash functions ``((a*x + b) mod 2**64) mod (2**61 - 1)`` over 32-bit shingle ids.

    ``a`` and ``b`` are drawn below ``2**61 - 1``. The multiply-add wraps in uint64, which
    scrambles the ids well; bounding ``a`` to keep the product exact would leave it so
    small that the modulus rarely wraps and the hash functions agree on the minimum.
    """

    def __init__(self, signature_len: int = 128, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.a = rng.integers(1, int(_MERSENNE), size=signature_len, dtype=np.uint64)
        self.b = rng.integers(0, int(_MERSENNE), size=signature_len, dtype=np.uint64)
        self.signature_len = signature_len

    def signature(self, shingles: set[str]) -> np.ndarray | None:
        if not shingles:
            return None
        x = np.fromiter((zlib.crc32(s.encode("utf-8")) for s in sorted(shingles)), dtype=np.uint64,
                        count=len(shingles))
        hashed = (x[:, None] * self.a[None, :] + self.b[None, :]) % _MERSENNE
        return hashed.min(axis=0)


# --------------------------------------------------------------------------
# index


class ValueIndex:
    """Banded LSH index over the distinct textual cell values of a database."""

    def __init__(self, config: IndexConfig = IndexConfig()):
        self.config = config
        self.hasher = MinHasher(config.signature_len, config.hash_seed)
        self.records: list[ValueRecord] = []
        self._signatures: list[np.ndarray] = []
        self.buckets: list[dict[bytes, list[int]]] = [dict() for _ in range(config.bands)]

    def __len__(self) -> int:
        return len(self.records)

    def _band_keys(self, sig: np.ndarray) -> list[bytes]:
        r = self.config.rows_per_band
        return [sig[k * r : (k + 1) * r].tobytes() for k in range(self.config.bands)]

    def add(self, record: ValueRecord, signature: np.ndarray | None = None) -> bool:
        sig = signature if signature is not None else self.hasher.signature(trigrams(record.value))
        if sig is None:
            return False
        rid = len(self.records)
        self.records.append(record)
        self._signatures.append(sig)
        for band, key in zip(self.buckets, self._band_keys(sig)):
            band.setdefault(key, []).append(rid)
        return True

    def signature_of(self, rid: int) -> np.ndarray:
        return self._signatures[rid]

    def lookup(self, keyword: str, max_candidates: int | None = None) -> list[ValueRecord]:
        """Records sharing at least one band bucket with ``keyword``, most similar signatures first."""
        if not keyword.strip():
            raise ValueError("keyword must be non-empty")
        cap = self.config.lsh_candidates if max_candidates is None else max_candidates
        sig = self.hasher.signature(trigrams(keyword))
        if sig is None:
            return []
        hits: set[int] = set()
        for band, key in zip(self.buckets, self._band_keys(sig)):
            hits.update(band.get(key, ()))
        scored = []
        for rid in hits:
            overlap = float(np.mean(self._signatures[rid] == sig))
            rec = self.records[rid]
            scored.append((-overlap, rec.table, rec.column, rec.value, rid))
        scored.sort()
        return [self.records[s[-1]] for s in scored[:cap]]

    def bucket_snapshot(self) -> list[dict[bytes, tuple[int, ...]]]:
        return [{k: tuple(v) for k, v in band.items()} for band in self.buckets]

    # -- persistence: line-delimited JSON, header first

    def save(self, path: str | Path, db_id: str = "") -> None:
        header = {"format": INDEX_FORMAT, "version": INDEX_VERSION, "db_id": db_id,
                  "config": asdict(self.config), "records": len(self.records)}
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header) + "\n")
            for rec, sig in zip(self.records, self._signatures):
                fh.write(json.dumps([rec.table, rec.column, rec.value,
                                     base64.b64encode(sig.astype("<u8").tobytes()).decode("ascii")],
                                    ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ValueIndex":
        with open(path, encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: bad index header") from exc
            if header.get("format") != INDEX_FORMAT or header.get("version") != INDEX_VERSION:
                raise FormatError(f"{path}: unsupported index format {header.get('format')} v{header.get('version')}")
            index = cls(IndexConfig(**header["config"]))
            for line in fh:
                table, column, value, sig = json.loads(line)
                arr = np.frombuffer(base64.b64decode(sig), dtype="<u8").astype(np.uint64)
                index.add(ValueRecord(table, column, value), arr)
        if len(index) != header["records"]:
            raise FormatError(f"{path}: expected {header['records']} records, found {len(index)}")
        return index


def _numeric_affinity(declared: str) -> bool:
    t = declared.upper()
    if "INT" in t:
        return True
    if any(s in t for s in ("CHAR", "CLOB", "TEXT")):
        return False
    return any(s in t for s in ("REAL", "FLOA", "DOUB", "NUMERIC", "DECIMAL", "BOOL"))


def build_index(db_path: str | Path, config: IndexConfig = IndexConfig()) -> ValueIndex:
    """Index every distinct non-null text value of every non-numeric column."""
    index = ValueIndex(config)
    conn = connect_readonly(db_path)
    try:
        tables = [r[0] for r in conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")]
        for table in tables:
            for _cid, column, ctype, *_ in conn.execute(f"PRAGMA table_info({quote_ident(table)})").fetchall():
                if _numeric_affinity(ctype or ""):
                    continue
                q = (f"SELECT DISTINCT {quote_ident(column)} FROM {quote_ident(table)} "
                     f"WHERE typeof({quote_ident(column)}) = 'text' ORDER BY 1")
                for (value,) in conn.execute(q):
                    if 0 < len(value) <= config.max_value_len:
                        index.add(ValueRecord(table, column, value))
    finally:
        conn.close()
    return index


# --------------------------------------------------------------------------
# keywords

_QUOTED_RE = re.compile(r"(?<!\w)'([^']+)'(?!\w)|\"([^\"]+)\"")


def quoted_literals(text: str | None) -> list[str]:
    if not text:
        return []
    return [a or b for a, b in _QUOTED_RE.findall(text) if (a or b).strip()]


def _restore_casing(keyword: str, sources: Sequence[str]) -> str:
    for src in sources:
        m = re.search(re.escape(keyword), src, re.I)
        if m:
            return m.group(0)
    return keyword


def parse_keywords(response: str, ctx: QuestionContext) -> KeywordSet:
    text = response
    marker = text.lower().rfind("keywords:")
    if marker >= 0:
        text = text[marker + len("keywords:"):]
    sources = [ctx.question] + ([ctx.hint] if ctx.hint else [])
    out: list[str] = []
    seen: set[str] = set()

    def push(word: str):
        word = word.strip().strip("-*•`'\"").strip()
        if word and word.lower() not in seen:
            seen.add(word.lower())
            out.append(word)

    for part in re.split(r"[;\n]", text):
        part = part.strip()
        if part:
            push(_restore_casing(part.strip().strip("-*•`'\"").strip(), sources))
    for lit in quoted_literals(ctx.question) + quoted_literals(ctx.hint):
        push(lit)
    return KeywordSet(tuple(out))


def extract_keywords(ctx: QuestionContext, llm: CompletionBackend, max_tokens: int = 512) -> KeywordSet:
    prompt = prompts.fill(prompts.load("keywords"), QUESTION=ctx.question, HINT=ctx.hint or "")
    return parse_keywords(llm.complete(prompt, temperature=0.0, max_tokens=max_tokens), ctx)


# --------------------------------------------------------------------------
# re-ranking


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def edit_similarity(a: str, b: str) -> float:
    """``1 - levenshtein / max(len)`` on lower-cased, whitespace-normalized text."""
    a, b = normalize_text(a), normalize_text(b)
    longest = max(len(a), len(b))
    return 1.0 if longest == 0 else 1.0 - levenshtein(a, b) / longest


def rerank(keyword: str, candidates: Sequence[ValueRecord], embedder: EmbeddingBackend | None,
           alpha: float = 0.6) -> list[RetrievedValue]:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not candidates:
        return []
    flags: tuple[str, ...] = ()
    embed = np.zeros(len(candidates))
    if embedder is not None and alpha > 0:
        try:
            vecs = np.asarray(embedder.embed([keyword] + [c.value for c in candidates]), dtype=float)
            norms = np.linalg.norm(vecs, axis=1)
            norms[norms == 0] = 1.0
            unit = vecs / norms[:, None]
            embed = np.clip(unit[1:] @ unit[0], -1.0, 1.0)
        except Exception as exc:  # any embedding failure degrades to edit distance only
            log.warning("embedding backend failed (%s); ranking by edit distance only", exc)
            alpha, flags = 0.0, ("embedding_fallback",)
    elif embedder is None:
        alpha = 0.0
    out = []
    for rec, e in zip(candidates, embed):
        edit = edit_similarity(keyword, rec.value)
        e = float(e)
        score = alpha * (e + 1.0) / 2.0 + (1.0 - alpha) * edit
        out.append(RetrievedValue(rec.table, rec.column, rec.value, edit, e, score, flags))
    out.sort(key=lambda r: (-r.score, r.table, r.column, r.value))
    return out


def retrieve_values(keywords: KeywordSet, index: ValueIndex, embedder: EmbeddingBackend | None,
                    config: IndexConfig | None = None) -> list[RetrievedValue]:
    """Top values per keyword, merged in keyword order without duplicates."""
    config = config or index.config
    out: list[RetrievedValue] = []
    seen: set[tuple[str, str, str]] = set()
    for kw in keywords:
        for rv in rerank(kw, index.lookup(kw, config.lsh_candidates), embedder, config.alpha)[
                : config.top_k_per_keyword]:
            key = (rv.table, rv.column, rv.value)
            if key not in seen:
                seen.add(key)
                out.append(rv)
    return out
