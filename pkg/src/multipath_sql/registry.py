"""Lookup of benchmark databases by id, with cached catalogs and value indexes."""

from __future__ import annotations

import logging
import threading
from pathlib import Path

from .execution import Database
from .retrieval import IndexConfig, ValueIndex, build_index
from .schema import SchemaCatalog, introspect_database

log = logging.getLogger(__name__)


class DatabaseRegistry:
    """Resolves ``db_id`` to ``<root>/<db_id>/<db_id>.sqlite`` (the BIRD and Spider layout)
    or ``<root>/<db_id>.sqlite``.

    Value indexes are built on first use, or loaded from ``index_dir/<db_id>.jsonl``
    when that file exists.
    """

    SUFFIXES = (".sqlite", ".db", ".sqlite3")

    def __init__(self, root: str | Path, index_dir: str | Path | None = None,
                 index_config: IndexConfig = IndexConfig()):
        self.root = Path(root)
        self.index_dir = Path(index_dir) if index_dir else None
        self.index_config = index_config
        self._dbs: dict[str, Database] = {}
        self._catalogs: dict[str, SchemaCatalog] = {}
        self._indexes: dict[str, ValueIndex] = {}
        self._lock = threading.RLock()

    def path(self, db_id: str) -> Path | None:
        for suffix in self.SUFFIXES:
            for p in (self.root / db_id / f"{db_id}{suffix}", self.root / f"{db_id}{suffix}"):
                if p.is_file():
                    return p
        return None

    def __contains__(self, db_id: str) -> bool:
        return self.path(db_id) is not None

    def _require(self, db_id: str) -> Path:
        p = self.path(db_id)
        if p is None:
            raise KeyError(f"unknown database {db_id!r} under {self.root}")
        return p

    def database(self, db_id: str) -> Database:
        with self._lock:
            if db_id not in self._dbs:
                self._dbs[db_id] = Database(self._require(db_id), db_id)
            return self._dbs[db_id]

    def catalog(self, db_id: str) -> SchemaCatalog:
        with self._lock:
            if db_id not in self._catalogs:
                self._catalogs[db_id] = introspect_database(self._require(db_id), db_id)
            return self._catalogs[db_id]

    def value_index(self, db_id: str) -> ValueIndex:
        with self._lock:
            if db_id not in self._indexes:
                saved = self.index_dir / f"{db_id}.jsonl" if self.index_dir else None
                if saved is not None and saved.is_file():
                    self._indexes[db_id] = ValueIndex.load(saved)
                else:
                    log.info("building value index for %s", db_id)
                    self._indexes[db_id] = build_index(self._require(db_id), self.index_config)
            return self._indexes[db_id]
