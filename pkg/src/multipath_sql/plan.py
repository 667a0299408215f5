"""Turn SQLite's ``EXPLAIN QUERY PLAN`` tree into a step-by-step narrative.

Every plan node yields exactly one step. Full table scans open the table during
preparation, index lookups and joins become matching steps, and everything else
(temp b-trees, subqueries, compound selects) becomes an operation step. Two fixed
preparation steps and two fixed delivery steps frame the node steps.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass

from .errors import SqlError
from .execution import as_database
from .schema import SchemaCatalog, _table_refs
from .sqltext import tokenize

PREPARATION_BOILERPLATE = (
    "Initialize the process: get ready to run the query.",
    "Prepare storage: reserve space for intermediate values and set them to NULL.",
)
DELIVERY_BOILERPLATE = (
    "Output the result: return the selected columns of every row that survived the previous steps.",
    "End the process: stop the query execution.",
)
BOILERPLATE_STEPS = len(PREPARATION_BOILERPLATE) + len(DELIVERY_BOILERPLATE)


@dataclass(frozen=True)
class PlanNode:
    id: int
    parent: int
    detail: str


@dataclass(frozen=True)
class PlanNarrative:
    preparation: tuple[str, ...]
    matching: tuple[str, ...]
    operation: tuple[str, ...]
    delivery: tuple[str, ...]
    tables: tuple[str, ...] = ()

    @property
    def step_count(self) -> int:
        return len(self.preparation) + len(self.matching) + len(self.operation) + len(self.delivery)

    def render(self) -> str:
        out = []
        for title, steps in (("Preparation Steps", self.preparation), ("Matching Rows", self.matching),
                             ("Operations", self.operation), ("Delivering the Result", self.delivery)):
            if not steps:
                continue
            out.append(f"** {title}:**")
            out.extend(f"{k}. {s}" for k, s in enumerate(steps, 1))
            out.append("")
        return "\n".join(out).rstrip() + "\n"


def query_plan(db, sql: str) -> list[PlanNode]:
    conn = as_database(db).connection()
    try:
        rows = conn.execute("EXPLAIN QUERY PLAN " + sql).fetchall()
    except (sqlite3.Error, sqlite3.Warning) as exc:
        raise SqlError(str(exc)) from exc
    return [PlanNode(r[0], r[1], r[3]) for r in rows]


_ACCESS_RE = re.compile(r"^(SCAN|SEARCH)\s+(?:TABLE\s+)?(\S+)(?:\s+AS\s+(\S+))?(?:\s+(.*))?$")


def _describe_access(kind: str, table: str, rest: str) -> str:
    rest = rest.strip()
    using = ""
    m = re.search(r"USING (?:COVERING )?INDEX (\S+)(?: \((.*)\))?", rest)
    if "INTEGER PRIMARY KEY" in rest:
        cond = re.search(r"\((.*)\)", rest)
        using = "by its integer primary key" + (f" ({cond.group(1)})" if cond else "")
    elif "AUTOMATIC" in rest:
        cond = re.search(r"\((.*)\)", rest)
        using = "through a temporary index" + (f" on ({cond.group(1)})" if cond else "")
    elif m:
        using = f"through index {m.group(1)}" + (f" on ({m.group(2)})" if m.group(2) else "")
    if kind == "SEARCH":
        return f"Find the matching rows in the {table} table {using or 'by key lookup'}, skipping rows that fail the conditions."
    return f"Read the {table} table row by row {using}, keeping only rows that satisfy the conditions.".replace("  ", " ")


def explain_to_narrative(db, sql: str, catalog: SchemaCatalog) -> PlanNarrative:
    nodes = query_plan(db, sql)
    aliases, _ = _table_refs(tokenize(sql), catalog)
    prep = list(PREPARATION_BOILERPLATE)
    matching: list[str] = []
    operation: list[str] = []
    seen_tables: list[str] = []
    scans_so_far = 0

    for node in nodes:
        detail = node.detail.strip()
        m = _ACCESS_RE.match(detail)
        if m and m.group(2) != "CONSTANT":
            kind, name, alias, rest = m.group(1), m.group(2), m.group(3), m.group(4) or ""
            table = aliases.get(name.lower()) or aliases.get((alias or "").lower())
            if table is None and catalog.table(name) is not None:
                table = catalog.table(name).name
            if table is None:
                operation.append(f"Read the intermediate result {name} produced by an earlier step.")
                continue
            if table not in seen_tables:
                seen_tables.append(table)
            full_scan = kind == "SCAN" and "INDEX" not in rest
            if full_scan and scans_so_far == 0:
                prep.append(f"Open the {table} table and read every row, checking the filter conditions on each.")
            else:
                matching.append(_describe_access(kind, table, rest))
            scans_so_far += 1
        elif detail.startswith("SCAN CONSTANT ROW"):
            operation.append("Produce a constant row.")
        elif detail.startswith("USE TEMP B-TREE FOR"):
            what = detail[len("USE TEMP B-TREE FOR "):].lower()
            verb = {"order by": "Sort the rows", "group by": "Group the rows", "distinct": "Remove duplicate rows"}
            head = next((v for k, v in verb.items() if what.startswith(k)), "Organize the rows")
            operation.append(f"{head} using a temporary b-tree ({what}).")
        elif "SUBQUERY" in detail and ("SCALAR" in detail or "LIST" in detail or "CORRELATED" in detail):
            operation.append(f"Evaluate the {detail.lower()} and use its value in the outer query.")
        elif detail.startswith(("CO-ROUTINE", "MATERIALIZE")):
            operation.append(f"Compute the subquery {detail.split(None, 1)[-1]} as an intermediate result.")
        elif detail.startswith(("COMPOUND QUERY", "LEFT-MOST SUBQUERY")) or detail.startswith(
                ("UNION", "INTERSECT", "EXCEPT")):
            operation.append(f"Combine the result sets ({detail.lower()}).")
        elif detail.startswith("BLOOM FILTER"):
            operation.append(f"Build a bloom filter to skip non-matching rows ({detail[len('BLOOM FILTER ON '):]}).")
        else:
            operation.append(f"Perform the engine step: {detail}.")

    return PlanNarrative(tuple(prep), tuple(matching), tuple(operation), DELIVERY_BOILERPLATE, tuple(seen_tables))
