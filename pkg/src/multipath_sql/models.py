"""Value types passed between pipeline stages."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .schema import ColumnSelection


class GeneratorKind(str, enum.Enum):
    DIVIDE_CONQUER = "DivideConquer"
    QUERY_PLAN = "QueryPlan"
    ONLINE_SYNTHETIC = "OnlineSynthetic"

    @property
    def short(self) -> str:
        return {"DivideConquer": "DC", "QueryPlan": "QP", "OnlineSynthetic": "OS"}[self.value]


GENERATOR_ORDER = (GeneratorKind.DIVIDE_CONQUER, GeneratorKind.QUERY_PLAN, GeneratorKind.ONLINE_SYNTHETIC)


@dataclass(frozen=True)
class RetrievedValue:
    table: str
    column: str
    value: str
    edit_sim: float
    embed_sim: float
    score: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class QuestionContext:
    question: str
    db_id: str
    hint: str | None = None
    retrieved_values: tuple[RetrievedValue, ...] = ()
    column_selection: ColumnSelection | None = None

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ValueError("question must be non-empty")

    def with_values(self, values) -> "QuestionContext":
        return replace(self, retrieved_values=tuple(values))

    def with_selection(self, selection: ColumnSelection | None) -> "QuestionContext":
        return replace(self, column_selection=selection)


@dataclass(frozen=True)
class CandidateQuery:
    id: int
    sql: str
    generator: GeneratorKind
    reasoning: str = ""
    temperature: float = 0.0
    shuffle_seed: int = 0
    repair_count: int = 0
    flags: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.sql.strip():
            raise ValueError("candidate SQL must be non-empty")

    def flagged(self, flag: str) -> "CandidateQuery":
        return replace(self, flags=self.flags + (flag,))
