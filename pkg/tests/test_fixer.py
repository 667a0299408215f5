import pytest

from multipath_sql.backends import MockBackend
from multipath_sql.errors import BackendError
from multipath_sql.execution import Status
from multipath_sql.fixer import FixerConfig, build_fixer_prompt, fix_candidate, fix_pool
from multipath_sql.models import CandidateQuery, GeneratorKind, QuestionContext

CTX = QuestionContext("How many orders were shipped?", "shop", "shipped refers to status = 'shipped'")
GOOD = "SELECT COUNT(*) FROM orders WHERE status = 'shipped'"


def cand(i, sql):
    return CandidateQuery(i, sql, GeneratorKind.QUERY_PLAN)


def test_healthy_candidate_untouched(shop_db, shop_catalog):
    llm = MockBackend()
    c = cand(0, GOOD)
    fixed, out = fix_candidate(c, CTX, shop_catalog, shop_db, llm)
    assert fixed is c and fixed.repair_count == 0 and out.rows == ((4,),)
    assert llm.calls == []


def test_beta_zero_never_loops(shop_db, shop_catalog):
    llm = MockBackend(default=f"Final Answer: {GOOD}")
    fixed, out = fix_candidate(cand(0, "SELEC"), CTX, shop_catalog, shop_db, llm, FixerConfig(beta=0))
    assert fixed.repair_count == 0 and out.status is Status.SQL_ERROR and llm.calls == []
    with pytest.raises(ValueError):
        FixerConfig(beta=-1)


def test_two_step_repair(shop_db, shop_catalog):
    llm = MockBackend(["Final Answer: SELECT COUNT(*) FROM order WHERE status = 'shipped'", f"Final Answer: {GOOD}"])
    fixed, out = fix_candidate(cand(0, "SELECT COUNT(*) FROM ordrs"), CTX, shop_catalog, shop_db, llm)
    assert fixed.repair_count == 2 and out.is_ok and out.rows == ((4,),)
    assert "no such table: ordrs" in llm.calls[0][0]
    assert "FROM order WHERE" in llm.calls[1][0]


def test_prompt_embeds_everything(shop_db, shop_catalog):
    out = shop_db.execute("SELECT nope FROM orders")
    p = build_fixer_prompt(CTX, shop_catalog, "SELECT nope FROM orders", out)
    for part in (CTX.question, CTX.hint, "SELECT nope FROM orders", "no such column", "The execution result",
                 "CREATE TABLE"):
        assert part in p


def test_empty_result_repaired_and_kept_when_unfixable(shop_db, shop_catalog):
    empty = "SELECT COUNT(*) FROM orders WHERE status = 'Shipped' GROUP BY status"
    llm = MockBackend(["Final Answer: SELECT bad syntax here", "nothing useful", "Final Answer: SELEC"])
    fixed, out = fix_candidate(cand(0, empty), CTX, shop_catalog, shop_db, llm)
    assert fixed.sql == empty and fixed.repair_count == 0 and out.is_empty
    assert len(llm.calls) == 3
    kept, _ = fix_candidate(cand(0, empty), CTX, shop_catalog, shop_db, MockBackend(),
                            FixerConfig(treat_empty_as_failure=False))
    assert kept.repair_count == 0


def test_last_executable_revision_preferred(shop_db, shop_catalog):
    llm = MockBackend(["Final Answer: SELECT id FROM orders WHERE status = 'lost'", "Final Answer: SELEC x"])
    fixed, out = fix_candidate(cand(0, "SELEC"), CTX, shop_catalog, shop_db, llm, FixerConfig(beta=2))
    assert fixed.repair_count == 1 and out.is_empty


def test_backend_failure_returns_best_so_far(shop_db, shop_catalog):
    llm = MockBackend(["Final Answer: SELECT id FROM orders WHERE 0", BackendError("gone")])
    fixed, out = fix_candidate(cand(0, "SELEC"), CTX, shop_catalog, shop_db, llm)
    assert "fixer_backend_error" in fixed.flags and fixed.repair_count == 1 and out.is_ok


def test_pool_all_ok(shop_db, shop_catalog):
    pool = [cand(i, f"SELECT {i + 1}") for i in range(21)]
    llm = MockBackend()
    out = fix_pool(pool, CTX, shop_catalog, shop_db, llm)
    assert [c for c, _ in out] == pool and all(c.repair_count == 0 for c, _ in out) and not llm.calls


def test_pool_repairs_only_broken_member(shop_db, shop_catalog):
    pool = [cand(0, GOOD), cand(1, "SELECT COUNT(*) FROM ordrs"), cand(2, "SELECT 5")]
    llm = MockBackend(default=f"Final Answer: {GOOD}")
    out = fix_pool(pool, CTX, shop_catalog, shop_db, llm, FixerConfig(max_workers=3))
    assert [c.repair_count for c, _ in out] == [0, 1, 0]
    assert out[0][0] is pool[0] and out[2][0] is pool[2]


def test_call_budget(shop_db, shop_catalog):
    pool = [cand(i, "SELEC") for i in range(4)]
    llm = MockBackend(default="Final Answer: SELECT nope FROM orders")
    out = fix_pool(pool, CTX, shop_catalog, shop_db, llm, FixerConfig(beta=3))
    assert len(llm.calls) <= 3 * len(pool)
    assert all(c.repair_count <= 3 for c, _ in out)
