import json

import pytest

from multipath_sql.backends import MockBackend
from multipath_sql.errors import BackendError
from multipath_sql.execution import ExecutionOutcome, ResultCluster, results_equal
from multipath_sql.models import CandidateQuery, GeneratorKind, QuestionContext
from multipath_sql.schema import render_schema, schema_union
from multipath_sql.selection import (COMPARATOR, EXECUTION_MATCH, AdversarialComparator, ExportRun,
                                     OracleComparator, RemoteComparator, ScoreBoard, SimulatedComparator, Winner,
                                     adversarial_pick, build_ranker_prompt, consistency_pick,
                                     export_pair_dataset, oracle_pick, pair_uniform, parse_ranking, ranker_pick,
                                     regeneration_directives, run_tournament, self_consistency_pick, write_pairs)

from conftest import member

CTX = QuestionContext("Which value?", "shop")
GOLD = ExecutionOutcome.ok([(0,)])


def hand_pool():
    return [member(0, [(0,)]), member(1, [(0,)]), member(2, [(1,)]), member(3, [(2,)])]


def test_pool_of_one():
    winner, board = run_tournament([member(4, [(1,)])], CTX, None, OracleComparator(GOLD))
    assert winner.id == 4 and board.scores == {4: 0} and board.comparisons == []
    with pytest.raises(ValueError):
        run_tournament([], CTX, None, OracleComparator(GOLD))


def test_pool_of_two_matching():
    winner, board = run_tournament([member(0, [(1,)]), member(1, [(1,)])], CTX, None, OracleComparator(GOLD))
    assert board.scores == {0: 1, 1: 1} and winner.id == 0
    assert {c.mechanism for c in board.comparisons} == {EXECUTION_MATCH}


def test_hand_worked_example():
    winner, board = run_tournament(hand_pool(), CTX, None, OracleComparator(GOLD))
    assert [board.scores[i] for i in range(4)] == [5, 5, 1, 1] and winner.id == 0
    assert board.total == 12 and len(board.comparisons) == 12
    assert [(c.i, c.j) for c in board.comparisons] == [(i, j) for i in range(4) for j in range(4) if i != j]


def test_adversarial_on_hand_pool():
    winner, board = run_tournament(hand_pool(), CTX, None, AdversarialComparator(GOLD))
    assert winner.id in (2, 3)


def test_scoreboard_roundtrip():
    _, board = run_tournament(hand_pool(), CTX, None, OracleComparator(GOLD))
    assert ScoreBoard.from_dict(json.loads(json.dumps(board.to_dict()))) == board


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        run_tournament([member(0, [(1,)]), member(0, [(2,)])], CTX, None, OracleComparator(GOLD))


def test_remote_comparator_prompt_and_parsing(shop_catalog):
    a = (CandidateQuery(0, "SELECT name FROM customers", GeneratorKind.DIVIDE_CONQUER),
         ExecutionOutcome.ok([("Alice",)]))
    b = (CandidateQuery(1, "SELECT title FROM products", GeneratorKind.QUERY_PLAN), ExecutionOutcome.ok([("Desk",)]))
    llm = MockBackend([" B \n", "Candidate A is right"])
    winner, board = run_tournament([a, b], CTX, shop_catalog, RemoteComparator(llm, shop_catalog))
    first, second = board.comparisons
    assert first.winner is Winner.B and first.mechanism == COMPARATOR
    assert second.winner is Winner.A and "comparator_parse_failure" in second.flags
    assert board.scores == {0: 0, 1: 2} and winner.id == 1
    prompt = llm.calls[0][0]
    union = schema_union(shop_catalog, a[0].sql, b[0].sql)
    assert render_schema(shop_catalog, union.as_selection()) in prompt
    assert "orders" not in prompt and a[0].sql in prompt and "Desk" in prompt


def test_comparator_transport_failure_defaults_to_a(shop_catalog):
    llm = MockBackend([BackendError("down"), "A"])
    _, board = run_tournament([member(0, [(1,)]), member(1, [(2,)])], CTX, shop_catalog,
                              RemoteComparator(llm, shop_catalog))
    assert board.comparisons[0].winner is Winner.A and "comparator_error" in board.comparisons[0].flags
    assert board.scores == {0: 1, 1: 1}


def test_concurrent_tournament_matches_sequential():
    pool = [member(i, [(i % 3,)]) for i in range(7)]
    comp = SimulatedComparator(GOLD, 0.7, seed=5)
    a = run_tournament(pool, CTX, None, comp)
    b = run_tournament(list(reversed(pool)), CTX, None, comp, max_workers=8)
    assert a[0] == b[0] and a[1] == b[1]


def test_simulated_comparator_extremes():
    right, wrong = member(0, [(0,)]), member(1, [(9,)])
    assert SimulatedComparator(GOLD, 1.0, 3).compare(CTX, None, wrong, right) is Winner.B
    assert SimulatedComparator(GOLD, 0.0, 3).compare(CTX, None, wrong, right) is Winner.A
    with pytest.raises(ValueError):
        SimulatedComparator(GOLD, 1.5)
    us = [pair_uniform(11, i, j) for i in range(30) for j in range(30)]
    assert all(0 <= u < 1 for u in us) and 0.4 < sum(us) / len(us) < 0.6
    assert pair_uniform(11, 2, 3) != pair_uniform(11, 3, 2)


def test_self_consistency_examples():
    pool = [member(i, [(1,)]) for i in range(4)]
    assert self_consistency_pick([ResultCluster(GOLD, (1, 2, 3)), ResultCluster(GOLD, (0,))], pool).id == 1
    assert self_consistency_pick([ResultCluster(GOLD, (0, 1, 2, 3))], pool).id == 0
    tie = [ResultCluster(GOLD, (1, 2)), ResultCluster(GOLD, (0, 3))]
    assert self_consistency_pick(tie, pool).id == 0
    failing = [member(3), member(1)]
    assert self_consistency_pick([], failing).id == 1
    assert consistency_pick(failing).id == 1


def test_oracle_and_adversarial_picks():
    pool = [member(0), member(1, [(5,)]), member(2, [(0,)])]
    assert oracle_pick(pool, GOLD).id == 2
    assert adversarial_pick(pool, GOLD).id == 1
    assert adversarial_pick([member(0), member(1, [(0,)])], GOLD).id == 1
    assert oracle_pick([member(0), member(1)], GOLD).id == 0


def test_ranker_pick(shop_catalog):
    pool = [member(i, [(i,)]) for i in (1, 2, 3)]
    assert ranker_pick(pool, CTX, shop_catalog, MockBackend(default="Ranking: 2, 1, 3")).id == 2
    assert ranker_pick(pool, CTX, shop_catalog, MockBackend(default="2,1,3")).id == 2
    fallback = ranker_pick(pool, CTX, shop_catalog, MockBackend(default="I like them all"))
    assert fallback.id == consistency_pick(pool).id and "ranker_fallback" in fallback.flags
    down = ranker_pick(pool, CTX, shop_catalog, MockBackend([BackendError("x")]))
    assert "ranker_backend_error" in down.flags


def test_ranker_21_candidates(shop_catalog):
    pool = [member(i, [(i % 4,)], sql=f"SELECT {i} AS cand") for i in range(21)]
    order = [17, 4, 9] + [i for i in range(21) if i not in (17, 4, 9)]
    llm = MockBackend(default="Reasoning about candidates.\nRanking: " + ", ".join(map(str, order)))
    assert ranker_pick(pool, CTX, shop_catalog, llm).id == 17
    prompt = llm.calls[0][0]
    assert all(f"SELECT {i} AS cand" in prompt for i in range(21))
    assert prompt == build_ranker_prompt(pool, CTX, shop_catalog)
    assert parse_ranking("Ranking: 99, 17") == [99, 17]
    assert ranker_pick(pool, CTX, shop_catalog, MockBackend(default="Ranking: 99, 17, 3")).id == 17


GOLD_SQL = "SELECT name FROM customers WHERE city = 'Albany'"


def shop_run(shop_db, sqls, question="Who lives in Albany?"):
    pool = tuple((CandidateQuery(i, s, GeneratorKind.DIVIDE_CONQUER), shop_db.execute(s)) for i, s in enumerate(sqls))
    return ExportRun(QuestionContext(question, "shop", "Albany is a city"), pool, GOLD_SQL)


def three_runs(shop_db):
    return [
        shop_run(shop_db, [GOLD_SQL, "SELECT name FROM customers WHERE city = 'Albany' ORDER BY id DESC",
                           "SELECT name FROM customers"]),
        shop_run(shop_db, [GOLD_SQL, "SELECT city FROM customers", "SELECT nope FROM customers",
                           "SELECT name FROM customers WHERE segment = 'retail'"], "Albany residents?"),
        shop_run(shop_db, [GOLD_SQL, GOLD_SQL + " AND 1"], "Names in Albany?"),
    ]


def test_pair_counts(shop_db, registry):
    runs = three_runs(shop_db)
    assert len(export_pair_dataset(runs[:1], registry)) == 2
    assert export_pair_dataset(runs[2:], registry) == []
    assert len(export_pair_dataset(runs, registry)) == 4


def test_pair_labels_verified_by_execution(shop_db, registry):
    pairs = export_pair_dataset(three_runs(shop_db), registry, seed=1)
    gold = shop_db.execute(GOLD_SQL)
    assert {p.label for p in pairs} == {Winner.A, Winner.B}
    for p in pairs:
        a_ok = results_equal(shop_db.execute(p.candidate_a), gold)
        b_ok = results_equal(shop_db.execute(p.candidate_b), gold)
        assert (a_ok, b_ok) == ((True, False) if p.label is Winner.A else (False, True))
        assert "customers" in p.schema and "products" not in p.schema


def test_pair_file_is_byte_identical(shop_db, registry, tmp_path):
    write_pairs(export_pair_dataset(three_runs(shop_db), registry, seed=42), tmp_path / "a.jsonl")
    write_pairs(export_pair_dataset(three_runs(shop_db), registry, seed=42), tmp_path / "b.jsonl")
    raw = (tmp_path / "a.jsonl").read_bytes()
    assert raw == (tmp_path / "b.jsonl").read_bytes()
    rec = json.loads(raw.splitlines()[0])
    assert list(rec) == ["question", "hint", "schema", "candidate_a", "candidate_b", "result_a", "result_b", "label"]


def test_regeneration_directive(shop_db, registry):
    runs = [shop_run(shop_db, ["SELECT city FROM customers"]), *three_runs(shop_db)]
    out = regeneration_directives(runs, registry)
    assert len(out) == 1 and GOLD_SQL in out[0].hint and out[0].hint.startswith("Albany is a city")
    assert export_pair_dataset(runs[:1], registry) == []
