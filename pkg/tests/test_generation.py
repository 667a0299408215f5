import logging

import pytest

from multipath_sql.backends import MockBackend
from multipath_sql.errors import BackendError, GenerationError, ParseError, SyntheticGenerationError
from multipath_sql.generation import (FEATURES, FILTERED, ExampleSet, GenerationConfig, SyntheticExample,
                                      SyntheticGenSpec, build_dc_prompt, build_os_prompt, build_qp_prompt,
                                      generate_candidates, generate_synthetic_examples, order_examples,
                                      parse_example_pairs, parse_sql)
from multipath_sql.models import GeneratorKind, QuestionContext, RetrievedValue
from multipath_sql.schema import ColumnSelection, render_schema

DC_COMPLETION = """**1. Divide and Conquer:**
* **Main Question:** Which customer placed the largest order?
* **Sub-question 1:** largest order
  * **SQL:** SELECT MAX(amount) FROM orders

**2. Assembling SQL:**
SELECT customer_id FROM orders ORDER BY amount DESC LIMIT 1

**3. Simplification and Optimization:**
Join to customers to get the name.

**Final Optimized SQL Query:**
SELECT T1.name FROM customers AS T1 INNER JOIN orders AS T2 ON T1.id = T2.customer_id ORDER BY T2.amount DESC LIMIT 1;
"""


def pairs_text(n, prefix, broken=()):
    out = []
    for k in range(n):
        if k in broken:
            out.append(f'"input": "Broken question {k}"\n"output": ""')
        else:
            out.append(f'"input": "{prefix} question {k}?"\n"output": "SELECT {k} FROM orders"')
    return "\n\n".join(out)


@pytest.fixture
def ctx():
    values = (RetrievedValue("customers", "city", "Albany", 1, 1, 1), RetrievedValue("orders", "status", "shipped", 1, 1, 1))
    return QuestionContext("Which customer in Albany has shipped orders?", "shop", "shipped refers to status",
                           values)


def test_dc_prompt_contents(ctx, shop_catalog):
    p = build_dc_prompt(ctx, shop_catalog, 3)
    for header in ("Divide and Conquer", "Assembling SQL", "Simplification and Optimization"):
        assert header in p
    assert p == build_dc_prompt(ctx, shop_catalog, 3)
    assert "Albany" in p and "shipped" in p
    assert p.rstrip().endswith("**1. Divide and Conquer:**")
    assert ctx.question in p and ctx.hint in p


def test_qp_prompt_contents(ctx, shop_catalog):
    p = build_qp_prompt(ctx, shop_catalog, 0)
    assert "Query Plan" in p and "Delivering the Result" in p
    assert p == build_qp_prompt(ctx, shop_catalog, 0)


def test_shuffle_changes_only_schema(ctx, shop_catalog):
    a, b = build_qp_prompt(ctx, shop_catalog, 1), build_qp_prompt(ctx, shop_catalog, 2)
    sa, sb = render_schema(shop_catalog, None, 1), render_schema(shop_catalog, None, 2)
    assert sa in a and sb in b
    assert a.replace(sa, "<S>") == b.replace(sb, "<S>")
    assert sorted(sa.splitlines()) == sorted(sb.splitlines())


def test_feature_guideline_defaults():
    spec = SyntheticGenSpec()
    assert ("equality and non-equality predicates, single table and multi-table JOIN, nested JOIN, "
            "ORDER BY and LIMIT, GROUP BY and HAVING") in spec.guideline_f
    assert "various aggregation functions" in spec.guideline_f
    assert spec.n_f == spec.n_t == 5
    with pytest.raises(ValueError):
        SyntheticGenSpec(n_f=0, n_t=0)
    with pytest.raises(ValueError):
        SyntheticGenSpec(n_f=-1)


def test_synthetic_examples_union(ctx, shop_catalog):
    llm = MockBackend([pairs_text(3, "F"), pairs_text(3, "T")])
    ex = generate_synthetic_examples(ctx, shop_catalog, SyntheticGenSpec(3, 3), llm)
    assert len(ex) == 6
    assert [p.origin for p in ex.pairs] == [FEATURES] * 3 + [FILTERED] * 3
    assert len(llm.calls) == 2


def test_synthetic_filtered_call_uses_selection(ctx, shop_catalog):
    sel = ColumnSelection.build(shop_catalog, [("orders", "amount")])
    llm = MockBackend([pairs_text(1, "F"), pairs_text(1, "T")])
    generate_synthetic_examples(ctx.with_selection(sel), shop_catalog, SyntheticGenSpec(1, 1), llm)
    assert "customers" in llm.calls[0][0]
    assert render_schema(shop_catalog, sel) in llm.calls[1][0]


def test_synthetic_malformed_pair_dropped(ctx, shop_catalog, caplog):
    llm = MockBackend([pairs_text(5, "F", broken={2}), BackendError("down")])
    with caplog.at_level(logging.WARNING):
        ex = generate_synthetic_examples(ctx, shop_catalog, SyntheticGenSpec(5, 5), llm)
    assert len(ex) == 4
    assert any("malformed" in r.message for r in caplog.records)


def test_synthetic_both_calls_fail(ctx, shop_catalog):
    with pytest.raises(SyntheticGenerationError):
        generate_synthetic_examples(ctx, shop_catalog, SyntheticGenSpec(), MockBackend([BackendError("x")] * 2))


def test_parse_example_pairs_handles_escapes():
    text = '"input": "Name the \\"best\\" one.\\n(Hints: none)"\n"output": "SELECT name FROM t WHERE x = \'a\';"'
    pairs, bad = parse_example_pairs(text, FEATURES)
    assert bad == 0 and pairs[0].question.startswith('Name the "best"') and pairs[0].sql.endswith("'a'")


def mixed(nf, nt):
    return ExampleSet(tuple(SyntheticExample(f"feature question {k}", "SELECT 1", FEATURES) for k in range(nf))
                      + tuple(SyntheticExample(f"filtered question {k}", "SELECT 2", FILTERED) for k in range(nt)))


def test_os_prompt_contains_examples(ctx, shop_catalog):
    ex = mixed(3, 3)
    p = build_os_prompt(ctx, shop_catalog, ex, 7)
    assert all(e.question in p for e in ex.pairs)
    empty = build_os_prompt(ctx, shop_catalog, ExampleSet(), 7)
    assert "question 0" not in empty and ctx.question in empty


def test_os_examples_are_mixed_at_seed_7():
    ex = mixed(3, 3)
    order = [e.origin for e in order_examples(ex, 7)]
    for origin in (FEATURES, FILTERED):
        count = order.count(origin)
        assert order[:count] != [origin] * count
    assert order_examples(ex, 7) == order_examples(ex, 7)


def test_parse_sql_marker():
    assert parse_sql(DC_COMPLETION) == ("SELECT T1.name FROM customers AS T1 INNER JOIN orders AS T2 "
                                        "ON T1.id = T2.customer_id ORDER BY T2.amount DESC LIMIT 1")


def test_parse_sql_fallbacks():
    assert parse_sql("SELECT 1") == "SELECT 1"
    two = "first\n```sql\nSELECT 1\n```\nthen\n```sql\nSELECT 2;\n```\n"
    assert parse_sql(two) == "SELECT 2"
    assert parse_sql("Final Answer: SELECT name FROM t WHERE a = ';'") == "SELECT name FROM t WHERE a = ';'"
    assert parse_sql("**Final Optimized SQL Query:**\n```sql\nSELECT 3\n```") == "SELECT 3"
    assert parse_sql("Reasoning here.\n\nWITH x AS (SELECT 1)\nSELECT * FROM x;") == "WITH x AS (SELECT 1)\nSELECT * FROM x"
    with pytest.raises(ParseError):
        parse_sql("I cannot answer that.")


def scripted(bad_kind=None):
    def handler(prompt, temperature):
        if "Create " in prompt and "examples" in prompt:
            return pairs_text(2, "S")
        if "Divide and Conquer" in prompt and "Query Plan" not in prompt:
            kind = "DC"
        elif "**Query Plan**" in prompt:
            kind = "QP"
        else:
            kind = "OS"
        if kind == bad_kind:
            return "no sql here"
        return f"**Final Optimized SQL Query:**\nSELECT '{kind}'"
    return MockBackend(handler=handler)


def test_generate_21_candidates(ctx, shop_catalog):
    cands = generate_candidates(ctx, shop_catalog, GenerationConfig(n_per_generator=7), scripted())
    assert len(cands) == 21 and [c.id for c in cands] == list(range(21))
    for kind in GeneratorKind:
        mine = [c for c in cands if c.generator is kind]
        assert len(mine) == 7 and len({c.shuffle_seed for c in mine}) == 7
        assert all(c.sql == f"SELECT '{kind.short}'" for c in mine)
    assert all(c.temperature == 0.5 for c in cands)


def test_generate_drops_unparseable(ctx, shop_catalog):
    cands = generate_candidates(ctx, shop_catalog, GenerationConfig(n_per_generator=1), scripted("QP"))
    assert [c.generator for c in cands] == [GeneratorKind.DIVIDE_CONQUER, GeneratorKind.ONLINE_SYNTHETIC]
    assert [c.id for c in cands] == [0, 1]


def test_generate_all_fail(ctx, shop_catalog):
    with pytest.raises(GenerationError):
        generate_candidates(ctx, shop_catalog, GenerationConfig(n_per_generator=1), MockBackend(default="nothing"))


def test_generate_is_reproducible_and_order_independent(ctx, shop_catalog):
    a = generate_candidates(ctx, shop_catalog, GenerationConfig(n_per_generator=3), scripted())
    b = generate_candidates(ctx, shop_catalog, GenerationConfig(n_per_generator=3, max_workers=4), scripted())
    assert a == b


def test_zero_example_os_prompt_flagged(ctx, shop_catalog):
    def handler(prompt, temperature):
        if "Create " in prompt and "examples" in prompt:
            raise BackendError("down")
        return "Final Answer: SELECT 1"
    cands = generate_candidates(ctx, shop_catalog, GenerationConfig(n_per_generator=1), MockBackend(handler=handler))
    os_cands = [c for c in cands if c.generator is GeneratorKind.ONLINE_SYNTHETIC]
    assert os_cands and "no_synthetic_examples" in os_cands[0].flags


def test_temperatures_accepted():
    assert GenerationConfig(temperature=0.5).temperature == 0.5
    assert GenerationConfig(temperature=1.8).temperature == 1.8
    with pytest.raises(ValueError):
        GenerationConfig(n_per_generator=0)
