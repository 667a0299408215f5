import sqlite3

import pytest

from multipath_sql.backends import MockBackend
from multipath_sql.errors import DatabaseReadError, EmptyDatabase, InvalidSelection
from multipath_sql.models import QuestionContext, RetrievedValue
from multipath_sql.schema import (ColumnInfo, ColumnSelection, ForeignKey, SchemaCatalog, TableInfo,
                                  extract_identifiers, introspect_database, parse_column_list, render_schema,
                                  schema_union, select_columns)
from multipath_sql.sqltext import statement_count, tokenize, write_keyword

from conftest import make_db


def test_single_table_readback(tmp_path):
    path = make_db(tmp_path / "t.sqlite", "CREATE TABLE t(a INTEGER PRIMARY KEY, b TEXT); INSERT INTO t VALUES (1,'x');")
    cat = introspect_database(path)
    assert [t.name for t in cat.tables] == ["t"]
    assert cat.tables[0].column_names == ["a", "b"]
    assert cat.tables[0].primary_key == ("a",)


def test_value_examples_capped_at_distinct_count(tmp_path):
    path = make_db(tmp_path / "v.sqlite", """
        CREATE TABLE v(id INTEGER PRIMARY KEY, two TEXT, many TEXT);
        INSERT INTO v VALUES (1,'a','p'),(2,'b','q'),(3,'a','r'),(4,NULL,'s'),(5,'b','t');
    """)
    conn = sqlite3.connect(path)
    distinct_two = {r[0] for r in conn.execute("SELECT DISTINCT two FROM v WHERE two IS NOT NULL")}
    conn.close()
    cols = {c.name: c for c in introspect_database(path).tables[0].columns}
    assert len(cols["two"].value_examples) == len(distinct_two) == 2
    assert set(cols["two"].value_examples) == distinct_two
    assert len(cols["many"].value_examples) == 3


def test_introspection_errors(tmp_path):
    with pytest.raises(DatabaseReadError):
        introspect_database(tmp_path / "missing.sqlite")
    with pytest.raises(EmptyDatabase):
        introspect_database(make_db(tmp_path / "empty.sqlite", "CREATE TEMP TABLE x(a);"))
    junk = tmp_path / "junk.sqlite"
    junk.write_bytes(b"not a database at all" * 100)
    with pytest.raises(OSError):
        introspect_database(junk)


def test_descriptions_from_csv(tmp_path):
    path = make_db(tmp_path / "d" / "d.sqlite", "CREATE TABLE people(id INTEGER PRIMARY KEY, yob INTEGER);")
    desc = tmp_path / "d" / "database_description"
    desc.mkdir()
    (desc / "people.csv").write_text(
        "original_column_name,column_name,column_description,data_format,value_description\n"
        "yob,year of birth,the year the person was born,integer,\n", encoding="utf-8")
    cat = introspect_database(path)
    assert "born" in cat.table("people").column("yob").description
    assert "born" in render_schema(cat)


def test_catalog_invariants():
    t = TableInfo("a", (ColumnInfo("x", "INT"),), ("x",))
    with pytest.raises(ValueError):
        SchemaCatalog("db", (t, TableInfo("A", (ColumnInfo("y", "INT"),))))
    with pytest.raises(ValueError):
        TableInfo("b", (ColumnInfo("x", "INT"), ColumnInfo("X", "INT")))
    with pytest.raises(ValueError):
        SchemaCatalog("db", (TableInfo("b", (ColumnInfo("x", "INT"),), (), (ForeignKey("x", "zz", "q"),)),))


def test_california_schools_style_catalog(db_root):
    cat = introspect_database(db_root / "schools" / "schools.sqlite")
    schools = cat.table("schools")
    assert schools.column("city") is not None and schools.column("county") is not None


def test_render_determinism_and_storage_order(shop_catalog):
    assert render_schema(shop_catalog, None, 5) == render_schema(shop_catalog, None, 5)
    plain = render_schema(shop_catalog)
    assert plain.index("customers") < plain.index("orders") < plain.index("products")
    block = plain.split("\n\n")[0].splitlines()
    assert block[1].strip().startswith('"id"') or block[1].strip().startswith("id")


def test_render_seeds_permute_lines(shop_catalog):
    a, b = render_schema(shop_catalog, None, 1), render_schema(shop_catalog, None, 2)
    assert sorted(a.splitlines()) == sorted(b.splitlines())
    assert sorted(a.splitlines()) == sorted(render_schema(shop_catalog).splitlines())


def test_render_keys_and_comments(shop_catalog):
    text = render_schema(shop_catalog)
    assert "PRIMARY KEY" in text and "FOREIGN KEY" in text and "REFERENCES" in text
    assert "-- example values:" in text
    assert "'Albany'" in text


def test_selection_closure_and_validation(shop_catalog):
    sel = ColumnSelection.build(shop_catalog, [("orders", "amount")])
    assert ("orders", "id") in sel.entries
    with pytest.raises(InvalidSelection):
        ColumnSelection.build(shop_catalog, [("orders", "nope")])
    with pytest.raises(InvalidSelection):
        render_schema(shop_catalog, ColumnSelection(frozenset({("orders", "amount")})))
    text = render_schema(shop_catalog, sel)
    assert "customers" not in text and "amount" in text and "status" not in text


def test_extract_identifiers_alias(tmp_path):
    cat = SchemaCatalog("x", (TableInfo("client", (ColumnInfo("client_id", "INT"), ColumnInfo("gender", "TEXT")),
                                        ("client_id",)),))
    assert extract_identifiers("SELECT T1.gender FROM client AS T1", cat) == {("client", "gender")}


def test_extract_identifiers_join_query(db_root):
    cat = introspect_database(db_root / "bank" / "bank.sqlite")
    sql = ("SELECT `T1`.`gender` FROM `client` AS `T1` INNER JOIN `district` AS `T2` "
           "ON `T1`.`district_id` = `T2`.`district_id` ORDER BY `T2`.`A11` ASC, `T1`.`birth_date` DESC NULLS LAST LIMIT 1")
    assert extract_identifiers(sql, cat) == {("client", "gender"), ("client", "district_id"),
                                             ("district", "district_id"), ("district", "A11"),
                                             ("client", "birth_date")}


def test_extract_identifiers_star_and_garbage(shop_catalog):
    assert extract_identifiers("SELECT * FROM products", shop_catalog) == {
        ("products", c) for c in shop_catalog.table("products").column_names}
    assert extract_identifiers("SELECT COUNT(*) FROM products", shop_catalog) == set()
    assert extract_identifiers("SELEC nonsense FROM ((( 'unterminated", shop_catalog) == set()


def test_schema_union_cases(shop_catalog, db_root):
    sql = "SELECT name FROM customers WHERE city = 'Albany'"
    assert schema_union(shop_catalog, sql, sql).entries == extract_identifiers(sql, shop_catalog) | {("customers", "id")}
    u = schema_union(shop_catalog, "SELECT title FROM products", "SELECT status FROM orders")
    assert u.entries == {("products", "title"), ("products", "sku"), ("orders", "status"), ("orders", "id")}
    schools = introspect_database(db_root / "schools" / "schools.sqlite")
    u = schema_union(schools, "SELECT * FROM schools WHERE City = 'Fresno'", "SELECT CDSCode FROM schools")
    assert {c for t, c in u.entries if t == "schools"} == set(schools.table("schools").column_names)


def test_parse_column_list(shop_catalog):
    got = parse_column_list("customers.city, `orders`.`amount`, ghost.col, orders.nope", shop_catalog)
    assert got == {("customers", "city"), ("orders", "amount")}


def test_select_columns_union_of_sources(db_root):
    cat = introspect_database(db_root / "schools" / "schools.sqlite")
    ctx = QuestionContext("Which schools are in Fresno?", "schools")
    rv = RetrievedValue("schools", "City", "Fresno", 1.0, 1.0, 1.0)
    llm = MockBackend(default="schools.County")
    sel = select_columns(ctx, cat, [rv], llm)
    assert {("schools", "City"), ("schools", "County"), ("schools", "CDSCode")} <= sel.entries
    sel.validate(cat)


def test_select_columns_fallback_and_exact(shop_catalog):
    ctx = QuestionContext("How much did Alice spend?", "shop")
    full = select_columns(ctx, shop_catalog, [], MockBackend(default="I am not sure."))
    assert full.entries == shop_catalog.all_entries()
    exact = select_columns(ctx, shop_catalog, [], MockBackend(default="orders.amount\ncustomers.name"))
    assert exact.entries == {("orders", "amount"), ("orders", "id"), ("customers", "name"), ("customers", "id")}


def test_tokenizer_and_write_detection():
    toks = tokenize("SELECT 'it''s', \"a b\" FROM t -- note\n WHERE x >= 1.5e3")
    assert [t.kind for t in toks][:4] == ["word", "string", "punct", "ident"]
    assert toks[1].text == "it's"
    assert write_keyword("SELECT replace(name, 'a', 'b') FROM t") is None
    assert write_keyword("REPLACE INTO t VALUES (1)") == "REPLACE"
    assert write_keyword("INSERT OR REPLACE INTO t VALUES (1)") == "INSERT"
    assert write_keyword("SELECT 'drop table t'") is None
    assert write_keyword("select * from t; drop table t") == "DROP"
    assert statement_count("SELECT 1; SELECT 2;") == 2
    assert statement_count("SELECT ';'") == 1
