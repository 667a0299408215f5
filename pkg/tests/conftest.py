import hashlib
import sqlite3
from pathlib import Path

import pytest

from multipath_sql.execution import Database
from multipath_sql.registry import DatabaseRegistry
from multipath_sql.schema import introspect_database

SHOP = """
CREATE TABLE customers (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    city TEXT,
    segment TEXT
);
CREATE TABLE orders (
    id INTEGER PRIMARY KEY,
    customer_id INTEGER REFERENCES customers(id),
    amount REAL,
    status TEXT,
    placed TEXT
);
CREATE TABLE products (
    sku TEXT PRIMARY KEY,
    title TEXT,
    price REAL
);
INSERT INTO customers VALUES
    (1, 'Alice Smith', 'Albany', 'retail'),
    (2, 'Bob Jones', 'Berkeley', 'wholesale'),
    (3, 'Carol White', 'Alameda', 'retail'),
    (4, 'Dan Brown', 'Albany', 'wholesale'),
    (5, 'Eve Black', 'Oakland', NULL);
INSERT INTO orders VALUES
    (1, 1, 10.5, 'shipped', '2023-01-05'),
    (2, 1, 20.25, 'pending', '2023-02-11'),
    (3, 2, 100.0, 'shipped', '2023-02-14'),
    (4, 3, 7.75, 'cancelled', '2023-03-01'),
    (5, 4, 55.5, 'shipped', '2023-03-09'),
    (6, 4, 12.0, 'shipped', '2023-04-20'),
    (7, 5, 3.3, 'pending', '2023-05-02');
INSERT INTO products VALUES
    ('A-1', 'Desk Lamp', 19.99),
    ('B-2', 'Office Chair', 149.0),
    ('C-3', 'Paper Tray', 4.5);
"""

SCHOOL = """
CREATE TABLE students (id INTEGER PRIMARY KEY, name TEXT, grade INTEGER);
CREATE TABLE courses (code TEXT PRIMARY KEY, title TEXT);
CREATE TABLE enrollments (
    student_id INTEGER REFERENCES students(id),
    course_code TEXT REFERENCES courses(code),
    score REAL,
    PRIMARY KEY (student_id, course_code)
);
INSERT INTO students VALUES (1, 'Ana', 9), (2, 'Ben', 10), (3, 'Cleo', 9), (4, 'Dev', 11);
INSERT INTO courses VALUES ('MATH1', 'Algebra'), ('HIST2', 'World History'), ('BIO1', 'Biology');
INSERT INTO enrollments VALUES
    (1, 'MATH1', 91.5), (1, 'BIO1', 78.0), (2, 'MATH1', 65.0),
    (3, 'HIST2', 88.0), (4, 'MATH1', 72.25), (4, 'HIST2', 95.0);
"""

RESTAURANT = """
CREATE TABLE generalinfo (
    id_restaurant INTEGER PRIMARY KEY,
    label TEXT,
    food_type TEXT,
    city TEXT,
    review REAL
);
CREATE TABLE location (
    id_restaurant INTEGER PRIMARY KEY REFERENCES generalinfo(id_restaurant),
    street_num INTEGER,
    street_name TEXT,
    city TEXT
);
INSERT INTO generalinfo VALUES
    (1, 'thai spice', 'thai', 'albany', 3.8),
    (2, 'bangkok bowl', 'thai', 'albany', 3.2),
    (3, 'golden dragon', 'chinese', 'albany', 2.9),
    (4, 'siam garden', 'thai', 'berkeley', 4.1),
    (5, 'pasta place', 'italian', 'oakland', 3.5);
INSERT INTO location VALUES
    (1, 1100, 'san pablo ave', 'albany'),
    (2, 950, 'solano ave', 'albany'),
    (3, 1200, 'san pablo ave', 'albany'),
    (4, 2300, 'telegraph ave', 'berkeley'),
    (5, 40, 'broadway', 'oakland');
"""

BANK = """
CREATE TABLE district (district_id INTEGER PRIMARY KEY, A2 TEXT, A11 INTEGER);
CREATE TABLE client (
    client_id INTEGER PRIMARY KEY,
    gender TEXT,
    birth_date DATE,
    district_id INTEGER REFERENCES district(district_id)
);
INSERT INTO district VALUES (1, 'Prague', 12541), (2, 'Brno', 8507), (3, 'Kladno', 9650);
INSERT INTO client VALUES
    (1, 'F', '1970-12-13', 1), (2, 'M', '1945-02-04', 2), (3, 'F', '1940-10-09', 2),
    (4, 'M', '1956-12-01', 3), (5, 'F', '1960-07-03', 2);
"""

SCHOOLS = """
CREATE TABLE schools (CDSCode TEXT PRIMARY KEY, School TEXT, City TEXT, County TEXT);
CREATE TABLE satscores (cds TEXT PRIMARY KEY REFERENCES schools(CDSCode), AvgScrMath INTEGER);
INSERT INTO schools VALUES
    ('01', 'Fresno High', 'Fresno', 'Fresno'),
    ('02', 'Clovis West', 'Clovis', 'Fresno'),
    ('03', 'Oakland Tech', 'Oakland', 'Alameda');
INSERT INTO satscores VALUES ('01', 480), ('02', 560), ('03', 510);
"""

FIXTURES = {"shop": SHOP, "school": SCHOOL, "restaurant": RESTAURANT, "bank": BANK, "schools": SCHOOLS}


def make_db(path: Path, script: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.executescript(script)
    conn.commit()
    conn.close()
    return path


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="session")
def db_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("dbs")
    for name, script in FIXTURES.items():
        make_db(root / name / f"{name}.sqlite", script)
    return root


@pytest.fixture(scope="session")
def registry(db_root):
    return DatabaseRegistry(db_root)


@pytest.fixture(scope="session")
def shop_path(db_root):
    return db_root / "shop" / "shop.sqlite"


@pytest.fixture(scope="session")
def shop_db(shop_path):
    return Database(shop_path, "shop")


@pytest.fixture(scope="session")
def shop_catalog(shop_path):
    return introspect_database(shop_path, "shop")


@pytest.fixture(scope="session")
def school_db(db_root):
    return Database(db_root / "school" / "school.sqlite", "school")


@pytest.fixture(scope="session")
def school_catalog(db_root):
    return introspect_database(db_root / "school" / "school.sqlite", "school")


def member(i, rows=None, generator=None, sql=None):
    """A (candidate, outcome) pair; ``rows=None`` gives an execution error."""
    from multipath_sql.execution import ExecutionOutcome
    from multipath_sql.models import CandidateQuery, GeneratorKind
    cand = CandidateQuery(i, sql or f"SELECT {i}", generator or GeneratorKind.DIVIDE_CONQUER)
    out = ExecutionOutcome.error("no such column: x") if rows is None else ExecutionOutcome.ok(rows)
    return cand, out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
