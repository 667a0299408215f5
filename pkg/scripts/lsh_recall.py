"""One-edit lookup recall of the MinHash LSH value index, by value length.

    python3 scripts/lsh_recall.py --values 1000
"""

import argparse
import random
import string
import time

from multipath_sql.retrieval import IndexConfig, ValueIndex, ValueRecord

WORDS = ["street", "avenue", "north", "grand", "valley", "school", "district", "county", "river", "market", "union",
         "central", "park", "lake", "hill", "mission", "ocean", "pine", "oak", "maple", "station", "harbor", "bay",
         "bridge", "plaza"]


def random_word(rng, lo, hi):
    return "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(lo, hi)))


def random_name(rng, lo, hi):
    while True:
        v = " ".join(rng.choice(WORDS).capitalize() for _ in range(rng.randint(1, 5)))
        if lo <= len(v) <= hi:
            return v


def one_edit(rng, v):
    i, c = rng.randrange(len(v)), rng.choice(string.ascii_lowercase)
    op = rng.choice("sid")
    if op == "s":
        return v[:i] + c + v[i + 1:]
    if op == "i":
        return v[:i] + c + v[i:]
    return v[:i] + v[i + 1:]


def measure(values, rng, config):
    idx = ValueIndex(config)
    for v in values:
        idx.add(ValueRecord("t", "c", v))
    hits = 0
    for v in values:
        q = one_edit(rng, v)
        if q.strip():
            hits += any(r.value == v for r in idx.lookup(q))
    return hits / len(values)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--values", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bands", type=int, default=IndexConfig.bands)
    ap.add_argument("--rows", type=int, default=IndexConfig.rows_per_band)
    args = ap.parse_args()
    config = IndexConfig(signature_len=args.bands * args.rows, bands=args.bands, rows_per_band=args.rows)
    rng = random.Random(args.seed)
    corpora = {
        "random 4-8 chars": lambda: random_word(rng, 4, 8),
        "random 8-12 chars": lambda: random_word(rng, 8, 12),
        "names 10-40 chars": lambda: random_name(rng, 10, 40),
        "names 12-40 chars": lambda: random_name(rng, 12, 40),
    }
    for label, make in corpora.items():
        values = set()
        while len(values) < args.values:
            values.add(make())
        t0 = time.perf_counter()
        r = measure(sorted(values), rng, config)
        print(f"{label:<20} recall {r:.3f}   ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
