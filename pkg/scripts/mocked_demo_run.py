"""End-to-end run on the five-question scripted benchmark from the test suite, no network.

Builds the databases, benchmark file and mock backend script under --workdir, then runs
the ``run``, ``bounds`` and ``export-pairs`` commands against them.

    python3 scripts/mocked_demo_run.py --workdir runs/demo
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from mockbench import N_PER_GENERATOR, write_bench  # noqa: E402

from multipath_sql.cli import main as cli  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", type=Path, default=Path("runs/demo"))
    ap.add_argument("--comparator", default="remote", choices=["remote", "oracle", "adversarial", "simulated"])
    args = ap.parse_args()

    args.workdir.mkdir(parents=True, exist_ok=True)
    db_root, bench, script = write_bench(args.workdir)
    out = args.workdir / "run"
    code = cli(["run", str(bench), "--db-root", str(db_root), "--mock-script", str(script),
                "--n-per-generator", str(N_PER_GENERATOR), "--comparator", args.comparator,
                "--out", str(out), "--no-resume"])
    if code:
        return code
    return cli(["export-pairs", str(out / "results.jsonl"), "--db-root", str(db_root),
                "--out", str(args.workdir / "pairs.jsonl"), "--directives", str(args.workdir / "regen.jsonl")])


if __name__ == "__main__":
    sys.exit(main())
