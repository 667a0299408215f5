"""Sweep comparator accuracy and compare the tournament with self-consistency and the bounds.

    python3 scripts/simulate_selection_sweep.py --trials 1000 --out runs/sweep.json
"""

import argparse
import json
import time
from dataclasses import asdict
from pathlib import Path

from multipath_sql.harness import PoolModel, simulate_selection


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--p", type=float, nargs="+", default=[0.5, 0.6, 0.71, 0.8, 0.9, 1.0])
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--per-generator", type=int, default=7)
    ap.add_argument("--correctness", type=float, default=0.55, help="mean correctness rate of every generator")
    ap.add_argument("--spread", type=float, default=0.45)
    ap.add_argument("--error-rate", type=float, default=0.0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    model = PoolModel(n_per_generator=args.per_generator, correctness=(args.correctness,) * 3, spread=args.spread,
                      error_rate=args.error_rate)
    rows = []
    print(f"{'p':>5}  {'tournament':>17}  {'consistency':>11}  {'oracle':>7}  {'adversarial':>11}  {'maj.wrong':>9}")
    for p in args.p:
        t0 = time.perf_counter()
        st = simulate_selection(model, p, args.trials, args.seed)
        m, se = st.mean, st.stderr
        print(f"{p:>5.2f}  {m['tournament']:>8.3f} +/- {se['tournament']:.3f}  {m['consistency']:>11.3f}  "
              f"{m['oracle']:>7.3f}  {m['adversarial']:>11.3f}  {st.majority_incorrect:>9.3f}"
              f"   ({time.perf_counter() - t0:.1f}s)")
        rows.append(st.to_dict())
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps({"pool_model": asdict(model), "seed": args.seed, "rows": rows}, indent=2))


if __name__ == "__main__":
    main()
