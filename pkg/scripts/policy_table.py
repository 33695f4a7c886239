"""Mean J of the learned policy and rules A-F on the synthetic benchmark.

    python scripts/policy_table.py --seeds 0 1 2 3 4 --policies learned C B
"""

import argparse
import json
import time
from pathlib import Path

from stremn.harness.experiments import compare_policies, desk_config, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--policies", nargs="+", default=["learned", "A", "B", "C", "D", "E", "F"])
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out", help="write the summary JSON here")
    args = ap.parse_args()

    cfg = desk_config(args.overrides)
    t0 = time.perf_counter()
    runs = compare_policies(cfg, args.policies, args.seeds)
    summary = summarize(runs)
    print(f"\n{'policy':<14} {'mean J':>8} {'std':>7}   per seed")
    for name, s in summary.items():
        vals = " ".join(f"{v:.3f}" for v in s["values"])
        print(f"{name:<14} {s['mean']:>8.4f} {s['std']:>7.4f}   {vals}")
    print(f"total {time.perf_counter() - t0:.0f}s")
    if args.out:
        Path(args.out).write_text(json.dumps({"config_hash": cfg.hash(), "seeds": args.seeds, "summary": summary}, indent=2), encoding="utf-8")


if __name__ == "__main__":
    main()
