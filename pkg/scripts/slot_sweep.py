"""Mean J of the learned policy as the slot count K varies.

    python scripts/slot_sweep.py --k 3 4 5 6 7 --seeds 0 1
"""

import argparse
import json
from pathlib import Path

from stremn.harness.experiments import compare_policies, desk_config, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, nargs="+", default=[3, 4, 5, 6, 7])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--policies", nargs="+", default=["learned"])
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out")
    args = ap.parse_args()

    table = {}
    for k in args.k:
        # the pair-clip phase never fills a bank of K >= 2 slots, so it is shared
        cfg = desk_config([*args.overrides, f"model.k_slots={k}"])
        table[k] = summarize(compare_policies(cfg, args.policies, args.seeds))
    print(f"\n{'K':>3}  " + "  ".join(f"{p:>12}" for p in args.policies))
    for k, row in table.items():
        print(f"{k:>3}  " + "  ".join(f"{row[p]['mean']:>6.4f}±{row[p]['std']:.3f}" for p in args.policies))
    if args.out:
        Path(args.out).write_text(json.dumps({str(k): v for k, v in table.items()}, indent=2), encoding="utf-8")


if __name__ == "__main__":
    main()
