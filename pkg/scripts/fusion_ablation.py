"""Train with the fusion module, then score the same weights with fusion on and off.

    python scripts/fusion_ablation.py --seeds 0 1 2 3 4
"""

import argparse
import json
from pathlib import Path

from stremn.harness.experiments import compare_fusion, desk_config, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out")
    args = ap.parse_args()

    summary = summarize(compare_fusion(desk_config(args.overrides), args.seeds))
    on, off = summary["fusion"], summary["no-fusion"]
    print(f"with fusion    {on['mean']:.4f} ± {on['std']:.4f}")
    print(f"without fusion {off['mean']:.4f} ± {off['std']:.4f}")
    print(f"|difference| {abs(on['mean'] - off['mean']):.4f} vs across-seed std {off['std']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2), encoding="utf-8")


if __name__ == "__main__":
    main()
