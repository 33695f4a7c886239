"""Train a learned-policy model, roll it out on held-out sequences and print d^K[t].

    python scripts/retention.py --seed 0 --out runs/retention
"""

import argparse
import json
from pathlib import Path

from stremn.harness.analysis import analyze_memory, histogram_array
from stremn.harness.evaluate import evaluate, write_rollout_log
from stremn.harness.experiments import desk_config
from stremn.harness.train import load_dataset, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = desk_config([*args.overrides, f"seed={args.seed}", "model.policy=learned"])
    model = train(cfg).model
    results = evaluate(cfg, load_dataset(cfg, "eval"), model=model)
    log = [{"video": r.name, "track": i, "steps": [[q, b] for q, b in steps]} for r in results for i, steps in enumerate(r.rollouts)]
    hist = analyze_memory(log, cfg.model.k_slots)
    arr = histogram_array(hist)
    k = cfg.model.k_slots
    for t, v in enumerate(arr):
        if v > 0:
            print(f"d={t:>3}  {v:.4f} {'#' * int(round(200 * v))}")
    print(f"mass at distances > K={k}: {hist.mass_beyond(k):.4f}")
    for video, bank in list(hist.final_banks.items())[:4]:
        print(f"{video}: final bank {bank}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_rollout_log(results, out / "rollouts.json")
        (out / "histogram.json").write_text(json.dumps(hist.to_dict(), indent=2), encoding="utf-8")


if __name__ == "__main__":
    main()
