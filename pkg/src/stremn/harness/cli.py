"""Command-line entry point: ``stremn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContractError, DimensionError, IngestionError, StateError, UnsupportedOperation
from ..tensor import CheckpointError

EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_args(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--config", required=required, help="key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stremn", description="Fixed-capacity space-time memory: train, evaluate, benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _add_config_args(p, required=True)

    for name, help_ in (("eval", "score a checkpoint"), ("predict", "write predictions and scores")):
        p = sub.add_parser(name, help=help_)
        _add_config_args(p)
        p.add_argument("--checkpoint", help="model checkpoint (untrained weights if omitted)")
        p.add_argument("--snapshots", action="store_true", help="also save final memory banks")

    p = sub.add_parser("bench", help="fixed-K vs linear-growth memory cost")
    p.add_argument("--T", dest="t_list", type=int, nargs="+", default=[50, 200, 500])
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--gamma", type=int, default=5)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write bench.csv and bench.json here")

    p = sub.add_parser("analyze-memory", help="retention histogram from a rollout log")
    p.add_argument("log", help="rollout log JSON written by eval/predict")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="write the histogram JSON here")

    p = sub.add_parser("gen-data", help="export a synthetic DAVIS-style dataset")
    _add_config_args(p)
    p.add_argument("--n", type=int, help="number of sequences (default data.n_train)")

    p = sub.add_parser("gradcheck", help="finite-difference suite over every op")
    p.add_argument("--precision", type=int, choices=(32, 64), default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-5)
    return parser


def _load_cfg(args):
    from .config import load_config

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"out={args.out}")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    from .train import train

    cfg = _load_cfg(args)
    res = train(cfg, out_dir=cfg.out)
    print(f"trained {len(res.losses)} steps; loss {res.losses[0]:.5f} -> {res.losses[-1]:.5f}; checkpoint {res.checkpoints[-1]}")
    return 0


def cmd_eval(args, write_predictions: bool = False) -> int:
    from .evaluate import aggregate, evaluate, save_bank_snapshot, write_reports, write_rollout_log
    from .train import load_dataset

    cfg = _load_cfg(args)
    dataset = load_dataset(cfg, "eval")
    results = evaluate(cfg, dataset, checkpoint=args.checkpoint)
    out = Path(cfg.out)
    csv_path, json_path = write_reports(results, cfg, out)
    write_rollout_log(results, out / "rollouts.json")
    if args.snapshots:
        (out / "banks").mkdir(parents=True, exist_ok=True)
        for r in results:
            for i, bank in enumerate(r.final_banks):
                save_bank_snapshot(bank, out / "banks" / f"{r.name}_{i}.strm")
    if write_predictions:
        _write_predictions(results, cfg, out / "predictions")
    agg = aggregate(results)
    print(" ".join(f"{k}={v:.4f}" for k, v in agg.items()), f"({len(results)} sequences; {csv_path}, {json_path})")
    return 0


def _write_predictions(results, cfg, root: Path) -> None:
    from PIL import Image

    for r in results:
        d = root / r.name
        d.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(r.prediction):
            if cfg.task == "vos":
                Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="L").save(d / f"{t:05d}.png")
            else:
                rgb = np.clip(np.rint(np.asarray(frame).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
                Image.fromarray(rgb, mode="RGB").save(d / f"{t + cfg.data.observe:05d}.png")


def cmd_bench(args) -> int:
    from .bench import BenchConfig, bench_complexity

    cfg = BenchConfig(args.k, args.gamma, args.channels, args.size, args.reps, args.seed)
    res = bench_complexity(args.t_list, cfg)
    rows = res.rows()
    print(f"{'variant':<8} {'T':>5} {'read ms':>9} {'update ms':>10} {'slots':>6} {'bytes':>9}")
    for r in rows:
        print(f"{r['variant']:<8} {r['T']:>5} {r['read_ms']:>9.4f} {r['update_ms']:>10.4f} {r['peak_slots']:>6} {r['peak_bytes']:>9}")
    for T in res.t_list:
        print(f"T={T}: linear/stremn read ratio {res.ratio(T):.2f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(rows[0]) + "\n")
            for r in rows:
                fh.write(",".join(str(v) for v in r.values()) + "\n")
        (out / "bench.json").write_text(json.dumps({"schema_version": 1, "seed": args.seed, "rows": rows}, indent=2), encoding="utf-8")
    return 0


def cmd_analyze(args) -> int:
    from .analysis import analyze_memory, load_rollout_log

    log = load_rollout_log(args.log)
    hist = analyze_memory(log, args.k)
    for t, v in hist.normalized.items():
        print(f"d={t:>4}  {v:.4f}")
    for video, bank in hist.final_banks.items():
        print(f"{video}: final bank {bank}")
    if args.out:
        Path(args.out).write_text(json.dumps(hist.to_dict(), indent=2), encoding="utf-8")
    return 0


def cmd_gen_data(args) -> int:
    from ..tasks import export_davis_style, gen_dataset

    cfg = _load_cfg(args)
    n = args.n if args.n is not None else cfg.data.n_train
    if not args.out:
        raise ConfigError("gen-data needs --out")
    samples = gen_dataset(cfg.data.synthetic, n, cfg.seed)
    export_davis_style(samples, args.out)
    meta = {s.name: {k: v for k, v in s.metadata.items() if k != "target_colors"} for s in samples}
    (Path(args.out) / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    print(f"wrote {n} sequences to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import format_table, run_suite

    if args.precision != 64:
        raise ConfigError("finite-difference checks run at 64-bit precision only")
    results = run_suite(seed=args.seed)
    print(format_table(results, args.tol))
    failed = [r.name for r in results if not r.passed(args.tol)]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


_CATEGORIES = (
    (ConfigError, "config error", EXIT_USAGE),
    (IngestionError, "data error", 3),
    (CheckpointError, "checkpoint error", 4),
    (ContractError, "contract error", 4),
    (DimensionError, "dimension error", 5),
    (StateError, "state error", 5),
    (UnsupportedOperation, "unsupported", 5),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": lambda a: cmd_eval(a, write_predictions=True),
        "bench": cmd_bench,
        "analyze-memory": cmd_analyze,
        "gen-data": cmd_gen_data,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # categorized one-line report
        from .train import TrainingError

        for cls, label, code in _CATEGORIES:
            if isinstance(exc, cls):
                if code == EXIT_USAGE:
                    parser.print_usage(sys.stderr)
                print(f"{label}: {exc}", file=sys.stderr)
                return code
        if isinstance(exc, TrainingError):
            print(f"training error: {exc}", file=sys.stderr)
            return 6
        if isinstance(exc, (FileNotFoundError, KeyError, ValueError)):
            print(f"input error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
