"""Deterministic eval-mode rollouts, reports and bank snapshots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError
from ..memory import MemoryBank
from ..models import ModelState, PredictionModel, VOSModel, build_model
from ..tasks import SequenceSample, metric_prediction, sequence_jf
from ..tensor import Tensor, load_arrays, no_grad, ops, precision, save_arrays
from .config import RunConfig
from .train import split_checkpoint

SCHEMA_VERSION = 1


@dataclass
class SequenceResult:
    name: str
    metrics: dict
    prediction: np.ndarray
    rollouts: list[list[tuple[int, list[int]]]] = field(default_factory=list)
    final_banks: list[MemoryBank] = field(default_factory=list)


def load_model(cfg: RunConfig, checkpoint=None):
    """Build the configured model and, if given, load weights from a checkpoint."""
    model = build_model(cfg.model, seed=cfg.seed)
    if checkpoint is not None:
        arrays = load_arrays(checkpoint) if not isinstance(checkpoint, dict) else checkpoint
        params, _ = split_checkpoint(arrays)
        ours = {name for name, _ in model.named_parameters()}
        theirs = set(params)
        if ours != theirs:
            diff = sorted(ours ^ theirs)
            raise ContractError(f"checkpoint manifest does not match model; differing names: {diff[:10]}")
        model.load_state_dict(params)
    return model


def rollout_vos(model: VOSModel, seq: SequenceSample, seed: int = 0):
    """Segment every object independently, then merge by argmax.

    Returns (labels T×H×W, rollouts, final banks). The background competes
    with a fixed 0.5 probability so it wins ties.
    """
    frames = seq.frames
    masks0 = np.asarray(seq.masks[0])
    T, _, H, W = frames.shape
    probs = np.zeros((seq.n_objects + 1, T, H, W))
    probs[0] = 0.5
    rollouts, banks = [], []
    with no_grad():
        for obj in range(1, seq.n_objects + 1):
            init = (masks0 == obj).astype(frames.dtype)
            probs[obj, 0] = init
            state = model.init_state(frames[0], init, seed=seed + obj)
            for t in range(1, T):
                logits, state = model.step(state, frames[t], mode="eval")
                probs[obj, t] = ops.softmax(logits, axis=0).data[1]
            rollouts.append(list(state.rollout))
            banks.append(state.bank)
    labels = np.argmax(probs, axis=0).astype(np.int64)
    labels[0] = masks0
    return labels, rollouts, banks


def rollout_pred(model: PredictionModel, seq: SequenceSample, observe: int, seed: int = 0):
    """Observe ``observe`` frames, then predict the rest autoregressively."""
    frames = seq.frames
    T = len(frames)
    if not 3 <= observe < T:
        raise ContractError(f"observe must lie in [3, {T}), got {observe}")
    preds = []
    with no_grad():
        state = model.init_state(frames[:3], seed=seed)
        for t in range(3, T):
            observed = frames[t] if t < observe else None
            pred, state = model.step(state, observed, mode="eval")
            if t >= observe:
                preds.append(pred.data)
    return np.stack(preds), [list(state.rollout)], [state.bank]


def score_vos(pred_labels, seq: SequenceSample) -> dict:
    return sequence_jf(pred_labels, seq.masks, seq.n_objects)


def evaluate(
    cfg: RunConfig,
    dataset: list[SequenceSample],
    model=None,
    checkpoint=None,
    predictions: dict[str, np.ndarray] | None = None,
) -> list[SequenceResult]:
    """Score each sequence; ``predictions`` bypasses the model (oracle inputs)."""
    results = []
    with precision(cfg.precision):
        if predictions is None and model is None:
            model = load_model(cfg, checkpoint)
        for seq in dataset:
            rollouts, banks = [], []
            if cfg.task == "vos":
                if predictions is not None:
                    labels = np.asarray(predictions[seq.name])
                else:
                    labels, rollouts, banks = rollout_vos(model, seq, seed=cfg.seed)
                m = score_vos(labels, seq)
                metrics = {"J": m["J"], "F": m["F"], "JF": m["JF"]}
                pred = labels
            else:
                observe = cfg.data.observe
                if predictions is not None:
                    pred = np.asarray(predictions[seq.name])
                else:
                    pred, rollouts, banks = rollout_pred(model, seq, observe, seed=cfg.seed)
                m = metric_prediction(pred, seq.frames[observe:])
                metrics = {k: m[k] for k in ("MSE", "MAE", "SSIM", "PSNR")}
            results.append(SequenceResult(seq.name, metrics, pred, rollouts, banks))
    return results


def aggregate(results: list[SequenceResult]) -> dict:
    keys = list(results[0].metrics)
    return {k: float(np.mean([r.metrics[k] for r in results])) for k in keys}


def write_reports(results: list[SequenceResult], cfg: RunConfig, out_dir) -> tuple[Path, Path]:
    """CSV with one row per sequence plus a ``mean`` row; JSON aggregate."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(results[0].metrics)
    agg = aggregate(results)
    csv_path = out / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", *keys, "config_hash", "seed"])
        for r in results:
            w.writerow([r.name, *(repr(r.metrics[k]) for k in keys), cfg.hash(), cfg.seed])
        w.writerow(["mean", *(repr(agg[k]) for k in keys), cfg.hash(), cfg.seed])
    json_path = out / "metrics.json"
    report = {
        "schema_version": SCHEMA_VERSION,
        "task": cfg.task,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "policy": cfg.model.policy,
        "post_processing": "none",
        "n_sequences": len(results),
        "aggregate": agg,
        "per_sequence": {r.name: r.metrics for r in results},
    }
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    return csv_path, json_path


def write_rollout_log(results: list[SequenceResult], path) -> Path:
    """JSON list of rollouts: each is a list of (query frame, bank frame indices)."""
    log = []
    for r in results:
        for i, roll in enumerate(r.rollouts):
            log.append({"video": r.name, "track": i, "steps": [[q, list(b)] for q, b in roll]})
    path = Path(path)
    path.write_text(json.dumps(log), encoding="utf-8")
    return path


def save_bank_snapshot(bank: MemoryBank, path) -> tuple[Path, Path]:
    """Templates into the checkpoint container, slot metadata into a JSON sidecar."""
    path = Path(path)
    arrays = {f"slot{i:02d}": np.asarray(s.template.data) for i, s in enumerate(bank.slots)}
    save_arrays(path, arrays)
    side = path.with_suffix(path.suffix + ".json")
    meta = {
        "capacity": bank.capacity,
        "policy": bank.policy,
        "intermediates_seen": bank.intermediates_seen,
        "slots": [{"name": f"slot{i:02d}", "frame_index": s.frame_index, "pinned": s.pinned} for i, s in enumerate(bank.slots)],
    }
    side.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return path, side


def load_bank_snapshot(path) -> MemoryBank:
    from ..memory import SlotEntry

    path = Path(path)
    arrays = load_arrays(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    bank = MemoryBank(meta["capacity"], meta["policy"], intermediates_seen=meta["intermediates_seen"])
    bank.slots = [SlotEntry(Tensor(arrays[s["name"]]), s["frame_index"], s["pinned"]) for s in meta["slots"]]
    return bank
