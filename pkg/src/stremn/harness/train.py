"""Truncated-unroll training over short clips with Adam."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models import PredictionModel, VOSModel, build_model
from ..tasks import SequenceSample, gen_dataset, load_davis_style
from ..tensor import GradientTape, Tensor, backward, ops, precision, save_arrays
from .config import RunConfig, dump_config

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def lr_at(step: int, cfg: RunConfig) -> float:
    tc = cfg.train
    if tc.schedule == "constant":
        return tc.lr
    if tc.schedule == "cosine":
        frac = step / max(1, tc.steps - 1)
        return tc.lr_min + 0.5 * (tc.lr - tc.lr_min) * (1 + math.cos(math.pi * frac))
    if step < tc.steps:
        return tc.lr
    frac = (step - tc.steps) / max(1, tc.finetune_steps - 1)
    return tc.lr_min + 0.5 * (tc.lr_max - tc.lr_min) * (1 + math.cos(math.pi * frac))


def total_steps(cfg: RunConfig) -> int:
    return cfg.train.steps + (cfg.train.finetune_steps if cfg.train.schedule == "two-phase" else 0)


def clip_len_at(step: int, cfg: RunConfig) -> int:
    if cfg.train.schedule == "two-phase" and step < cfg.train.steps:
        return cfg.train.pretrain_clip_len
    return cfg.train.clip_len


def load_dataset(cfg: RunConfig, split: str = "train") -> list[SequenceSample]:
    if cfg.data.path:
        return load_davis_style(cfg.data.path)
    n = cfg.data.n_train if split == "train" else cfg.data.n_eval
    seed = cfg.seed if split == "train" else cfg.data.eval_seed
    return gen_dataset(cfg.data.synthetic, n, seed)


def vos_clip_loss(
    model: VOSModel, frames, target: np.ndarray, seed: int, mode: str = "train", forced: np.ndarray | None = None
) -> Tensor:
    """Mean cross entropy over frames 1.. of a clip started from frame 0's mask.

    ``forced[t]`` true writes the ground-truth mask (instead of the prediction)
    into memory at frame t.
    """
    state = model.init_state(frames[0], target[0].astype(frames.dtype), seed=seed)
    losses = []
    for t in range(1, len(frames)):
        override = target[t].astype(frames.dtype) if forced is not None and forced[t] else None
        logits, state = model.step(state, frames[t], mode=mode, mask_override=override)
        losses.append(ops.cross_entropy(logits, target[t].astype(np.int64)))
    return ops.mean(ops.stack(losses))


def pred_clip_loss(model: PredictionModel, frames, seed: int, mode: str = "train") -> Tensor:
    """L1 + L2 next-frame loss with teacher forcing over frames 3.. of a clip."""
    state = model.init_state(frames[:3], seed=seed)
    losses = []
    for t in range(3, len(frames)):
        pred, state = model.step(state, frames[t], mode=mode)
        gt = Tensor(frames[t], dtype=pred.dtype)
        losses.append(ops.add(ops.mae(pred, gt), ops.mse(pred, gt)))
    return ops.mean(ops.stack(losses))


def sample_clip(dataset: list[SequenceSample], rng: np.random.Generator, length: int, task: str):
    for _ in range(100):
        seq = dataset[int(rng.integers(len(dataset)))]
        length_ = min(length, len(seq))
        start = int(rng.integers(0, len(seq) - length_ + 1))
        frames = seq.frames[start : start + length_]
        if task == "pred":
            return frames, None
        masks = seq.masks[start : start + length_]
        present = [o for o in range(1, seq.n_objects + 1) if (masks[0] == o).any()]
        if present:
            obj = present[int(rng.integers(len(present)))]
            return frames, (masks == obj)
    raise TrainingError("could not sample a clip with a visible object in its first frame")


@dataclass
class TrainResult:
    model: VOSModel | PredictionModel
    losses: list[float]
    checkpoints: list[Path] = field(default_factory=list)
    state: "TrainState | None" = None


@dataclass
class TrainState:
    """Everything needed to continue a run bit-identically."""

    model: VOSModel | PredictionModel
    opt: Adam
    rng: np.random.Generator
    step: int = 0
    losses: list[float] = field(default_factory=list)

    def fork(self) -> "TrainState":
        return copy.deepcopy(self)


def _clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def init_train_state(cfg: RunConfig, model=None) -> TrainState:
    with precision(cfg.precision):
        if model is None:
            model = build_model(cfg.model, seed=cfg.seed)
        opt = Adam(model.parameters(), lr=cfg.train.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    return TrainState(model, opt, rng)


def train(
    cfg: RunConfig,
    dataset: list[SequenceSample] | None = None,
    out_dir=None,
    model=None,
    callback=None,
    state: TrainState | None = None,
    stop_at: int | None = None,
) -> TrainResult:
    """Fit a model on clips sampled from ``dataset`` (generated if omitted).

    ``callback(step, loss, model)`` runs after every optimizer step. Passing a
    ``state`` resumes a run; ``stop_at`` ends it early at that global step.
    """
    cfg.validate()
    with precision(cfg.precision):
        if dataset is None:
            dataset = load_dataset(cfg, "train")
        if state is None:
            state = init_train_state(cfg, model)
        model, opt, rng = state.model, state.opt, state.rng
        params = opt.params
        dtype = np.float32 if cfg.precision == 32 else np.float64
        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
        losses = state.losses
        checkpoints: list[Path] = []
        n_steps = total_steps(cfg) if stop_at is None else min(stop_at, total_steps(cfg))
        while state.step < n_steps:
            step = state.step
            frames, target = sample_clip(dataset, rng, clip_len_at(step, cfg), cfg.task)
            frames = frames.astype(dtype)
            clip_seed = int(rng.integers(2**31))
            forced = rng.random(len(frames)) < cfg.train.teacher_forcing
            with GradientTape() as tape:
                if cfg.task == "vos":
                    loss = vos_clip_loss(model, frames, target, clip_seed, forced=forced)
                else:
                    loss = pred_clip_loss(model, frames, clip_seed)
            value = float(loss.data)
            if not np.isfinite(value):
                norms = {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}
                worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
                raise TrainingError(f"non-finite loss at step {step}; largest parameter norms: {worst}")
            grads_map = backward(loss, tape)
            grads = [np.array(grads_map[p]) for p in params]
            _clip_gradients(grads, cfg.train.grad_clip)
            opt.lr = lr_at(step, cfg)
            opt.step(grads)
            losses.append(value)
            state.step += 1
            if callback is not None:
                callback(step, value, model)
            if cfg.train.log_every and step % cfg.train.log_every == 0:
                log.info("step %d loss %.5f lr %.2e", step, value, opt.lr)
            if out and cfg.train.checkpoint_every and (step + 1) % cfg.train.checkpoint_every == 0:
                checkpoints.append(save_checkpoint(model, cfg, out / f"step{step + 1:06d}.strm"))
        if out:
            checkpoints.append(save_checkpoint(model, cfg, out / "final.strm"))
            with open(out / "train_log.csv", "w", encoding="utf-8") as fh:
                fh.write("step,loss,lr\n")
                for i, v in enumerate(losses):
                    fh.write(f"{i},{v!r},{lr_at(i, cfg)!r}\n")
    return TrainResult(model, losses, checkpoints, state)


CONFIG_RECORD = "meta.config_json"


def save_checkpoint(model, cfg: RunConfig, path) -> Path:
    arrays = dict(model.state_dict())
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=list).encode("utf-8")
    arrays[CONFIG_RECORD] = np.frombuffer(blob, dtype=np.uint8)
    save_arrays(path, arrays)
    return Path(path)


def split_checkpoint(arrays: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], dict | None]:
    params = {k: v for k, v in arrays.items() if not k.startswith("meta.")}
    meta = arrays.get(CONFIG_RECORD)
    cfg = json.loads(meta.tobytes().decode("utf-8")) if meta is not None else None
    return params, cfg


def average_checkpoints(paths, selector=None, out_path=None) -> dict[str, np.ndarray]:
    """Arithmetic mean of parameters over checkpoints kept by ``selector``.

    ``selector(path, params) -> bool`` filters candidates (e.g. validation SSIM
    above a threshold). At least two checkpoints must remain, and all must share
    one parameter manifest with matching shapes.
    """
    from ..errors import ContractError
    from ..tensor import load_arrays

    loaded = []
    meta = None
    for p in paths:
        params, cfg = split_checkpoint(load_arrays(p))
        if selector is None or selector(p, params):
            loaded.append((p, params))
            meta = cfg if meta is None else meta
    if len(loaded) < 2:
        raise ContractError(f"averaging needs at least 2 checkpoints, {len(loaded)} selected")
    ref_path, ref = loaded[0]
    for p, params in loaded[1:]:
        if set(params) != set(ref):
            diff = sorted(set(params) ^ set(ref))
            raise ContractError(f"parameter manifests differ between {ref_path} and {p}: {diff}")
        for name in ref:
            if params[name].shape != ref[name].shape:
                raise ContractError(f"parameter {name!r} has shape {params[name].shape} in {p} but {ref[name].shape} in {ref_path}")
    avg = {}
    for name in sorted(ref):
        acc = np.zeros(ref[name].shape, dtype=np.float64)
        for _, params in loaded:
            acc += params[name]
        avg[name] = (acc / len(loaded)).astype(ref[name].dtype)
    if out_path is not None:
        arrays = dict(avg)
        if meta is not None:
            arrays[CONFIG_RECORD] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        save_arrays(out_path, arrays)
    return avg
