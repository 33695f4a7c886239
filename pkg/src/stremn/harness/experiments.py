"""Multi-seed policy comparisons on the synthetic benchmark."""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .evaluate import aggregate, evaluate
from ..models import build_model
from ..tensor import precision
from .train import Adam, TrainState, init_train_state, load_dataset, train


@dataclass
class PolicyRun:
    policy: str
    seed: int
    metrics: dict
    train_seconds: float
    eval_seconds: float
    final_loss: float
    extra: dict = field(default_factory=dict)


def _variant(base: RunConfig, seed: int, **model_fields) -> RunConfig:
    cfg = copy.deepcopy(base)
    cfg.seed = seed
    for k, v in model_fields.items():
        setattr(cfg.model, k, v)
    return cfg.validate()


def shares_pretraining(cfg: RunConfig) -> bool:
    # clips no longer than K never fill the bank, so no policy decision is made
    return cfg.train.schedule == "two-phase" and cfg.train.pretrain_clip_len <= cfg.model.k_slots


def pretrain_shared(base: RunConfig, seed: int, train_set=None) -> tuple[TrainState, float]:
    """Run the policy-independent first phase for one seed; returns the state and seconds taken."""
    cfg = _variant(base, seed)
    if not shares_pretraining(cfg):
        raise ValueError("first phase fills the bank, so it depends on the policy and cannot be shared")
    if train_set is None:
        train_set = load_dataset(cfg, "train")
    t0 = time.perf_counter()
    state = train(cfg, dataset=train_set, state=init_train_state(cfg), stop_at=cfg.train.steps).state
    return state, time.perf_counter() - t0


def with_fusion(state: TrainState, cfg: RunConfig) -> TrainState:
    """Copy of ``state`` whose model gains a freshly initialized fusion module.

    Fusion only acts on a full bank, so during a first phase that never fills
    it the fusion weights see zero gradient and Adam leaves them untouched.
    Fusion weights come from their own stream, so the result equals running
    that phase with fusion switched on from the start.
    """
    with precision(cfg.precision):
        model = build_model(cfg.model, seed=cfg.seed)
        old = dict(state.model.named_parameters())
        moments = {name: (m, v) for (name, _), m, v in zip(state.model.named_parameters(), state.opt.m, state.opt.v)}
        params = model.named_parameters()
        for name, p in params:
            if name in old:
                p.data = old[name].data.copy()
        opt = Adam(model.parameters(), lr=state.opt.lr, betas=(state.opt.b1, state.opt.b2), eps=state.opt.eps)
        opt.t = state.opt.t
        for i, (name, _) in enumerate(params):
            if name in moments:
                opt.m[i] = moments[name][0].copy()
                opt.v[i] = moments[name][1].copy()
    return TrainState(model, opt, copy.deepcopy(state.rng), state.step, list(state.losses))


def compare_policies(
    base: RunConfig, policies: list[str], seeds: list[int], log=print, shared: dict | None = None
) -> list[PolicyRun]:
    """Train one model per (policy, seed) from identical init and data order; evaluate on held-out sequences.

    Every variant for a given seed shares the training set, the clip sampling
    stream and the weight initialization; only the memory policy differs. When
    the first phase cannot fill the bank it is run once per seed and forked,
    which yields the same weights as running it per policy. ``shared`` maps
    seed to a ``(state, seconds)`` pair from :func:`pretrain_shared` and is
    filled in as seeds are trained.
    """
    runs = []
    shared = {} if shared is None else shared
    eval_set = load_dataset(base, "eval")
    for seed in seeds:
        seed_cfg = _variant(base, seed)
        train_set = load_dataset(seed_cfg, "train")
        start, shared_seconds = None, 0.0
        if shares_pretraining(seed_cfg):
            if seed not in shared:
                shared[seed] = pretrain_shared(base, seed, train_set)
            start, shared_seconds = shared[seed]
        for policy in policies:
            cfg = _variant(base, seed, policy=policy)
            state = None
            if start is not None:
                state = start.fork()
                state.model.cfg = cfg.model
            t0 = time.perf_counter()
            res = train(cfg, dataset=train_set, state=state)
            t1 = time.perf_counter()
            results = evaluate(cfg, eval_set, model=res.model)
            metrics = aggregate(results)
            t2 = time.perf_counter()
            run = PolicyRun(policy, seed, metrics, t1 - t0 + shared_seconds, t2 - t1, float(np.mean(res.losses[-10:])))
            run.extra["results"] = results
            runs.append(run)
            log(f"seed {seed} policy {policy:<12} J={metrics.get('J', float('nan')):.4f} train {t1 - t0:.0f}s (+{shared_seconds:.0f}s shared) eval {t2 - t1:.0f}s")
    return runs


def compare_fusion(base: RunConfig, seeds: list[int], log=print, shared: dict | None = None) -> list[PolicyRun]:
    """Train with the fusion module, then score the same weights with fusion on and off."""
    runs = []
    shared = {} if shared is None else shared
    eval_set = load_dataset(base, "eval")
    for seed in seeds:
        cfg = _variant(base, seed, policy="learned", fusion=True)
        train_set = load_dataset(cfg, "train")
        state, shared_seconds = None, 0.0
        if shares_pretraining(cfg):
            if seed not in shared:
                shared[seed] = pretrain_shared(base, seed, train_set)
            start, shared_seconds = shared[seed]
            state = with_fusion(start, cfg)
        t0 = time.perf_counter()
        res = train(cfg, dataset=train_set, state=state)
        t1 = time.perf_counter()
        for flag in (True, False):
            res.model.use_fusion = flag
            t2 = time.perf_counter()
            metrics = aggregate(evaluate(cfg, eval_set, model=res.model))
            name = "fusion" if flag else "no-fusion"
            runs.append(PolicyRun(name, seed, metrics, t1 - t0 + shared_seconds, time.perf_counter() - t2, float(np.mean(res.losses[-10:]))))
            log(f"seed {seed} {name:<10} J={metrics.get('J', float('nan')):.4f}")
        res.model.use_fusion = True
    return runs


def summarize(runs: list[PolicyRun], key: str = "J") -> dict[str, dict]:
    out = {}
    for policy in dict.fromkeys(r.policy for r in runs):
        vals = np.array([r.metrics[key] for r in runs if r.policy == policy])
        out[policy] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0, "values": vals.tolist()}
    return out


# desk-scale benchmark: a long constant-lr phase on frame pairs, then a
# cosine fine-tune on 10-frame clips that fill the bank
DESK_OVERRIDES = [
    "train.lr=1e-3",
    "train.lr_max=1e-4",
    "train.lr_min=1e-6",
    "train.steps=9000",
    "train.pretrain_clip_len=2",
    "train.finetune_steps=50",
    "train.clip_len=10",
    "model.width=16",
    "train.log_every=0",
    "data.n_train=16",
    "data.n_eval=8",
    "model.k_slots=6",
]


def desk_config(extra: list[str] | None = None) -> RunConfig:
    from .config import load_config

    return load_config(None, DESK_OVERRIDES + list(extra or []), environ={})
