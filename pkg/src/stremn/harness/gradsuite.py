"""Finite-difference checks for every differentiable op and the soft-path pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..attention import KeyValueProjector, concat_memory_kv, memory_read, project_kv
from ..memory import (
    FusionModule,
    MemoryBank,
    SlotEntry,
    UpdateKeyProjector,
    fuse_templates,
    gumbel_softmax,
    similarity,
    straight_through_select,
    update_memory,
)
from ..nn import Conv2d
from ..tensor import GradCheckReport, Tensor, grad_check, ops, precision


@dataclass
class GradCase:
    name: str
    fn: Callable[..., Tensor]
    inputs: list[np.ndarray]
    max_coords: int | None = None
    numeric_fn: Callable[..., Tensor] | None = None


@dataclass
class GradResult:
    name: str
    report: GradCheckReport
    seconds: float

    def passed(self, tol: float) -> bool:
        return self.report.passed(tol)


def _proj(shape, rng):
    r = rng.standard_normal(shape)
    return lambda t: ops.sum(ops.mul(t, Tensor(r)))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def build_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    cases: list[GradCase] = []

    def add(name, fn, inputs, max_coords=None, numeric_fn=None):
        cases.append(GradCase(name, fn, [np.asarray(a, dtype=np.float64) for a in inputs], max_coords, numeric_fn))

    p34 = _proj((3, 4), rng)
    add("add", lambda a, b: p34(ops.add(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])
    add("sub", lambda a, b: p34(ops.sub(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])
    add("mul", lambda a, b: p34(ops.mul(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])
    add("scalar_mul", lambda a, s: p34(ops.mul(a, ops.reshape(s, ()))), [rng.standard_normal((3, 4)), rng.standard_normal(1)])
    add("exp", lambda a: p34(ops.exp(a)), [rng.standard_normal((3, 4))])
    add("log", lambda a: p34(ops.log(a)), [rng.uniform(0.5, 2.0, (3, 4))])
    add("sigmoid", lambda a: p34(ops.sigmoid(a)), [rng.standard_normal((3, 4))])
    add("tanh", lambda a: p34(ops.tanh(a)), [rng.standard_normal((3, 4))])
    add("leaky_relu", lambda a: p34(ops.leaky_relu(a)), [_away_from_zero(rng, (3, 4))])
    add("reshape", lambda a: p34(ops.reshape(a, (3, 4))), [rng.standard_normal((2, 6))])
    add("transpose", lambda a: p34(ops.transpose(a)), [rng.standard_normal((4, 3))])
    p64 = _proj((6, 4), rng)
    add("concat", lambda a, b: p64(ops.concat([a, b], axis=0)), [rng.standard_normal((2, 4)), rng.standard_normal((4, 4))])
    p234 = _proj((2, 3, 4), rng)
    add("stack", lambda a, b: p234(ops.stack([a, b])), [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))])
    p2 = _proj((2, 4), rng)
    add("index", lambda a: p2(ops.index(a, np.array([0, 2]))), [rng.standard_normal((3, 4))])
    p5 = _proj((5,), rng)
    add("scatter", lambda a: p5(ops.scatter(a, np.array([1, 3]), 5)), [rng.standard_normal(2)])
    p4 = _proj((4,), rng)
    add("sum", lambda a: p4(ops.sum(a, axis=0)), [rng.standard_normal((3, 4))])
    add("mean", lambda a: p4(ops.mean(a, axis=0)), [rng.standard_normal((3, 4))])
    add("max", lambda a: p4(ops.max(a, axis=0)), [rng.permutation(12).reshape(3, 4) * 0.3 + rng.uniform(0, 0.01, (3, 4))])
    p35 = _proj((3, 5), rng)
    add("matmul", lambda a, b: p35(ops.matmul(a, b)), [rng.standard_normal((3, 4)), rng.standard_normal((4, 5))])
    add("softmax", lambda a: p34(ops.softmax(a, axis=1)), [rng.standard_normal((3, 4))])
    add("l2_normalize", lambda a: p34(ops.l2_normalize(a, axis=0)), [rng.standard_normal((3, 4))])
    pc = _proj((3, 5, 5), rng)
    add(
        "conv2d",
        lambda x, w, b: pc(ops.conv2d(x, w, b, stride=1, padding=1)),
        [rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
    )
    pcs = _proj((3, 3, 3), rng)
    add(
        "conv2d_stride2",
        lambda x, w, b: pcs(ops.conv2d(x, w, b, stride=2, padding=1)),
        [rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
    )
    pg = _proj((4, 3, 3), rng)
    add(
        "group_norm",
        lambda x, g, b: pg(ops.group_norm(x, 2, g, b)),
        [rng.standard_normal((4, 3, 3)), rng.standard_normal(4), rng.standard_normal(4)],
    )
    pu = _proj((2, 6, 8), rng)
    add("upsample2x", lambda x: pu(ops.upsample2x(x)), [rng.standard_normal((2, 3, 4))])
    labels = rng.integers(0, 3, size=(4, 4))
    add("cross_entropy", lambda z: ops.cross_entropy(z, labels), [rng.standard_normal((3, 4, 4))])
    tgt = rng.standard_normal((3, 4))
    add("mse", lambda a: ops.mse(a, Tensor(tgt)), [rng.standard_normal((3, 4))])
    add("mae", lambda a: ops.mae(a, Tensor(tgt)), [tgt + _away_from_zero(rng, (3, 4), 0.1)])
    add(
        "composite_conv_gn_lrelu_ce",
        lambda x, w, g, b: ops.cross_entropy(
            ops.leaky_relu(ops.group_norm(ops.conv2d(x, w, None, padding=1), 1, g, b)), labels
        ),
        [rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 2, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)],
    )

    # memory-specific pieces
    add("similarity", lambda a, b: similarity(a, b), [rng.standard_normal((3, 3, 3)), rng.standard_normal((3, 3, 3))])
    elig = np.array([False, True, True, True, False])
    noise = rng.gumbel(size=5)
    add("gumbel_softmax", lambda s: p5(gumbel_softmax(s, 0.7, noise, elig)), [rng.standard_normal(5)])
    add(
        "straight_through_soft_path",
        lambda s: p5(straight_through_select(ops.softmax(s, axis=0))),
        [rng.standard_normal(5)],
        numeric_fn=lambda s: p5(ops.softmax(s, axis=0)),
    )

    C = 4
    kv = KeyValueProjector(C, 2, 3, np.random.default_rng(1))

    def read_fn(q, m, wk, wv):
        kv.key.weight, kv.value.weight = wk, wv
        mem = concat_memory_kv([project_kv(ops.index(m, i), kv, "memory") for i in range(m.shape[0])])
        return pc_read(memory_read(project_kv(q, kv, "query"), mem))

    pc_read = _proj((6, 3, 3), rng)
    add(
        "memory_read_projections",
        read_fn,
        [rng.standard_normal((C, 3, 3)), rng.standard_normal((2, C, 3, 3)), 0.3 * rng.standard_normal((2, C, 3, 3)), 0.3 * rng.standard_normal((3, C, 3, 3))],
        max_coords=40,
    )

    fus = FusionModule(C, np.random.default_rng(2), gate_bias=0.0)
    pf = _proj((C, 3, 3), rng)
    add("fusion", lambda a, b: pf(fuse_templates(a, b, fus)), [0.5 * rng.standard_normal((C, 3, 3)), 0.5 * rng.standard_normal((C, 3, 3))], max_coords=24)

    cases.append(_pipeline_case(rng))
    return cases


def _pipeline_case(rng: np.random.Generator) -> GradCase:
    """Full soft-path update + read + decode on a tiny full bank."""
    C, H, K = 4, 4, 4
    proj = UpdateKeyProjector(C, 2, np.random.default_rng(3))
    kv = KeyValueProjector(C, 2, 2, np.random.default_rng(4))
    head = Conv2d(4, 2, 3, np.random.default_rng(5))
    noise = rng.gumbel(size=K)
    labels = rng.integers(0, 2, size=(H, H))

    def fn(x_new, bank_t, w_u, query):
        proj.conv.weight = w_u
        slots = [SlotEntry(ops.index(bank_t, i), i, pinned=(i == 0)) for i in range(K)]
        bank = MemoryBank(K, "learned", slots=slots)
        bank, _ = update_memory(bank, x_new, K, proj, tau=1.0, mode="train", selection="soft", noise=noise)
        mem = concat_memory_kv([project_kv(s.template, kv, "memory") for s in bank.slots])
        readout = memory_read(project_kv(query, kv, "query"), mem)
        return ops.cross_entropy(head(readout), labels)

    inputs = [
        rng.standard_normal((C, H, H)),
        rng.standard_normal((K, C, H, H)),
        0.5 * rng.standard_normal((2, C, 3, 3)),
        rng.standard_normal((C, H, H)),
    ]
    return GradCase("pipeline_soft_path", fn, inputs, max_coords=30)


def run_suite(seed: int = 0, names: list[str] | None = None) -> list[GradResult]:
    results = []
    with precision(64):
        for case in build_cases(seed):
            if names and case.name not in names:
                continue
            t0 = time.perf_counter()
            rep = grad_check(case.fn, case.inputs, max_coords=case.max_coords, seed=seed, numeric_fn=case.numeric_fn)
            results.append(GradResult(case.name, rep, time.perf_counter() - t0))
    return results


def format_table(results: list[GradResult], tol: float) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max rel err':>12}  {'coords':>6}  result"]
    for r in results:
        status = "PASS" if r.passed(tol) else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.report.max_rel_error:>12.3e}  {r.report.checked:>6}  {status}")
    return "\n".join(lines)
