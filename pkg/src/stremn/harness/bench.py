"""Read/update cost of the fixed-capacity memory versus a linear-growth memory."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..attention import KeyValue, KeyValueProjector, concat_memory_kv, memory_read, project_kv
from ..errors import ConfigError
from ..memory import MemoryBank, SlotEntry, UpdateKeyProjector, update_memory
from ..tensor import Tensor, no_grad, precision


@dataclass
class BenchConfig:
    k_slots: int = 6
    gamma: int = 5
    channels: int = 32
    size: int = 16
    reps: int = 5
    seed: int = 0


@dataclass
class VariantStats:
    read_ms: float
    update_ms: float
    peak_slots: int
    peak_bytes: int
    read_samples: list[float] = field(default_factory=list, repr=False)


@dataclass
class BenchResult:
    config: BenchConfig
    t_list: list[int]
    stremn: dict[int, VariantStats]
    linear: dict[int, VariantStats]

    def ratio(self, T: int) -> float:
        return self.linear[T].read_ms / self.stremn[T].read_ms

    def rows(self) -> list[dict]:
        out = []
        for T in self.t_list:
            for name, table in (("stremn", self.stremn), ("linear", self.linear)):
                s = table[T]
                out.append(
                    {
                        "variant": name,
                        "T": T,
                        "read_ms": s.read_ms,
                        "update_ms": s.update_ms,
                        "peak_slots": s.peak_slots,
                        "peak_bytes": s.peak_bytes,
                    }
                )
        return out


def linear_slot_count(T: int, gamma: int) -> int:
    return 1 + (T - 1) // gamma


def _run_stremn(frames, kvs, T, K, proj, kv_proj) -> tuple[list[float], list[float], int, int]:
    bank = MemoryBank(K, "learned")
    cache: dict[int, KeyValue] = {}
    reads, updates = [], []
    peak_slots = peak_bytes = 0
    for t in range(T):
        x = frames[t % len(frames)]
        if bank.slots:
            t0 = time.perf_counter()
            mem = concat_memory_kv([cache[id(s.template)] for s in bank.slots])
            memory_read(kvs[t % len(kvs)], mem)
            reads.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        bank, _ = update_memory(bank, x, t, proj, mode="eval")
        live = {id(s.template) for s in bank.slots}
        if id(x) not in cache:
            cache[id(x)] = project_kv(x, kv_proj, "memory")
        cache = {k: v for k, v in cache.items() if k in live}
        updates.append(time.perf_counter() - t0)
        if len(bank) > K:
            raise AssertionError(f"bank grew to {len(bank)} > K={K}")
        peak_slots = max(peak_slots, len(bank))
        peak_bytes = max(peak_bytes, sum(s.template.data.nbytes for s in bank.slots))
    return reads, updates, peak_slots, peak_bytes


def _run_linear(frames, kvs, T, gamma, kv_proj) -> tuple[list[float], list[float], int, int]:
    slots: list[SlotEntry] = []
    mem_kvs: list[KeyValue] = []
    reads, updates = [], []
    for t in range(T):
        x = frames[t % len(frames)]
        if slots:
            t0 = time.perf_counter()
            mem = concat_memory_kv(mem_kvs)
            memory_read(kvs[t % len(kvs)], mem)
            reads.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        if t % gamma == 0:
            slots.append(SlotEntry(x, t, pinned=(t == 0)))
            mem_kvs.append(project_kv(x, kv_proj, "memory"))
        updates.append(time.perf_counter() - t0)
    peak_bytes = sum(s.template.data.nbytes for s in slots)
    return reads, updates, len(slots), peak_bytes


def bench_complexity(t_list: list[int], cfg: BenchConfig | None = None) -> BenchResult:
    """Time per-step reads/updates for each T, interleaving T values across repetitions.

    Reported latencies are medians over all steps of all repetitions.
    """
    cfg = cfg or BenchConfig()
    if list(t_list) != sorted(set(t_list)) or not t_list or t_list[0] < 2:
        raise ConfigError(f"T list must be strictly increasing and >= 2, got {t_list}")
    if cfg.reps < 5:
        raise ConfigError("at least 5 repetitions are required")
    rng = np.random.default_rng(cfg.seed)
    C, S = cfg.channels, cfg.size
    with precision(32), no_grad():
        kv_proj = KeyValueProjector(C, C // 8, C // 2, rng)
        proj = UpdateKeyProjector(C, None, rng)
        pool = 64
        frames = [Tensor(rng.standard_normal((C, S, S)).astype(np.float32)) for _ in range(pool)]
        qkvs = [project_kv(f, kv_proj, "query") for f in frames]
        samples = {T: {"s": ([], []), "l": ([], [])} for T in t_list}
        peaks = {}
        for _ in range(cfg.reps):
            for T in t_list:
                r, u, ps, pb = _run_stremn(frames, qkvs, T, cfg.k_slots, proj, kv_proj)
                samples[T]["s"][0].extend(r)
                samples[T]["s"][1].extend(u)
                r2, u2, ls, lb = _run_linear(frames, qkvs, T, cfg.gamma, kv_proj)
                samples[T]["l"][0].extend(r2)
                samples[T]["l"][1].extend(u2)
                peaks[T] = (ps, pb, ls, lb)
    stremn, linear = {}, {}
    for T in t_list:
        ps, pb, ls, lb = peaks[T]
        sr, su = samples[T]["s"]
        lr, lu = samples[T]["l"]
        stremn[T] = VariantStats(1e3 * float(np.median(sr)), 1e3 * float(np.median(su)), ps, pb, sr)
        linear[T] = VariantStats(1e3 * float(np.median(lr)), 1e3 * float(np.median(lu)), ls, lb, lr)
    return BenchResult(cfg, list(t_list), stremn, linear)
