"""Fixed-capacity spatial memory with a learned Gumbel-Softmax replacement policy.

The bank keeps at most ``capacity`` templates. Slot 0 holds the first frame and
is pinned; the slot with the largest frame index is the most recent one. Both
are exempt from eviction, so the learned policy chooses among the remaining
``capacity - 2`` slots.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError, StateError, UnsupportedOperation
from .nn import Conv2d, Module
from .tensor import Tensor, ops
from .tensor.core import active_tape

LEARNED = "learned"
RULE_POLICIES = {
    "A": "oldest",
    "B": "newest",
    "C": "random-drop",
    "D": "random-select",
    "E": "first-last",
    "F": "most-similar",
}
POLICIES = (LEARNED, *RULE_POLICIES.values())


def canonical_policy(kind: str) -> str:
    kind = RULE_POLICIES.get(kind, kind)
    if kind not in POLICIES:
        raise ConfigError(f"unknown memory policy {kind!r}; expected one of {POLICIES} or A-F")
    return kind


@dataclass(frozen=True)
class SlotEntry:
    template: Tensor
    frame_index: int
    pinned: bool = False


@dataclass
class MemoryBank:
    capacity: int
    policy: str = LEARNED
    slots: list[SlotEntry] = field(default_factory=list)
    # number of intermediate frames offered to the reservoir (policy D)
    intermediates_seen: int = 0

    def __post_init__(self):
        self.policy = canonical_policy(self.policy)
        if self.capacity < 1:
            raise ConfigError(f"capacity must be positive, got {self.capacity}")
        if self.policy == LEARNED and self.capacity < 3:
            raise ConfigError(f"learned policy needs capacity >= 3 (pinned + latest + 1), got {self.capacity}")

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def full(self) -> bool:
        return len(self.slots) >= self.capacity

    @property
    def frame_indices(self) -> list[int]:
        return [s.frame_index for s in self.slots]

    @property
    def templates(self) -> list[Tensor]:
        return [s.template for s in self.slots]

    def latest_position(self) -> int | None:
        """Position of the most recently inserted non-pinned slot."""
        best = None
        for pos, s in enumerate(self.slots):
            if not s.pinned and (best is None or s.frame_index > self.slots[best].frame_index):
                best = pos
        return best

    def eligible_mask(self) -> np.ndarray:
        mask = np.array([not s.pinned for s in self.slots], dtype=bool)
        latest = self.latest_position()
        if latest is not None:
            mask[latest] = False
        return mask

    def copy(self) -> "MemoryBank":
        return replace(self, slots=list(self.slots))


@dataclass
class UpdateDecision:
    scores: np.ndarray
    gumbel_noise: np.ndarray
    temperature: float
    soft: np.ndarray
    hard: np.ndarray
    eligible_mask: np.ndarray
    replaced: int


class UpdateKeyProjector(Module):
    """Shared 3×3 conv mapping templates to update-key maps for slot scoring."""

    def __init__(self, channels: int, key_channels: int | None, rng: np.random.Generator):
        self.channels = channels
        self.key_channels = key_channels or max(1, channels // 2)
        self.conv = Conv2d(channels, self.key_channels, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return project_update_keys(x, self)


def project_update_keys(x: Tensor, proj: UpdateKeyProjector) -> Tensor:
    if x.ndim != 3 or x.shape[0] != proj.channels:
        raise DimensionError(f"update-key projector expects {proj.channels} channels, got shape {x.shape}")
    return proj.conv(x)


def similarity(u_q: Tensor, u_m: Tensor) -> Tensor:
    """Mean over query pixels of the best cosine match among memory pixels."""
    if u_q.shape != u_m.shape or u_q.ndim != 3:
        raise DimensionError(f"similarity: key maps {u_q.shape} and {u_m.shape} must match (C×H×W)")
    c, h, w = u_q.shape
    q = ops.l2_normalize(ops.reshape(u_q, (c, h * w)), axis=0)
    m = ops.l2_normalize(ops.reshape(u_m, (c, h * w)), axis=0)
    cos = ops.matmul(ops.transpose(q), m)
    return ops.mean(ops.max(cos, axis=1))


def sample_gumbel(rng: np.random.Generator, n: int) -> np.ndarray:
    u = rng.random(n)
    return -np.log(-np.log(np.clip(u, 1e-20, 1.0 - 1e-16)))


def gumbel_softmax(scores: Tensor, tau: float, noise: np.ndarray | None = None, eligible: np.ndarray | None = None) -> Tensor:
    """Softmax of (scores + noise) / tau over eligible entries; zeros elsewhere."""
    if tau <= 0:
        raise ConfigError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    n = scores.shape[0]
    eligible = np.ones(n, dtype=bool) if eligible is None else np.asarray(eligible, dtype=bool)
    if not eligible.any():
        raise StateError("no eligible slot to normalize over")
    noise = np.zeros(n) if noise is None else np.asarray(noise)
    pos = np.flatnonzero(eligible)
    logits = ops.mul(ops.add(ops.index(scores, pos), Tensor(noise[pos], dtype=scores.dtype)), 1.0 / tau)
    return ops.scatter(ops.softmax(logits, axis=0), pos, n)


def one_hot_argmax(a_soft: np.ndarray) -> np.ndarray:
    hard = np.zeros_like(a_soft)
    hard[int(np.argmax(a_soft))] = 1.0
    return hard


def straight_through_select(a_soft: Tensor) -> Tensor:
    """One-hot of the (lowest-index) argmax whose gradient is that of ``a_soft``."""
    return ops.straight_through(a_soft, one_hot_argmax(a_soft.data))


def _append(bank: MemoryBank, x_new: Tensor, frame_index: int) -> MemoryBank:
    out = bank.copy()
    if out.slots and x_new.shape != out.slots[0].template.shape:
        raise DimensionError(f"template shape {x_new.shape} != bank slot shape {out.slots[0].template.shape}")
    out.slots.append(SlotEntry(x_new, frame_index, pinned=not out.slots))
    return out


def _check_new(bank: MemoryBank, x_new: Tensor) -> None:
    if x_new.size == 0:
        raise ConfigError("cannot insert an empty template")
    if bank.slots and x_new.shape != bank.slots[0].template.shape:
        raise DimensionError(f"template shape {x_new.shape} != bank slot shape {bank.slots[0].template.shape}")


def update_memory(
    bank: MemoryBank,
    x_new: Tensor,
    frame_index: int,
    proj: UpdateKeyProjector,
    tau: float = 1.0,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    *,
    score_template: Tensor | None = None,
    selection: str = "hard",
    noise: np.ndarray | None = None,
    forced_index: int | None = None,
    fusion: "FusionModule | None" = None,
) -> tuple[MemoryBank, UpdateDecision | None]:
    """Insert ``x_new`` with the learned replacement rule.

    While the bank has free capacity the template is appended and no decision
    is made. Once full, update keys are scored against every slot, the
    Gumbel-Softmax is taken over eligible slots and the selected slot is
    overwritten by ``x_new``. In ``train`` mode noise is drawn from ``rng`` and
    the hard selection carries straight-through gradients; in ``eval`` mode the
    noise is zero. ``selection="soft"`` blends every eligible slot with its soft
    weight instead (the differentiable path used for gradient checks).
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if tau <= 0:
        raise ConfigError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    if bank.capacity < 3:
        raise ConfigError(f"learned policy needs capacity >= 3, got {bank.capacity}")
    _check_new(bank, x_new)
    if not bank.full:
        return _append(bank, x_new, frame_index), None

    eligible = bank.eligible_mask()
    n = len(bank.slots)
    query = score_template if score_template is not None else x_new
    u_new = project_update_keys(query, proj)
    u_slots = [project_update_keys(s.template, proj) for s in bank.slots]
    scores = ops.stack([similarity(u_new, u) for u in u_slots])

    if noise is None:
        noise = np.zeros(n)
        if mode == "train":
            if rng is None:
                raise ConfigError("train-mode update needs a random generator for Gumbel noise")
            noise[eligible] = sample_gumbel(rng, int(eligible.sum()))
    noise = np.where(eligible, noise, 0.0)
    a_soft = gumbel_softmax(scores, tau, noise, eligible)
    hard = one_hot_argmax(a_soft.data)
    if forced_index is not None:
        if not eligible[forced_index]:
            raise StateError(f"slot {forced_index} is not eligible for replacement")
        hard = np.zeros(n)
        hard[forced_index] = 1.0
    replaced = int(np.argmax(hard))

    decision = UpdateDecision(
        scores=scores.data.astype(np.float64),
        gumbel_noise=noise,
        temperature=tau,
        soft=a_soft.data.astype(np.float64),
        hard=hard,
        eligible_mask=eligible,
        replaced=replaced,
    )

    slots = list(bank.slots)
    if fusion is not None:
        target = _fusion_target(u_slots, replaced, bank)
        if target is not None:
            slots = fusion_update(bank, replaced, target, fusion).slots

    tracking = active_tape() is not None and (a_soft.requires_grad or x_new.requires_grad)
    if selection == "soft":
        weights = a_soft
    elif selection == "hard":
        weights = ops.straight_through(a_soft, hard) if tracking else None
    else:
        raise ConfigError(f"selection must be 'hard' or 'soft', got {selection!r}")

    new_slots = []
    for i, s in enumerate(slots):
        fi = frame_index if i == replaced else s.frame_index
        if not eligible[i]:
            new_slots.append(s)
        elif weights is None:
            new_slots.append(SlotEntry(x_new, fi) if i == replaced else s)
        else:
            a_i = ops.index(weights, i)
            mixed = ops.add(ops.mul(s.template, ops.sub(1.0, a_i)), ops.mul(x_new, a_i))
            new_slots.append(SlotEntry(mixed, fi, s.pinned))
    out = bank.copy()
    out.slots = new_slots
    return out, decision


# -- rule-based baselines ------------------------------------------------------


def baseline_policy_update(
    bank: MemoryBank,
    x_new: Tensor,
    frame_index: int,
    kind: str,
    rng: np.random.Generator | None = None,
) -> MemoryBank:
    """Insert ``x_new`` under one of the hand-written rules A-F.

    A drops the oldest non-pinned slot, B the newest stored slot, C a uniformly
    random eligible slot, D keeps a reservoir sample of intermediate frames, E
    keeps only the first and newest frame, F drops the eligible slot most
    similar to ``x_new``.
    """
    kind = canonical_policy(kind)
    if kind == LEARNED:
        raise ConfigError("baseline_policy_update handles rule policies only; use update_memory")
    _check_new(bank, x_new)
    if kind in ("random-drop", "random-select") and rng is None:
        raise ConfigError(f"policy {kind} needs a random generator")

    if kind == "first-last":
        out = bank.copy()
        pinned = [s for s in out.slots if s.pinned]
        if not pinned:
            out.slots = [SlotEntry(x_new, frame_index, pinned=True)]
        else:
            out.slots = [pinned[0], SlotEntry(x_new, frame_index)]
        return out

    if kind == "random-select":
        return _reservoir_update(bank, x_new, frame_index, rng)

    if not bank.full:
        return _append(bank, x_new, frame_index)

    out = bank.copy()
    if kind == "oldest":
        candidates = [i for i, s in enumerate(out.slots) if not s.pinned]
        drop = min(candidates, key=lambda i: out.slots[i].frame_index)
    elif kind == "newest":
        drop = out.latest_position()
    else:
        eligible = np.flatnonzero(out.eligible_mask())
        if len(eligible) == 0:
            raise StateError(f"policy {kind} has no eligible slot with capacity {out.capacity}")
        if kind == "random-drop":
            drop = int(eligible[rng.integers(len(eligible))])
        else:
            sims = [similarity(x_new, out.slots[i].template).item() for i in eligible]
            drop = int(eligible[int(np.argmax(sims))])
    if drop is None:
        raise StateError(f"policy {kind} found nothing to evict")
    del out.slots[drop]
    out.slots.append(SlotEntry(x_new, frame_index))
    return out


def _reservoir_update(bank: MemoryBank, x_new: Tensor, frame_index: int, rng: np.random.Generator) -> MemoryBank:
    out = bank.copy()
    if not out.slots:
        out.slots = [SlotEntry(x_new, frame_index, pinned=True)]
        return out
    size = max(out.capacity - 2, 0)
    pinned = out.slots[0]
    latest = out.latest_position()
    reservoir = [s for i, s in enumerate(out.slots[1:], start=1) if i != latest]
    if latest is not None:
        # the previous newest frame becomes an intermediate candidate
        out.intermediates_seen += 1
        cand = out.slots[latest]
        if len(reservoir) < size:
            reservoir.append(cand)
        elif size > 0:
            j = int(rng.integers(out.intermediates_seen))
            if j < size:
                reservoir[j] = cand
    out.slots = [pinned, *reservoir, SlotEntry(x_new, frame_index)]
    return out


# -- fusion (appendix variant, off by default) ---------------------------------


class FusionModule(Module):
    """Gated merge of a to-be-deleted template into a target slot.

    ``f``, ``h`` and ``g`` are 3×3 convs over channel-concatenated pairs. The
    update gate bias starts negative so the module begins close to identity.
    """

    def __init__(self, channels: int, rng: np.random.Generator, gate_bias: float = -4.0, enabled: bool = True):
        self.f = Conv2d(2 * channels, channels, 3, rng)
        self.h = Conv2d(2 * channels, channels, 3, rng, bias_init=gate_bias)
        self.g = Conv2d(2 * channels, channels, 3, rng)
        self.enabled = enabled


def feature_align(a: Tensor, b: Tensor) -> Tensor:
    """softmax(A Bᵀ) B over flattened pixels: resamples ``b`` onto ``a``'s grid."""
    c, h, w = a.shape
    am = ops.transpose(ops.reshape(a, (c, h * w)))
    bm = ops.transpose(ops.reshape(b, (c, h * w)))
    attn = ops.softmax(ops.matmul(am, ops.transpose(bm)), axis=1)
    return ops.reshape(ops.transpose(ops.matmul(attn, bm)), (c, h, w))


def fuse_templates(
    x_del: Tensor,
    x_tgt: Tensor,
    fusion: FusionModule,
    force_r: float | None = None,
    force_z: float | None = None,
) -> Tensor:
    aligned_tgt = feature_align(x_del, x_tgt)
    if force_r is None:
        r = ops.sigmoid(fusion.f(ops.concat([x_del, aligned_tgt], axis=0)))
    else:
        r = Tensor(np.full(x_del.shape, force_r, dtype=x_del.dtype))
    filtered = ops.mul(r, x_del)
    aligned_del = feature_align(x_tgt, filtered)
    pair = ops.concat([aligned_del, x_tgt], axis=0)
    if force_z is None:
        z = ops.sigmoid(fusion.h(pair))
    else:
        z = Tensor(np.full(x_tgt.shape, force_z, dtype=x_tgt.dtype))
    cand = ops.tanh(fusion.g(pair))
    return ops.add(ops.mul(ops.sub(1.0, z), x_tgt), ops.mul(z, cand))


def fusion_update(
    bank: MemoryBank,
    deleted_index: int,
    target_index: int,
    fusion: FusionModule | None,
    **force,
) -> MemoryBank:
    """Replace slot ``target_index`` by its fusion with slot ``deleted_index``.

    The deleted slot itself is left in place; the caller removes it.
    """
    if fusion is None or not fusion.enabled:
        raise UnsupportedOperation("fusion module is disabled")
    n = len(bank.slots)
    if deleted_index == target_index or not (0 <= deleted_index < n and 0 <= target_index < n):
        raise StateError(f"fusion needs distinct valid slot indices, got {deleted_index}, {target_index} of {n}")
    out = bank.copy()
    tgt = out.slots[target_index]
    fused = fuse_templates(out.slots[deleted_index].template, tgt.template, fusion, **force)
    out.slots[target_index] = SlotEntry(fused, tgt.frame_index, tgt.pinned)
    return out


def _fusion_target(u_slots: list[Tensor], replaced: int, bank: MemoryBank) -> int | None:
    # least similar non-pinned slot to the template about to be deleted
    best, best_sim = None, np.inf
    for i, s in enumerate(bank.slots):
        if i == replaced or s.pinned:
            continue
        sim = similarity(Tensor(u_slots[replaced].data), Tensor(u_slots[i].data)).item()
        if sim < best_sim:
            best, best_sim = i, sim
    return best
