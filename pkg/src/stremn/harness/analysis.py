"""Retention analysis: how far back in time do stored templates reach?"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError


@dataclass
class MemoryHistogram:
    counts: dict[int, int]
    total: int
    k_slots: int | None
    excluded: tuple[str, ...] = ("first frame", "previous frame")
    final_banks: dict[str, list[int]] = field(default_factory=dict)

    @property
    def normalized(self) -> dict[int, float]:
        if self.total == 0:
            return {t: 0.0 for t in self.counts}
        return {t: c / self.total for t, c in sorted(self.counts.items())}

    def mass_beyond(self, distance: int) -> float:
        return float(sum(v for t, v in self.normalized.items() if t > distance))

    def to_dict(self) -> dict:
        return {
            "counts": {str(t): c for t, c in sorted(self.counts.items())},
            "normalized": {str(t): v for t, v in self.normalized.items()},
            "total": self.total,
            "k_slots": self.k_slots,
            "excluded": list(self.excluded),
            "final_banks": self.final_banks,
        }


def _steps(entry) -> tuple[str, list]:
    if isinstance(entry, dict):
        return str(entry.get("video", "")), entry["steps"]
    return "", entry


def analyze_memory(rollout_log, k_slots: int | None = None) -> MemoryHistogram:
    """Histogram of query-minus-slot distances over every read.

    ``rollout_log`` is a list of rollouts; each rollout is either a list of
    ``(query_frame, bank_frame_indices)`` pairs or a dict with ``video`` and
    ``steps`` keys (the JSON written by the evaluator). Slots holding frame 0
    or frame ``query - 1`` are excluded.
    """
    if not rollout_log:
        raise ContractError("rollout log is empty")
    counts: dict[int, int] = {}
    finals: dict[str, list[int]] = {}
    n_steps = 0
    for i, entry in enumerate(rollout_log):
        video, steps = _steps(entry)
        for query, bank in steps:
            n_steps += 1
            for f in bank:
                if f == 0 or f == query - 1:
                    continue
                d = int(query) - int(f)
                if d <= 0:
                    raise ContractError(f"slot frame {f} is not before query frame {query}")
                counts[d] = counts.get(d, 0) + 1
        if steps:
            finals[video or f"rollout{i}"] = [int(f) for f in steps[-1][1]]
    if n_steps == 0:
        raise ContractError("rollout log holds no steps")
    return MemoryHistogram(counts, int(sum(counts.values())), k_slots, final_banks=finals)


def load_rollout_log(path) -> list:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def histogram_array(hist: MemoryHistogram, max_distance: int | None = None) -> np.ndarray:
    top = max_distance if max_distance is not None else max(hist.counts, default=0)
    arr = np.zeros(top + 1)
    for t, v in hist.normalized.items():
        if t <= top:
            arr[t] = v
    return arr
