"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import GradientTape, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[int, tuple[int, ...]] | None
    checked: int
    nonfinite: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return not self.nonfinite and self.max_rel_error < tol

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray | Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    numeric_fn: Callable[..., Tensor] | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``fn(*inputs)`` with central differences.

    Relative error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. With
    ``max_coords`` set, each input is checked on that many random coordinates.
    ``numeric_fn`` (default ``fn``) is the function differenced numerically;
    straight-through estimators are checked against their soft surrogate.
    """
    numeric_fn = fn if numeric_fn is None else numeric_fn
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with GradientTape() as tape:
        loss = fn(*tensors)
    grads = backward(loss, tape)
    analytic = [grads[t] for t in tensors]

    rng = np.random.default_rng(seed)
    worst_err, worst, checked, nonfinite = 0.0, None, 0, []
    for k, arr in enumerate(arrays):
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_idx = rng.choice(arr.size, size=max_coords, replace=False)
        for fi in flat_idx:
            coord = np.unravel_index(int(fi), arr.shape) if arr.ndim else ()
            a = float(analytic[k][coord])
            num = _central_difference(numeric_fn, arrays, k, coord, step)
            checked += 1
            if not (np.isfinite(a) and np.isfinite(num)):
                nonfinite.append((k, tuple(int(c) for c in coord)))
                continue
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            if err > worst_err or worst is None:
                worst_err, worst = err, (k, tuple(int(c) for c in coord))
    return GradCheckReport(worst_err, worst, checked, nonfinite)


def _central_difference(fn, arrays, k, coord, step) -> float:
    base = arrays[k][coord]
    with no_grad():
        arrays[k][coord] = base + step
        hi = float(fn(*[Tensor(a.copy()) for a in arrays]).data)
        arrays[k][coord] = base - step
        lo = float(fn(*[Tensor(a.copy()) for a in arrays]).data)
    arrays[k][coord] = base
    return (hi - lo) / (2 * step)
