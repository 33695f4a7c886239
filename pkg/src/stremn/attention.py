"""Key/value projection and the dense space-time memory read."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StateError
from .nn import Conv2d, Module
from .tensor import Tensor, ops


@dataclass
class KeyValue:
    key: Tensor
    value: Tensor
    role: str = "query"

    def __post_init__(self):
        if self.key.shape[1:] != self.value.shape[1:]:
            raise DimensionError(f"key {self.key.shape} and value {self.value.shape} must share spatial dims")


class KeyValueProjector(Module):
    """Two parallel 3×3 convs producing key (D_k) and value (D_v) maps."""

    def __init__(self, channels: int, key_dim: int, value_dim: int, rng: np.random.Generator):
        self.channels = channels
        self.key = Conv2d(channels, key_dim, 3, rng)
        self.value = Conv2d(channels, value_dim, 3, rng)


def project_kv(x: Tensor, params: KeyValueProjector, role: str = "query") -> KeyValue:
    if x.ndim != 3 or x.shape[0] != params.channels:
        raise DimensionError(f"project_kv expects {params.channels} input channels, got shape {x.shape}")
    return KeyValue(params.key(x), params.value(x), role)


def concat_memory_kv(bank_kvs: list[KeyValue]) -> KeyValue:
    """Flatten slot maps into (D, K·H·W) with slot-major, row-major pixel order."""
    if not bank_kvs:
        raise StateError("cannot read from an empty memory")
    k_shape, v_shape = bank_kvs[0].key.shape, bank_kvs[0].value.shape
    for kv in bank_kvs:
        if kv.key.shape != k_shape or kv.value.shape != v_shape:
            raise DimensionError(f"memory slots have mixed shapes {kv.key.shape} / {k_shape}")
    dk, dv = k_shape[0], v_shape[0]
    keys = ops.concat([ops.reshape(kv.key, (dk, -1)) for kv in bank_kvs], axis=1)
    values = ops.concat([ops.reshape(kv.value, (dv, -1)) for kv in bank_kvs], axis=1)
    return KeyValue(keys, values, "memory")


def memory_position(flat: int, hw: int) -> tuple[int, int]:
    """Decode a concatenated memory position into (slot, pixel)."""
    return divmod(flat, hw)


def attention_weights(q: KeyValue, m: KeyValue, scale: bool = False) -> Tensor:
    dk = q.key.shape[0]
    if m.key.shape[0] != dk:
        raise DimensionError(f"query key dim {dk} != memory key dim {m.key.shape[0]}")
    qk = ops.reshape(q.key, (dk, -1))
    logits = ops.matmul(ops.transpose(qk), m.key)
    if scale:
        logits = ops.mul(logits, 1.0 / np.sqrt(dk))
    return ops.softmax(logits, axis=1)


def memory_read(q: KeyValue, m: KeyValue, scale: bool = False) -> Tensor:
    """Attend every query pixel over all memory positions and append v^Q.

    Returns a 2·D_v×H×W readout. ``m`` must come from :func:`concat_memory_kv`.
    """
    if m.key.ndim != 2 or m.value.ndim != 2 or m.key.shape[1] != m.value.shape[1]:
        raise DimensionError(f"memory key/value must be (D, positions); got {m.key.shape}, {m.value.shape}")
    if m.key.shape[1] < 1:
        raise StateError("memory has no positions")
    dv, h, w = q.value.shape
    if m.value.shape[0] != dv:
        raise DimensionError(f"memory value dim {m.value.shape[0]} != query value dim {dv}")
    weights = attention_weights(q, m, scale)
    retrieved = ops.matmul(m.value, ops.transpose(weights))
    return ops.concat([ops.reshape(retrieved, (dv, h, w)), q.value], axis=0)
