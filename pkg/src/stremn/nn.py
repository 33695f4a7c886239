"""Parameter containers and small layers built on the tensor engine."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tensor, get_dtype, ops


class Module:
    """Holds named parameters and child modules; mirrors the usual nn idiom."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((prefix + key, val))
            elif isinstance(val, Module):
                out.extend(val.named_parameters(prefix + key + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ContractError(f"parameter manifest mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ContractError(f"shape mismatch for {name}: {state[name].shape} vs {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(arr: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(arr, dtype=get_dtype()), requires_grad=True, name=name)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, bias_init: float = 0.0):
        fan_in = c_in * k * k
        self.weight = param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k)))
        self.bias = param(np.full(c_out, bias_init))
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int):
        self.groups = groups
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.gamma, self.beta)


def groups_for(channels: int, preferred: int = 4) -> int:
    g = min(preferred, channels)
    while channels % g:
        g -= 1
    return g


class ConvBlock(Module):
    """conv (optionally strided) -> conv -> group norm -> leaky relu."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, downsample: bool):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=2 if downsample else 1)
        self.conv2 = Conv2d(c_out, c_out, 3, rng)
        self.norm = GroupNorm(c_out, groups_for(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.leaky_relu(self.norm(self.conv2(self.conv1(x))))
