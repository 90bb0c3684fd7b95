"""Parameter containers and the fully connected layers used by every model."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor, dropout, relu
from .errors import DimensionError


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def param(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Registers Tensor parameters and child modules assigned as attributes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, p in self._params.items():
            yield prefix + k, p
        for k, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{k}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for k, m in self._modules.items():
            yield from m.named_modules(f"{prefix}{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"parameter {k}: stored shape {arr.shape} != {p.shape}")
            p.data[...] = arr


class ModuleDict(Module):
    def __init__(self, items: dict[str, Module] | None = None):
        super().__init__()
        for k, m in (items or {}).items():
            self[k] = m

    def __setitem__(self, key: str, value: Module) -> None:
        setattr(self, key, value)

    def __getitem__(self, key: str) -> Module:
        return self._modules[key]

    def __contains__(self, key) -> bool:
        return key in self._modules

    def __iter__(self):
        return iter(self._modules)

    def __len__(self) -> int:
        return len(self._modules)

    def items(self):
        return self._modules.items()


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._order: list[Module] = []
        for m in items:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._order)), m)
        self._order.append(m)

    def __getitem__(self, i: int) -> Module:
        return self._order[i]

    def __iter__(self):
        return iter(self._order)

    def __len__(self) -> int:
        return len(self._order)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = param(xavier_uniform(rng, in_dim, out_dim), "weight")
        self.bias = param(np.zeros(out_dim), "bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"Linear expects last dim {self.in_dim}, got shape {x.shape}")
        if x.ndim == 2:
            return x @ self.weight + self.bias
        lead = x.shape[:-1]
        y = x.reshape(-1, self.in_dim) @ self.weight + self.bias
        return y.reshape(*lead, self.out_dim)


class MLPHead(Module):
    """Task head: FC layers with ReLU and dropout between them, linear output."""

    def __init__(self, in_dim: int, hidden: tuple[int, ...], out_dim: int, dropout_rate: float,
                 rng: np.random.Generator):
        super().__init__()
        dims = (in_dim, *hidden, out_dim)
        self.layers = ModuleList(Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:]))
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = dropout(relu(x), self.dropout_rate, training, rng)
        return x
