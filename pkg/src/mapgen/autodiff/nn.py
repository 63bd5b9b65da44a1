"""Parameters and the small module system the networks are assembled from."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, relu


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is filled in by :meth:`Module.named_parameters`."""

    __slots__ = ()

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Walks attributes (parameters, sub-modules, lists of sub-modules) in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            yield from _walk(value, f"{prefix}{attr}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str) -> "Module":
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name
        return self

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for p in self.parameters():
            if p.name not in state:
                if strict:
                    raise KeyError(f"missing parameter {p.name}")
                continue
            value = np.asarray(state[p.name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{p.name}: checkpoint shape {value.shape} != model {p.shape}")
            p.data = value.copy()


def _walk(value, name: str):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            if isinstance(item, (Parameter, Module, list, tuple)):
                yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        scale = np.sqrt(2.0 / n_in)
        self.weight = Parameter(rng.normal(0.0, scale, size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    @property
    def pair(self) -> tuple:
        return self.weight, self.bias


class MLP(Module):
    """Stack of :class:`Linear` layers with ReLU between them (not after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator, final_activation=False):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.final_activation = final_activation

    def __call__(self, x) -> Tensor:
        return F.mlp_forward([l.pair for l in self.layers], x, relu, self.final_activation)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None, pad_mode: str = "zero"):
        self.weight = Parameter(rng.normal(0.0, np.sqrt(2.0 / (k * k * cin)), size=(k, k, cin, cout)))
        self.bias = Parameter(np.zeros(cout))
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.pad_mode = pad_mode

    def __call__(self, x) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.pad_mode)


def zero_module(module: Module) -> None:
    """Set every parameter to zero (used by initialization-contract tests)."""
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
