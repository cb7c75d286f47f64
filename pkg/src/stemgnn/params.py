"""Flatten/rebuild nested dataclasses of tensors by dotted name."""

from __future__ import annotations

import dataclasses
from typing import Callable, Iterator, Mapping, TypeVar

import numpy as np

from .tensor import Tensor

P = TypeVar("P")


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if isinstance(value, Tensor):
            yield name, value
        elif dataclasses.is_dataclass(value):
            yield from named_tensors(value, name + ".")


def flatten(obj) -> dict[str, Tensor]:
    return dict(named_tensors(obj))


def rebuild(obj: P, values: Mapping[str, np.ndarray | Tensor], prefix: str = "",
            requires_grad: bool = True) -> P:
    """Copy of ``obj`` with every tensor named in ``values`` replaced."""
    changes = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if isinstance(value, Tensor):
            if name in values:
                new = values[name]
                if not isinstance(new, Tensor):
                    new = Tensor(new, requires_grad=requires_grad)
                if new.shape != value.shape:
                    raise ValueError(f"{name}: shape {new.shape} != {value.shape}")
                changes[f.name] = new
        elif dataclasses.is_dataclass(value):
            changes[f.name] = rebuild(value, values, name + ".", requires_grad)
    return dataclasses.replace(obj, **changes)


def map_tensors(obj: P, fn: Callable[[str, Tensor], np.ndarray]) -> P:
    return rebuild(obj, {k: fn(k, t) for k, t in named_tensors(obj)})


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
