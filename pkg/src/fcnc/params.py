"""Named parameter tensors with paired gradient buffers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray
    penalized: bool = True  # participates in the squared-weight penalty


@dataclass
class ParamSet:
    """Ordered name -> Param map.  Iteration order is insertion order.

    Consumers hold references to ``value``/``grad`` arrays, so updates must
    mutate in place (``value -= step``, ``np.copyto``) rather than rebind.
    """

    _params: dict[str, Param] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray, penalized: bool = True) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        value = np.ascontiguousarray(value)
        p = Param(name, value, np.zeros_like(value), penalized)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad.fill(0.0)

    def total_size(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def squared_weight_sum(self) -> float:
        """Sum of squares over penalized parameters, in insertion order."""
        total = 0.0
        for p in self._params.values():
            if p.penalized:
                total += float(np.sum(np.square(p.value)))
        return total
