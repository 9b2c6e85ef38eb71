"""Named container for every learnable tensor of a model."""
from __future__ import annotations

from collections.abc import Iterator, MutableMapping

import numpy as np

from .tensor import ConvKernel, Tensor, parameter


class ModelParams(MutableMapping):
    """Ordered ``name -> Tensor`` mapping.

    Names end in ``.w`` (weights, regularised) or ``.b`` (biases). Insertion
    order is stable and is the order used for checkpoints and reports.
    """

    def __init__(self, items=None):
        self._items: dict[str, Tensor] = {}
        for k, v in dict(items or {}).items():
            self[k] = v

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __setitem__(self, name: str, value) -> None:
        if not isinstance(value, Tensor):
            value = parameter(value, name)
        value.name = name
        value.requires_grad = True
        self._items[name] = value

    def __delitem__(self, name: str) -> None:
        del self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def weights(self) -> list[Tensor]:
        return [t for n, t in self._items.items() if n.endswith(".w")]

    def kernel(self, prefix: str, dilation: int = 1) -> ConvKernel:
        return ConvKernel(self[prefix + ".w"], self[prefix + ".b"], dilation)

    def add_conv(self, prefix: str, k: int, cin: int, cout: int, std: float,
                 rng: np.random.Generator, dtype) -> None:
        self[prefix + ".w"] = parameter((rng.standard_normal((k, k, cin, cout)) * std).astype(dtype), prefix + ".w")
        self[prefix + ".b"] = parameter(np.zeros(cout, dtype=dtype), prefix + ".b")

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({n: parameter(t.data.astype(dtype), n) for n, t in self._items.items()})

    def copy(self) -> "ModelParams":
        return ModelParams({n: parameter(t.data.copy(), n) for n, t in self._items.items()})

    def num_values(self) -> int:
        return sum(t.data.size for t in self._items.values())
