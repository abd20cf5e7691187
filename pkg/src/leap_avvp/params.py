"""Named parameter tables and initializers shared by the model modules."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamTable(dict):
    """``name -> Tensor`` mapping; every entry requires gradients."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def prefixed(self, prefix: str) -> "ParamTable":
        sub = ParamTable()
        for k, v in self.items():
            sub[f"{prefix}/{k}"] = v
        return sub

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def zeros(*shape: int) -> np.ndarray:
    return np.zeros(shape)


def ones(*shape: int) -> np.ndarray:
    return np.ones(shape)
