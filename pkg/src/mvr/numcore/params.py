"""Named trainable parameters and their gradients."""

from __future__ import annotations

import numpy as np

from mvr.numcore.tensor import Tensor


class ParamStore:
    """Map of unique parameter names to trainable tensors.

    Gradients live on the tensors themselves and always match the parameter
    shape. Mutation (adding parameters, applying updates) is single-writer;
    reads are safe from any thread.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradient(self, name: str) -> np.ndarray:
        t = self._params[name]
        return t.grad if t.grad is not None else np.zeros_like(t.data)

    def state(self) -> dict[str, np.ndarray]:
        """Copies of all parameter arrays, keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            if name in self._params:
                if self._params[name].data.shape != value.shape:
                    raise ValueError(f"shape mismatch loading {name!r}")
                self._params[name].data = np.asarray(value, dtype=np.float64).copy()
            else:
                self.add(name, value)
