# src/core/parameters.py

from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from src.common.errors import ContractViolation, NonFiniteError


class ParameterStore:
    """
    Named float64 parameter arrays with parallel gradient buffers.
    Gradient arrays always have the shape of their parameter.
    """

    def __init__(self):
        self._values: Dict[str, np.ndarray] = {}
        self._grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._values:
            raise ContractViolation(f"Parameter '{name}' already exists")
        array = np.array(value, dtype=np.float64, copy=True)
        self._values[name] = array
        self._grads[name] = np.zeros_like(array)
        return array

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._values[name]
        except KeyError:
            raise ContractViolation(f"Unknown parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def names(self) -> List[str]:
        return list(self._values)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        return iter(self._values.items())

    def grad(self, name: str) -> np.ndarray:
        try:
            return self._grads[name]
        except KeyError:
            raise ContractViolation(f"Unknown parameter '{name}'") from None

    def grads(self) -> Dict[str, np.ndarray]:
        return self._grads

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def set(self, name: str, value: np.ndarray) -> None:
        """Overwrites a parameter in place, keeping its shape."""
        target = self[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != target.shape:
            raise ContractViolation(f"Parameter '{name}' has shape {target.shape}, got {value.shape}")
        target[...] = value

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self._values.items()}

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        missing = set(self._values) - set(values)
        if missing:
            raise ContractViolation(f"Missing parameters: {sorted(missing)}")
        for name in self._values:
            self.set(name, values[name])

    def check_finite(self) -> None:
        for name, value in self._values.items():
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(name, what="value")
        for name, grad in self._grads.items():
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(name, what="gradient")

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self._values.values()))
