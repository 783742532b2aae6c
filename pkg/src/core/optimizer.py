# src/core/optimizer.py

from typing import Any, Dict

import numpy as np

from src.common.errors import ContractViolation, NonFiniteError
from src.core.parameters import ParameterStore


class Adam:
    """
    Adaptive-moment optimizer with bias correction over a ParameterStore.

        m_t = b1 m_{t-1} + (1 - b1) g
        v_t = b2 v_{t-1} + (1 - b2) g^2
        theta -= lr * (m_t / (1 - b1^t)) / (sqrt(v_t / (1 - b2^t)) + eps)
    """

    def __init__(
        self,
        store: ParameterStore,
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ContractViolation(f"learning rate must be positive, got {learning_rate}")
        self.store = store
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = {name: np.zeros_like(value) for name, value in store.items()}
        self.second_moment = {name: np.zeros_like(value) for name, value in store.items()}

    def step(self) -> None:
        # Validate every gradient before touching any parameter.
        for name in self.store:
            grad = self.store.grad(name)
            if grad.shape != self.first_moment[name].shape:
                raise ContractViolation(f"Optimizer state for '{name}' does not match its gradient shape")
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(name)

        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for name, value in self.store.items():
            grad = self.store.grad(name)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            value -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.epsilon)
        self.store.check_finite()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name in self.store:
            arrays[f"adam.m.{name}"] = self.first_moment[name]
            arrays[f"adam.v.{name}"] = self.second_moment[name]
        return arrays

    def state_metadata(self) -> Dict[str, Any]:
        return {
            "step_count": self.step_count,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
        }

    def load_state(self, metadata: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
        self.step_count = int(metadata["step_count"])
        for name in self.store:
            self.first_moment[name][...] = arrays[f"adam.m.{name}"]
            self.second_moment[name][...] = arrays[f"adam.v.{name}"]
