# src/core/gradcheck.py

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from src.common.errors import ContractViolation


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of analytic and central-difference gradients."""

    max_relative_error: float = 0.0
    max_absolute_error: float = 0.0
    checked: int = 0
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    per_parameter: Dict[str, float] = field(default_factory=dict)

    def passed(self, tolerance: float) -> bool:
        return self.checked > 0 and self.max_relative_error <= tolerance


def relative_error(analytic: float, numeric: float, floor: float = 1e-10) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-4,
    coordinates: int = 100,
    generator: Optional[np.random.Generator] = None,
    floor: float = 1e-10,
) -> GradCheckReport:
    """
    Compares analytic gradients against (f(theta + h) - f(theta - h)) / 2h.

    `loss_fn` must be deterministic: any randomness it uses (dropout masks,
    Gumbel noise) has to be frozen between calls. `params` are perturbed in place
    and restored afterwards. Up to `coordinates` entries per parameter are sampled
    (all entries if the parameter is smaller).
    """
    generator = generator if generator is not None else np.random.default_rng(0)
    report = GradCheckReport()

    for name, value in params.items():
        if name not in analytic:
            raise ContractViolation(f"No analytic gradient supplied for '{name}'")
        grad = analytic[name]
        if grad.shape != value.shape:
            raise ContractViolation(f"Gradient for '{name}' has shape {grad.shape}, parameter {value.shape}")

        flat_positions: List[int]
        if value.size <= coordinates:
            flat_positions = list(range(value.size))
        else:
            flat_positions = sorted(generator.choice(value.size, size=coordinates, replace=False).tolist())

        worst_here = 0.0
        for flat in flat_positions:
            index = np.unravel_index(flat, value.shape)
            original = value[index]
            value[index] = original + h
            plus = loss_fn()
            value[index] = original - h
            minus = loss_fn()
            value[index] = original
            numeric = (plus - minus) / (2.0 * h)

            a = float(grad[index])
            rel = relative_error(a, numeric, floor)
            report.checked += 1
            report.max_absolute_error = max(report.max_absolute_error, abs(a - numeric))
            worst_here = max(worst_here, rel)
            if rel >= report.max_relative_error:
                report.max_relative_error = rel
                report.worst = (name, tuple(int(i) for i in index))
        report.per_parameter[name] = worst_here

    return report
