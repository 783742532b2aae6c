# src/controller/controller.py

"""
Per-field selection controller.

Every field n owns a logit pair (l_keep, l_drop); alpha_n = softmax of the pair,
so alpha_keep + alpha_drop = 1 by construction and equal logits mean 0.5/0.5.
During search the gate multiplying field n's embedding is either a
Gumbel-Softmax relaxation of a keep/drop draw or alpha_keep itself.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.common.errors import ConfigError, ContractViolation
from src.core.optimizer import Adam
from src.core.parameters import ParameterStore

KEEP, DROP = 0, 1
LOGITS = "controller.logits"

logger = logging.getLogger("Controller")


class SelectionMode(str, Enum):
    GUMBEL = "gumbel"                        # Gumbel-Softmax gates, top-K
    PLAIN_SOFTMAX = "plain_softmax"          # alpha gates, top-K
    ARGMAX_THRESHOLD = "argmax_threshold"    # Gumbel-Softmax gates, alpha_keep > 0.5
    SOFTMAX_THRESHOLD = "softmax_threshold"  # alpha gates, alpha_keep > 0.5

    @property
    def uses_gumbel_noise(self) -> bool:
        return self in (SelectionMode.GUMBEL, SelectionMode.ARGMAX_THRESHOLD)

    @property
    def selects_by_threshold(self) -> bool:
        return self in (SelectionMode.ARGMAX_THRESHOLD, SelectionMode.SOFTMAX_THRESHOLD)


class NoiseGranularity(str, Enum):
    BATCH = "batch"
    EXAMPLE = "example"


class TemperatureCounter(str, Enum):
    CONTROLLER = "controller"
    WEIGHT = "weight"


@dataclass(frozen=True)
class TemperatureSchedule:
    floor: float = 0.01
    slope: float = 5e-5
    initial: float = 1.0

    def temperature(self, step: int) -> float:
        return max(self.floor, self.initial - self.slope * step)


@dataclass(frozen=True)
class GateSample:
    """
    Gate probabilities [p_keep, p_drop] with shape (N, 2), or (B, N, 2) when noise is
    drawn per example. `gumbel` holds the noise used (None for noise-free gates).
    """

    probabilities: np.ndarray
    temperature: float
    gumbel: Optional[np.ndarray] = None

    @property
    def keep(self) -> np.ndarray:
        return self.probabilities[..., KEEP]

    def to_record(self) -> dict:
        keep = self.keep if self.keep.ndim == 1 else self.keep.mean(axis=0)
        return {"tau": self.temperature, "p_keep": keep.tolist()}


def _softmax_pairs(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _log_softmax_pairs(logits: np.ndarray) -> np.ndarray:
    top = logits.max(axis=-1, keepdims=True)
    return logits - top - np.log(np.exp(logits - top).sum(axis=-1, keepdims=True))


def sample_gumbel(generator: np.random.Generator, shape: Union[int, Tuple[int, ...]]) -> np.ndarray:
    """Standard Gumbel draws g = -log(-log(u)), u ~ U(0, 1) kept away from 0 and 1."""
    tiny = np.finfo(np.float64).tiny
    u = np.clip(generator.random(shape), tiny, 1.0 - np.finfo(np.float64).eps)
    return -np.log(-np.log(u))


class Controller:
    """Learnable logit pairs for N fields plus their optimizer and gate schedule."""

    def __init__(
        self,
        num_fields: int,
        mode: SelectionMode = SelectionMode.GUMBEL,
        learning_rate: float = 1e-4,
        schedule: Optional[TemperatureSchedule] = None,
        noise_granularity: NoiseGranularity = NoiseGranularity.BATCH,
    ):
        if num_fields < 1:
            raise ConfigError(f"controller needs at least one field, got {num_fields}")
        self.logger = logging.getLogger("Controller")
        self.num_fields = num_fields
        self.mode = SelectionMode(mode)
        self.schedule = schedule or TemperatureSchedule()
        self.noise_granularity = NoiseGranularity(noise_granularity)
        self.params = ParameterStore()
        self.params.add(LOGITS, np.zeros((num_fields, 2)))
        self.optimizer = Adam(self.params, learning_rate=learning_rate)
        self.update_count = 0

    @property
    def logits(self) -> np.ndarray:
        return self.params[LOGITS]

    def alpha(self) -> np.ndarray:
        return _softmax_pairs(self.logits)

    def alpha_keep(self) -> np.ndarray:
        return self.alpha()[:, KEEP]

    def sample_gates(self, generator: np.random.Generator, step: int, batch_size: Optional[int] = None) -> GateSample:
        """Fresh gates for one mini-batch according to the selection mode."""
        if not self.mode.uses_gumbel_noise:
            return soft_gate_expectation(self)
        if self.noise_granularity == NoiseGranularity.EXAMPLE:
            if batch_size is None:
                raise ContractViolation("per-example noise needs the batch size")
            shape: Tuple[int, ...] = (batch_size, self.num_fields, 2)
        else:
            shape = (self.num_fields, 2)
        return gate_probabilities(self, sample_gumbel(generator, shape), self.schedule.temperature(step))

    def accumulate_gate_grad(self, sample: GateSample, grad_keep: np.ndarray) -> None:
        self.params.grad(LOGITS)[...] += gate_backward(sample, grad_keep)

    def step(self) -> None:
        self.optimizer.step()
        self.update_count += 1

    def select(self, k: int) -> List[int]:
        if self.mode.selects_by_threshold:
            return select_by_threshold(self)
        return select_top_k(self, k)


def gate_probabilities(controller: Controller, gumbel: np.ndarray, temperature: float) -> GateSample:
    """p_j = softmax_j((log alpha_j + g_j) / tau) per field (and per example if noise is 3-D)."""
    if temperature <= 0:
        raise ContractViolation(f"temperature must be positive, got {temperature}")
    if gumbel.shape[-2:] != (controller.num_fields, 2):
        raise ContractViolation(f"gumbel noise shape {gumbel.shape} does not end in ({controller.num_fields}, 2)")
    scores = (_log_softmax_pairs(controller.logits) + gumbel) / temperature
    return GateSample(probabilities=_softmax_pairs(scores), temperature=float(temperature), gumbel=gumbel)


def soft_gate_expectation(controller: Controller) -> GateSample:
    """Noise-free gates: the keep probability alpha_keep itself."""
    return GateSample(probabilities=controller.alpha(), temperature=1.0, gumbel=None)


def gate_backward(sample: GateSample, grad_keep: np.ndarray) -> np.ndarray:
    """
    d loss / d logits (N, 2) from d loss / d p_keep. The log-normaliser of alpha
    cancels inside the pair softmax, so the chain is the softmax Jacobian over tau.
    """
    p = sample.probabilities
    if grad_keep.shape != p.shape[:-1]:
        raise ContractViolation(f"gate gradient shape {grad_keep.shape} does not match gates {p.shape[:-1]}")
    upstream = np.zeros_like(p)
    upstream[..., KEEP] = grad_keep
    dscores = p * (upstream - (upstream * p).sum(axis=-1, keepdims=True))
    dlogits = dscores / sample.temperature
    while dlogits.ndim > 2:
        dlogits = dlogits.sum(axis=0)
    return dlogits


def _field_blocks(embeddings: np.ndarray, num_fields: int) -> np.ndarray:
    if embeddings.ndim != 2 or embeddings.shape[1] % num_fields:
        raise ContractViolation(f"embedding matrix {embeddings.shape} is not {num_fields} equal field blocks")
    return embeddings.reshape(embeddings.shape[0], num_fields, -1)


def apply_gates(embeddings: np.ndarray, gates: np.ndarray) -> np.ndarray:
    """e'_n = gate_n * e_n for each field block of E (B, K*d); gates are (K,) or (B, K)."""
    num_fields = gates.shape[-1]
    blocks = _field_blocks(embeddings, num_fields)
    if gates.ndim == 2 and gates.shape[0] != blocks.shape[0]:
        raise ContractViolation(f"per-example gates {gates.shape} do not match batch size {blocks.shape[0]}")
    if gates.ndim not in (1, 2):
        raise ContractViolation(f"gates must be 1-D or 2-D, got shape {gates.shape}")
    return (blocks * gates[..., None]).reshape(embeddings.shape)


def apply_gates_backward(grad_out: np.ndarray, embeddings: np.ndarray, gates: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (d loss / d gates shaped like `gates`, d loss / d E)."""
    num_fields = gates.shape[-1]
    grad_blocks = _field_blocks(grad_out, num_fields)
    blocks = _field_blocks(embeddings, num_fields)
    per_example = (grad_blocks * blocks).sum(axis=2)
    grad_gates = per_example if gates.ndim == 2 else per_example.sum(axis=0)
    grad_embeddings = (grad_blocks * gates[..., None]).reshape(embeddings.shape)
    return grad_gates, grad_embeddings


def _keep_scores(source: Union[Controller, np.ndarray, Sequence[float]]) -> np.ndarray:
    if isinstance(source, Controller):
        return source.alpha_keep()
    return np.asarray(source, dtype=np.float64)


def select_top_k(source: Union[Controller, np.ndarray, Sequence[float]], k: int) -> List[int]:
    """The K fields with the largest alpha_keep; ties go to the lower field index; sorted ascending."""
    scores = _keep_scores(source)
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"K must lie in [1, {n}], got {k}")
    order = np.lexsort((np.arange(n), -scores))
    return sorted(int(i) for i in order[:k])


def select_by_threshold(source: Union[Controller, np.ndarray, Sequence[float]], threshold: float = 0.5) -> List[int]:
    """Every field whose alpha_keep exceeds the threshold; may be empty."""
    selected = [int(i) for i in np.flatnonzero(_keep_scores(source) > threshold)]
    if not selected:
        logger.warning(f"Degenerate selection: no field has alpha_keep > {threshold}")
    return selected


def init_controller(num_fields: int, **kwargs) -> Controller:
    """A controller with equal logits, so every field starts at alpha = (0.5, 0.5)."""
    return Controller(num_fields, **kwargs)
