# src/model/recommender.py

"""
Embedding + MLP click-through model.

Each active field n owns an embedding table A_n of shape (d, D_n); a row's
field vector is the column of A_n at its hot index. Field vectors are
concatenated in field order into E (B, K*d), optionally scaled per field by the
controller's gates, and fed through ReLU hidden layers with dropout and a
single logistic output unit.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.common.errors import ContractViolation
from src.core.checkpoint import read_checkpoint, write_checkpoint
from src.core.ops import (
    AffineContext,
    dense_affine_backward,
    dense_affine_forward,
    dropout,
    dropout_backward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)
from src.core.optimizer import Adam
from src.core.parameters import ParameterStore
from src.core.rng import Rng, derive_generator
from src.data.schema import Batch

MODEL_GROUP = "model"
EMBEDDING_STD = 0.01


class ModelConfig(BaseModel):
    """Shape of one recommendation model; `active_fields` index the dataset's field list."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_fields: int = Field(..., ge=1)
    field_cardinalities: Tuple[int, ...]
    embedding_dim: int = Field(16, ge=1)
    hidden_sizes: Tuple[int, ...] = (16, 8)
    dropout: float = Field(0.2, ge=0.0, lt=1.0)
    active_fields: Tuple[int, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _default_mask(cls, data: Any):
        if isinstance(data, dict) and not data.get("active_fields"):
            data = dict(data)
            data["active_fields"] = tuple(range(int(data.get("num_fields", 0))))
        return data

    @model_validator(mode="after")
    def _check(self):
        if len(self.field_cardinalities) != self.num_fields:
            raise ValueError(
                f"{len(self.field_cardinalities)} cardinalities given for {self.num_fields} fields"
            )
        if any(c < 1 for c in self.field_cardinalities):
            raise ValueError("every field needs a cardinality of at least 1")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be a non-empty list of positive widths, got {list(self.hidden_sizes)}")
        _check_selection(self.active_fields, self.num_fields)
        return self

    @property
    def input_width(self) -> int:
        return len(self.active_fields) * self.embedding_dim

    @classmethod
    def for_dataset(cls, cardinalities: Sequence[int], settings, active_fields: Optional[Sequence[int]] = None) -> "ModelConfig":
        """Builds a config from the `model` settings section for a dataset's cardinalities."""
        return cls(
            num_fields=len(cardinalities),
            field_cardinalities=tuple(int(c) for c in cardinalities),
            embedding_dim=settings.embedding_dim,
            hidden_sizes=tuple(settings.hidden_sizes),
            dropout=settings.dropout,
            active_fields=tuple(active_fields or ()),
        )


def _check_selection(selected: Sequence[int], num_fields: int) -> None:
    if not selected:
        raise ContractViolation("field selection is empty")
    if len(set(selected)) != len(selected):
        raise ContractViolation(f"field selection has duplicates: {list(selected)}")
    bad = [n for n in selected if not 0 <= n < num_fields]
    if bad:
        raise ContractViolation(f"field indices {bad} outside [0, {num_fields})")


@dataclass
class EmbeddingRecord:
    indices: np.ndarray  # (B, K) hot indices of the active fields


@dataclass
class ForwardRecord:
    """Activations cached by one forward pass; usable by exactly one backward."""

    inputs: np.ndarray
    contexts: List[AffineContext]
    pre_activations: List[np.ndarray]
    masks: List[Optional[np.ndarray]]
    predictions: np.ndarray
    owner: int
    consumed: bool = field(default=False)


def embedding_name(field_id: int) -> str:
    return f"embedding.{field_id}"


class RecommendationModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.logger = logging.getLogger("RecommendationModel")
        self.config = config
        self.seed = int(seed)
        self.params = ParameterStore()
        self._initialize(derive_generator(self.seed, "init"))

    # --- parameters ---

    def _initialize(self, generator: np.random.Generator) -> None:
        d = self.config.embedding_dim
        for n in self.config.active_fields:
            self.params.add(embedding_name(n), generator.normal(0.0, EMBEDDING_STD, size=(d, self.config.field_cardinalities[n])))
        fan_in = self.config.input_width
        for m, width in enumerate(self.config.hidden_sizes):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.add(f"mlp.{m}.weight", generator.uniform(-bound, bound, size=(fan_in, width)))
            self.params.add(f"mlp.{m}.bias", generator.uniform(-bound, bound, size=(width,)))
            fan_in = width
        bound = 1.0 / np.sqrt(fan_in)
        self.params.add("output.weight", generator.uniform(-bound, bound, size=(fan_in, 1)))
        self.params.add("output.bias", generator.uniform(-bound, bound, size=(1,)))

    def embedding_names(self) -> List[str]:
        return [embedding_name(n) for n in self.config.active_fields]

    def dense_names(self) -> List[str]:
        return [name for name in self.params.names() if not name.startswith("embedding.")]

    def create_optimizer(self, learning_rate: float) -> Adam:
        return Adam(self.params, learning_rate=learning_rate)

    # --- embeddings ---

    def embed_batch(self, batch: Batch) -> Tuple[np.ndarray, EmbeddingRecord]:
        """E (B, K*d): active fields' embedding columns concatenated in field order."""
        return self.embed_indices(batch.indices)

    def embed_indices(self, indices: np.ndarray) -> Tuple[np.ndarray, EmbeddingRecord]:
        indices = np.asarray(indices)
        if indices.ndim != 2 or indices.shape[1] != self.config.num_fields:
            raise ContractViolation(f"expected indices of shape (B, {self.config.num_fields}), got {indices.shape}")
        active = indices[:, list(self.config.active_fields)]
        blocks = []
        for k, n in enumerate(self.config.active_fields):
            column = active[:, k]
            bound = self.config.field_cardinalities[n]
            if column.size and (column.min() < 0 or column.max() >= bound):
                raise ContractViolation(f"field {n} index outside [0, {bound})")
            blocks.append(self.params[embedding_name(n)][:, column].T)
        return np.concatenate(blocks, axis=1), EmbeddingRecord(indices=active)

    def embedding_backward(self, record: EmbeddingRecord, grad_embeddings: np.ndarray) -> None:
        """Scatter-adds d loss / d E into the columns of each A_n that were gathered."""
        d = self.config.embedding_dim
        if grad_embeddings.shape != (record.indices.shape[0], self.config.input_width):
            raise ContractViolation(f"embedding gradient has shape {grad_embeddings.shape}")
        for k, n in enumerate(self.config.active_fields):
            grad = self.params.grad(embedding_name(n))
            np.add.at(grad.T, record.indices[:, k], grad_embeddings[:, k * d:(k + 1) * d])

    # --- MLP ---

    def forward(
        self,
        embeddings: np.ndarray,
        training: bool = False,
        generator: Optional[np.random.Generator] = None,
    ) -> Tuple[np.ndarray, ForwardRecord]:
        if embeddings.ndim != 2 or embeddings.shape[1] != self.config.input_width:
            raise ContractViolation(
                f"model expects input width {self.config.input_width}, got shape {embeddings.shape}"
            )
        if training and self.config.dropout > 0 and generator is None:
            raise ContractViolation("training forward with dropout needs a generator")
        contexts, pre_activations, masks = [], [], []
        hidden = embeddings
        for m in range(len(self.config.hidden_sizes)):
            z, ctx = dense_affine_forward(hidden, self.params[f"mlp.{m}.weight"], self.params[f"mlp.{m}.bias"])
            hidden, mask = dropout(relu_forward(z), self.config.dropout, generator, training)
            contexts.append(ctx)
            pre_activations.append(z)
            masks.append(mask)
        logits, ctx = dense_affine_forward(hidden, self.params["output.weight"], self.params["output.bias"])
        contexts.append(ctx)
        predictions = sigmoid_forward(logits[:, 0])
        record = ForwardRecord(
            inputs=embeddings,
            contexts=contexts,
            pre_activations=pre_activations,
            masks=masks,
            predictions=predictions,
            owner=id(self),
        )
        return predictions, record

    def backward(self, record: ForwardRecord, grad_predictions: np.ndarray) -> np.ndarray:
        """Accumulates dense-layer gradients and returns d loss / d E_gated."""
        if record.owner != id(self):
            raise ContractViolation("forward record belongs to another model")
        if record.consumed:
            raise ContractViolation("forward record already used by a backward pass")
        if grad_predictions.shape != record.predictions.shape:
            raise ContractViolation(f"prediction gradient has shape {grad_predictions.shape}")
        record.consumed = True

        grad = sigmoid_backward(grad_predictions, record.predictions)[:, None]
        grad, grad_w, grad_b = dense_affine_backward(grad, record.contexts[-1])
        self.params.grad("output.weight")[...] += grad_w
        self.params.grad("output.bias")[...] += grad_b
        for m in reversed(range(len(self.config.hidden_sizes))):
            grad = relu_backward(dropout_backward(grad, record.masks[m]), record.pre_activations[m])
            grad, grad_w, grad_b = dense_affine_backward(grad, record.contexts[m])
            self.params.grad(f"mlp.{m}.weight")[...] += grad_w
            self.params.grad(f"mlp.{m}.bias")[...] += grad_b
        return grad

    def predict(self, indices: np.ndarray) -> np.ndarray:
        """Evaluation-mode click probabilities for encoded rows (no dropout, no gates)."""
        embeddings, _ = self.embed_indices(indices)
        predictions, _ = self.forward(embeddings, training=False)
        return predictions

    # --- retraining ---

    def adapt_architecture(self, selected: Sequence[int], seed: Optional[int] = None) -> "RecommendationModel":
        return adapt_architecture(self.config, selected, self.seed if seed is None else seed)

    # --- persistence ---

    def save(
        self,
        path: str,
        optimizer: Optional[Adam] = None,
        metadata: Optional[Dict[str, Any]] = None,
        rng: Optional[Rng] = None,
    ) -> None:
        header = {
            "model_config": self.config.model_dump(mode="json"),
            "model_seed": self.seed,
            **(metadata or {}),
        }
        write_checkpoint(path, header, {MODEL_GROUP: (self.params, optimizer)}, rng=rng)
        self.logger.info(f"Model checkpoint written to {path}")

    @classmethod
    def load(cls, path: str) -> Tuple["RecommendationModel", Dict[str, Any]]:
        data = read_checkpoint(path)
        config = ModelConfig.model_validate(data.metadata["model_config"])
        model = cls(config, seed=data.metadata.get("model_seed", 0))
        data.restore(MODEL_GROUP, model.params)
        return model, data.metadata


def adapt_architecture(config: ModelConfig, selected: Sequence[int], seed: int = 0) -> RecommendationModel:
    """
    A freshly initialised model that only has embedding tables for `selected`
    and a first layer of width len(selected) * d. No weights are transferred.
    """
    _check_selection(list(selected), config.num_fields)
    adapted = config.model_copy(update={"active_fields": tuple(sorted(int(n) for n in selected))})
    return RecommendationModel(ModelConfig.model_validate(adapted.model_dump()), seed=seed)
