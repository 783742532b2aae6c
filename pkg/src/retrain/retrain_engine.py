# src/retrain/retrain_engine.py

"""
Retraining stage: rebuild the model over the selected fields only, train it on
the training split with early stopping on validation logloss, and evaluate it
once on the test split.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.common.errors import ConfigError, DivergenceError, MetricUndefinedError
from src.common.settings import RunConfig
from src.core.ops import bce_loss
from src.core.optimizer import Adam
from src.core.rng import Rng
from src.data.schema import DatasetSplits, EncodedDataset
from src.data.splits import make_batches
from src.metrics.metrics import auc, logloss
from src.model.recommender import ModelConfig, RecommendationModel, adapt_architecture
from src.search.search_engine import converged


@dataclass(frozen=True)
class RetrainConfig:
    batch_size: int = 2048
    max_epochs: int = 30
    patience: int = 3
    min_delta: float = 1e-5
    learning_rate: float = 1e-4
    seed: int = 2022
    eval_workers: int = 1
    show_progress: bool = False

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "RetrainConfig":
        return cls(
            batch_size=config.retrain.batch_size,
            max_epochs=config.retrain.max_epochs,
            patience=config.retrain.patience,
            min_delta=config.search.min_delta,
            learning_rate=config.model.learning_rate,
            seed=config.seed,
            eval_workers=config.retrain.eval_workers,
            show_progress=config.project.show_progress,
        )


@dataclass
class Evaluation:
    auc: float
    logloss: float
    rows: int
    batches: int
    seconds: float

    @property
    def ms_per_batch(self) -> float:
        return 1000.0 * self.seconds / self.batches if self.batches else 0.0


@dataclass
class RetrainReport:
    selected: List[int]
    test_auc: float
    test_logloss: float
    epochs_trained: int
    best_epoch: int
    train_seconds: float
    inference_ms_per_batch: float
    validation_logloss: List[float] = field(default_factory=list)
    validation_auc: List[Optional[float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.test_auc <= 1.0:
            raise ValueError(f"AUC {self.test_auc} outside [0, 1]")
        if self.test_logloss < 0.0:
            raise ValueError(f"negative logloss {self.test_logloss}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def evaluate(model: RecommendationModel, split: EncodedDataset, batch_size: int = 2048, workers: int = 1) -> Evaluation:
    """
    Deterministic evaluation-mode pass over `split`. With workers > 1, batches
    are predicted on a thread pool and concatenated in batch order.
    """
    if tuple(split.cardinalities) != tuple(model.config.field_cardinalities):
        raise ConfigError(
            f"checkpoint expects field cardinalities {list(model.config.field_cardinalities)}, "
            f"split '{split.name}' has {list(split.cardinalities)}"
        )
    if len(split) == 0:
        raise ConfigError(f"cannot evaluate on empty split '{split.name}'")
    chunks = [split.indices[start:start + batch_size] for start in range(0, len(split), batch_size)]
    started = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(model.predict, chunks))
    else:
        parts = [model.predict(chunk) for chunk in chunks]
    seconds = time.perf_counter() - started
    predictions = np.concatenate(parts)
    return Evaluation(
        auc=auc(predictions, split.labels),
        logloss=logloss(predictions, split.labels),
        rows=len(split),
        batches=len(chunks),
        seconds=seconds,
    )


class RetrainEngine:
    """Trains one adapted model; no controller and no gates are involved."""

    def __init__(self, config: RetrainConfig, model: RecommendationModel):
        self.logger = logging.getLogger("RetrainEngine")
        self.config = config
        self.model = model
        self.optimizer: Adam = model.create_optimizer(config.learning_rate)
        self.rng = Rng(config.seed)

    def train_step(self, indices: np.ndarray, labels: np.ndarray) -> float:
        embeddings, embedding_record = self.model.embed_indices(indices)
        predictions, record = self.model.forward(embeddings, training=True, generator=self.rng.stream("dropout"))
        loss, grad_predictions = bce_loss(predictions, labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss after {self.optimizer.step_count} updates")
        self.model.params.zero_grad()
        grad_embeddings = self.model.backward(record, grad_predictions)
        self.model.embedding_backward(embedding_record, grad_embeddings)
        self.optimizer.step()
        return loss

    def _validation_metrics(self, split: EncodedDataset) -> Tuple[float, Optional[float]]:
        predictions = np.concatenate([
            self.model.predict(split.indices[start:start + self.config.batch_size])
            for start in range(0, len(split), self.config.batch_size)
        ])
        try:
            val_auc: Optional[float] = auc(predictions, split.labels)
        except MetricUndefinedError:
            val_auc = None
        return logloss(predictions, split.labels), val_auc

    def run(self, splits: DatasetSplits) -> RetrainReport:
        if len(splits.train) == 0:
            raise ConfigError("retraining needs a non-empty training split")
        has_validation = len(splits.validation) > 0
        if not has_validation:
            self.logger.warning("Validation split is empty; training for the full epoch budget")

        val_losses: List[float] = []
        val_aucs: List[Optional[float]] = []
        best_loss = float("inf")
        best_epoch = -1
        best_params = self.model.params.snapshot()
        epochs = range(self.config.max_epochs)
        if self.config.show_progress:
            epochs = tqdm(epochs, desc="Retrain epochs")

        started = time.perf_counter()
        epochs_trained = 0
        for epoch in epochs:
            for batch in make_batches(splits.train, self.config.batch_size, shuffle=True, seed=self.config.seed, epoch=epoch):
                self.train_step(batch.indices, batch.labels)
            epochs_trained += 1
            if not has_validation:
                continue
            val_loss, val_auc = self._validation_metrics(splits.validation)
            val_losses.append(val_loss)
            val_aucs.append(val_auc)
            self.logger.info(f"Epoch {epoch}: validation logloss {val_loss:.6f}, AUC {val_auc}")
            if val_loss < best_loss - self.config.min_delta:
                best_loss = val_loss
                best_epoch = epoch
                best_params = self.model.params.snapshot()
            if converged(val_losses, self.config.patience, self.config.min_delta):
                self.logger.info(f"Early stop after {epochs_trained} epochs (best epoch {best_epoch})")
                break
        train_seconds = time.perf_counter() - started

        if has_validation:
            self.model.params.load(best_params)
        else:
            best_epoch = epochs_trained - 1
        result = evaluate(self.model, splits.test, self.config.batch_size, self.config.eval_workers)
        self.logger.info(
            f"Test AUC {result.auc:.6f}, logloss {result.logloss:.6f} with fields {list(self.model.config.active_fields)}"
        )
        return RetrainReport(
            selected=list(self.model.config.active_fields),
            test_auc=result.auc,
            test_logloss=result.logloss,
            epochs_trained=epochs_trained,
            best_epoch=best_epoch,
            train_seconds=train_seconds,
            inference_ms_per_batch=result.ms_per_batch,
            validation_logloss=val_losses,
            validation_auc=val_aucs,
        )


def run_retrain(
    selected: Sequence[int],
    base_config: ModelConfig,
    config: RetrainConfig,
    splits: DatasetSplits,
) -> Tuple[RetrainReport, RetrainEngine]:
    """Adapts the architecture to `selected` (fresh weights), trains and evaluates it."""
    model = adapt_architecture(base_config, selected, seed=config.seed)
    engine = RetrainEngine(config, model)
    return engine.run(splits), engine


def resolve_retrain_fields(config: RunConfig, num_fields: int, selection: Optional[Sequence[int]]) -> List[int]:
    """Fields to retrain with: the search selection, every field, or an explicit list."""
    choice = config.retrain.fields
    if choice == "all":
        return list(range(num_fields))
    if choice == "selection":
        if selection is None:
            raise ConfigError("retrain.fields is 'selection' but no selection.json was found; run `search` first")
        return list(selection)
    return list(choice)
