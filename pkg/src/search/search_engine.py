# src/search/search_engine.py

"""
Alternating search stage: one weight update per training mini-batch, and every
`update_frequency` weight updates one controller update on a validation
mini-batch. Stops on validation-loss early stopping or the epoch cap, then
selects fields from the controller.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.common.artifacts import TraceWriter, write_json
from src.common.errors import ConfigError, ContractViolation, DivergenceError
from src.common.settings import RunConfig
from src.controller.controller import (
    Controller,
    GateSample,
    SelectionMode,
    TemperatureCounter,
    TemperatureSchedule,
    apply_gates,
    apply_gates_backward,
)
from src.core.checkpoint import write_checkpoint
from src.core.ops import bce_loss
from src.core.rng import Rng
from src.data.schema import Batch, DatasetSplits
from src.data.splits import cycle_batches, make_batches
from src.model.recommender import ModelConfig, RecommendationModel


@dataclass(frozen=True)
class SearchConfig:
    k: int = 4
    update_frequency: int = 1
    max_epochs: int = 30
    patience: int = 3
    min_delta: float = 1e-5
    batch_size: int = 2048
    seed: int = 2022
    mode: SelectionMode = SelectionMode.GUMBEL
    model_learning_rate: float = 1e-4
    controller_learning_rate: float = 1e-4
    temperature_counter: TemperatureCounter = TemperatureCounter.CONTROLLER
    show_progress: bool = False

    def __post_init__(self):
        if self.update_frequency < 1:
            raise ConfigError(f"update_frequency must be >= 1, got {self.update_frequency}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")

    @classmethod
    def from_run_config(cls, config: RunConfig) -> "SearchConfig":
        return cls(
            k=config.search.k,
            update_frequency=config.search.update_frequency,
            max_epochs=config.search.max_epochs,
            patience=config.search.patience,
            min_delta=config.search.min_delta,
            batch_size=config.search.batch_size,
            seed=config.seed,
            mode=config.controller.mode,
            model_learning_rate=config.model.learning_rate,
            controller_learning_rate=config.controller.learning_rate,
            temperature_counter=config.controller.temperature_counter,
            show_progress=config.project.show_progress,
        )


def build_controller(config: RunConfig, num_fields: int) -> Controller:
    settings = config.controller
    return Controller(
        num_fields,
        mode=settings.mode,
        learning_rate=settings.learning_rate,
        schedule=TemperatureSchedule(floor=settings.temperature_floor, slope=settings.temperature_slope),
        noise_granularity=settings.noise_granularity,
    )


@dataclass
class SearchTrace:
    """Step records (one per weight update, in step order) plus per-epoch summaries."""

    steps: List[Dict[str, Any]] = field(default_factory=list)
    epochs: List[Dict[str, Any]] = field(default_factory=list)
    weight_updates: int = 0
    controller_updates: int = 0
    seconds: float = 0.0

    @property
    def epoch_val_losses(self) -> List[float]:
        return [e["val_loss"] for e in self.epochs if e["val_loss"] is not None]

    @property
    def alpha_history(self) -> List[List[float]]:
        return [s["alpha_keep"] for s in self.steps if "alpha_keep" in s]


@dataclass
class SearchResult:
    selected: List[int]
    alpha: List[List[float]]
    mode: SelectionMode
    trace: SearchTrace

    def selection_payload(self, config_hash: str, seed: int, field_names: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        payload = {
            "selected": self.selected,
            "alpha": self.alpha,
            "config_hash": config_hash,
            "seed": seed,
            "mode": self.mode.value,
        }
        if field_names is not None:
            payload["selected_names"] = [field_names[n] for n in self.selected]
        return payload


def converged(
    history: Union[SearchTrace, Sequence[float]],
    patience: int,
    min_delta: float = 1e-5,
    max_epochs: Optional[int] = None,
) -> bool:
    """
    True once the best epoch validation loss has not improved by more than
    `min_delta` for `patience` consecutive epochs, or `max_epochs` epochs are done.
    """
    losses = history.epoch_val_losses if isinstance(history, SearchTrace) else list(history)
    if max_epochs is not None and len(losses) >= max_epochs:
        return True
    best = float("inf")
    since_best = 0
    for loss in losses:
        if loss < best - min_delta:
            best = loss
            since_best = 0
        else:
            since_best += 1
    return since_best >= patience


class SearchEngine:
    """Owns the two optimizers and the random streams of one search run."""

    def __init__(self, config: SearchConfig, model: RecommendationModel, controller: Controller, rng: Optional[Rng] = None):
        self.logger = logging.getLogger("SearchEngine")
        if controller.num_fields != len(model.config.active_fields):
            raise ContractViolation(
                f"controller has {controller.num_fields} fields, model has {len(model.config.active_fields)} active"
            )
        self.config = config
        self.model = model
        self.controller = controller
        self.rng = rng or Rng(config.seed)
        self.model_optimizer = model.create_optimizer(config.model_learning_rate)
        self.weight_updates = 0

    def _temperature_step(self) -> int:
        if self.config.temperature_counter == TemperatureCounter.WEIGHT:
            return self.weight_updates
        return self.controller.update_count

    def _gated_forward(self, batch: Batch, training: bool):
        sample = self.controller.sample_gates(self.rng.stream("gumbel"), self._temperature_step(), len(batch))
        embeddings, embedding_record = self.model.embed_batch(batch)
        gated = apply_gates(embeddings, sample.keep)
        predictions, record = self.model.forward(gated, training=training, generator=self.rng.stream("dropout"))
        loss, grad_predictions = bce_loss(predictions, batch.labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite {batch.split} loss at weight step {self.weight_updates}")
        return sample, embeddings, embedding_record, record, loss, grad_predictions

    def weight_step(self, batch: Batch) -> float:
        """One update of the model weights on a training batch; the controller is left alone."""
        if batch.split != "train":
            raise ContractViolation(f"weight updates consume training batches only, got '{batch.split}'")
        sample, embeddings, embedding_record, record, loss, grad_predictions = self._gated_forward(batch, training=True)
        self.model.params.zero_grad()
        grad_gated = self.model.backward(record, grad_predictions)
        _, grad_embeddings = apply_gates_backward(grad_gated, embeddings, sample.keep)
        self.model.embedding_backward(embedding_record, grad_embeddings)
        self.model_optimizer.step()
        self.controller.params.zero_grad()
        self.weight_updates += 1
        return loss

    def controller_step(self, batch: Batch) -> Tuple[float, GateSample]:
        """
        One update of the controller logits on a validation batch. The model runs
        in evaluation mode and its weights are not touched.
        """
        if batch.split != "validation":
            raise ContractViolation(f"controller updates consume validation batches only, got '{batch.split}'")
        sample, embeddings, _, record, loss, grad_predictions = self._gated_forward(batch, training=False)
        grad_gated = self.model.backward(record, grad_predictions)
        grad_gates, _ = apply_gates_backward(grad_gated, embeddings, sample.keep)
        self.model.params.zero_grad()
        self.controller.params.zero_grad()
        self.controller.accumulate_gate_grad(sample, grad_gates)
        self.controller.step()
        return loss, sample

    def run(self, splits: DatasetSplits, trace_writer: Optional[TraceWriter] = None) -> SearchResult:
        """Runs the alternating loop until convergence and returns the selection."""
        if len(splits.train) == 0 or len(splits.validation) == 0:
            raise ConfigError("search needs non-empty training and validation splits")
        n = self.controller.num_fields
        if not self.config.mode.selects_by_threshold and not 1 <= self.config.k <= n:
            raise ConfigError(f"K must lie in [1, {n}], got {self.config.k}")

        trace = SearchTrace()
        validation_seed = int(self.rng.stream("validation").integers(2**63))
        validation_batches: Iterator[Batch] = cycle_batches(splits.validation, self.config.batch_size, validation_seed)
        started = time.perf_counter()
        epochs = range(self.config.max_epochs)
        if self.config.show_progress:
            epochs = tqdm(epochs, desc="Search epochs")

        self.logger.info(
            f"Search started: {n} fields, K={self.config.k}, mode={self.config.mode.value}, "
            f"f={self.config.update_frequency}, {len(splits.train)} training rows"
        )
        try:
            for epoch in epochs:
                train_losses, val_losses = [], []
                for batch in make_batches(splits.train, self.config.batch_size, shuffle=True, seed=self.config.seed, epoch=epoch):
                    step = self.weight_updates
                    tau = self.controller.schedule.temperature(self._temperature_step())
                    train_loss = self.weight_step(batch)
                    train_losses.append(train_loss)
                    record: Dict[str, Any] = {"type": "step", "t": step, "epoch": epoch, "tau": tau, "train_loss": train_loss}
                    if self.weight_updates % self.config.update_frequency == 0:
                        val_loss, sample = self.controller_step(next(validation_batches))
                        val_losses.append(val_loss)
                        record.update(sample.to_record())
                        record["val_loss"] = val_loss
                        record["alpha_keep"] = self.controller.alpha_keep().tolist()
                    trace.steps.append(record)
                    if trace_writer is not None:
                        trace_writer.write(record)

                summary = {
                    "type": "epoch",
                    "epoch": epoch,
                    "train_loss": float(np.mean(train_losses)) if train_losses else None,
                    "val_loss": float(np.mean(val_losses)) if val_losses else None,
                }
                trace.epochs.append(summary)
                if trace_writer is not None:
                    trace_writer.write(summary)
                self.logger.info(
                    f"Epoch {epoch}: train loss {summary['train_loss']}, validation loss {summary['val_loss']}, "
                    f"alpha_keep {np.round(self.controller.alpha_keep(), 4).tolist()}"
                )
                if trace.epoch_val_losses and converged(trace, self.config.patience, self.config.min_delta):
                    self.logger.info(f"Validation loss stopped improving; search converged after {epoch + 1} epochs")
                    break
        except DivergenceError as e:
            self.logger.error(f"Search diverged: {e}")
            if trace_writer is not None:
                trace_writer.write({"type": "aborted", "t": self.weight_updates, "reason": str(e)})
            raise

        trace.weight_updates = self.weight_updates
        trace.controller_updates = self.controller.update_count
        trace.seconds = time.perf_counter() - started
        selected = self.controller.select(self.config.k)
        result = SearchResult(
            selected=selected,
            alpha=self.controller.alpha().tolist(),
            mode=self.config.mode,
            trace=trace,
        )
        if trace_writer is not None:
            trace_writer.write({
                "type": "summary",
                "weight_updates": trace.weight_updates,
                "controller_updates": trace.controller_updates,
                "seconds": trace.seconds,
                "selected": selected,
            })
        self.logger.info(f"Selected fields: {selected}")
        return result

    def save_checkpoint(self, path: str, metadata: Optional[Dict[str, Any]] = None) -> None:
        """Model and controller parameters, both optimizers' moments and the RNG streams."""
        header = {
            "model_config": self.model.config.model_dump(mode="json"),
            "model_seed": self.model.seed,
            "controller": {
                "mode": self.controller.mode.value,
                "update_count": self.controller.update_count,
                "weight_updates": self.weight_updates,
            },
            **(metadata or {}),
        }
        write_checkpoint(
            path,
            header,
            {
                "model": (self.model.params, self.model_optimizer),
                "controller": (self.controller.params, self.controller.optimizer),
            },
            rng=self.rng,
        )
        self.logger.info(f"Search checkpoint written to {path}")


def run_search(
    config: SearchConfig,
    splits: DatasetSplits,
    model: RecommendationModel,
    controller: Controller,
    trace_writer: Optional[TraceWriter] = None,
) -> SearchResult:
    return SearchEngine(config, model, controller).run(splits, trace_writer)


def search_from_config(
    config: RunConfig,
    splits: DatasetSplits,
    out_dir: Optional[str] = None,
) -> SearchResult:
    """
    Builds a fresh model and controller from the run config, searches, and (when
    `out_dir` is given) writes trace.jsonl, selection.json and search.ckpt.
    """
    search_config = SearchConfig.from_run_config(config)
    model = RecommendationModel(ModelConfig.for_dataset(splits.cardinalities, config.model), seed=config.seed)
    controller = build_controller(config, splits.num_fields)
    engine = SearchEngine(search_config, model, controller)
    config_hash = config.config_hash()
    if out_dir is None:
        return engine.run(splits)

    header = {"config_hash": config_hash, "seed": config.seed, "fields": splits.field_names(), "mode": search_config.mode.value}
    with TraceWriter(os.path.join(out_dir, "trace.jsonl"), header) as writer:
        result = engine.run(splits, writer)
    write_json(
        os.path.join(out_dir, "selection.json"),
        result.selection_payload(config_hash, config.seed, splits.field_names()),
    )
    engine.save_checkpoint(os.path.join(out_dir, "search.ckpt"), {"config_hash": config_hash, "seed": config.seed})
    return result
