"""Mini-batch training with validation-MRR model selection."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import TripleStore, negative_sample
from .encoder import EncoderConfig, EncoderGraphs, build_graphs
from .evaluation import evaluate_model
from .model import ScoreWeights, WGEModel

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; ``snapshot`` holds the last good parameters."""

    def __init__(self, message: str, snapshot: dict | None, epoch: int):
        super().__init__(message)
        self.snapshot = snapshot
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    epochs: int = 100
    n_neg: int = 10
    beta: float = 0.2
    n_layers: int = 2
    dim: int = 64
    alpha0: float = 0.6
    seed: int = 0
    eval_every: int = 1
    eval_split: str = "valid"
    patience: int = 0          # 0 disables early stopping
    filter_negatives: bool = True
    variant: str = "two-view"
    activation: str = "tanh"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "epochs", "n_neg", "dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.eval_every < 0 or self.patience < 0:
            raise ValueError("eval_every and patience must be >= 0")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.eval_split not in ("train", "valid", "test"):
            raise ValueError(f"unknown eval_split {self.eval_split!r}")
        self.encoder_config()
        self.score_weights()

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(n_layers=self.n_layers, dim=self.dim, variant=self.variant,
                             activation=self.activation)

    def score_weights(self) -> ScoreWeights:
        return ScoreWeights.from_alpha0(self.alpha0, self.n_layers)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    model: WGEModel
    best_snapshot: dict
    best_epoch: int
    best_metrics: dict | None
    history: list[dict] = field(default_factory=list)


def train_step(model: WGEModel, optimizer: ad.Adam, triples: np.ndarray, labels: np.ndarray) -> float:
    optimizer.zero_grad()
    tape = ad.Tape()
    loss = model.loss(tape, triples, labels)
    value = float(loss.value)
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    tape.backward(loss)
    optimizer.step()
    return value


def train(config: TrainConfig, store: TripleStore, graphs: EncoderGraphs | None = None,
          on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Train a model and keep the parameters with the best evaluation MRR.

    Every epoch appends ``{"epoch", "loss"}`` to the history; epochs
    that evaluate also append ``{"epoch", "split", "mrr", "hits@k", ...}``.
    Without any evaluation the final parameters are returned as best.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    if graphs is None:
        graphs = build_graphs(store, config.variant, config.beta)
    model = WGEModel(config.encoder_config(), graphs, config.score_weights(), rng=rng)
    optimizer = ad.Adam(model.parameters(), lr=config.lr, beta1=config.adam_beta1,
                        beta2=config.adam_beta2, eps=config.adam_eps)
    train_triples = store.train
    known = store.train_set if config.filter_negatives else None
    eval_split = config.eval_split if len(store.split(config.eval_split)) else "train"

    history: list[dict] = []

    def emit(rec: dict) -> None:
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    best_snapshot, best_epoch, best_metrics = model.snapshot(), 0, None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_triples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            pos = train_triples[order[start:start + config.batch_size]]
            batch = negative_sample(pos, store.vocab.n_entities, config.n_neg, rng, known=known)
            try:
                losses.append(train_step(model, optimizer, batch.triples, batch.labels))
            except (FloatingPointError, ad.NonFiniteGradientError) as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: {exc}", best_snapshot, epoch) from exc
        emit({"epoch": epoch, "loss": float(np.mean(losses))})
        log.debug("epoch %d took %.2fs", epoch, time.perf_counter() - started)

        if config.eval_every and (epoch % config.eval_every == 0 or epoch == config.epochs):
            report = evaluate_model(model, store, eval_split)
            metrics = report.metrics()
            emit({"epoch": epoch, "split": eval_split, **metrics})
            if best_metrics is None or metrics["mrr"] > best_metrics["mrr"]:
                best_snapshot, best_epoch, best_metrics = model.snapshot(), epoch, metrics
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                    break

    if best_metrics is None:
        best_snapshot, best_epoch = model.snapshot(), config.epochs
    model.load_snapshot(best_snapshot)
    return TrainResult(model, best_snapshot, best_epoch, best_metrics, history)
