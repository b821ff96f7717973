"""
Desk-scale optimization: Adam with decoupled weight decay, linear warmup
followed by cosine annealing, model selection by validation OA and early stopping.
"""
import logging
import math
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from distributed import LocalCluster

from classes.module import Module
from mmic00_settings import DATA, TRAINING
from models.backbone import ModelConfig, build_model
from utils.dataset import DatasetIndex, make_batches
from utils.errors import ConfigError, NonFiniteError
from utils.metrics import MetricsReport, compute_metrics
from utils.nn_ops import cross_entropy
from utils.tensor import Graph, Tensor, no_grad

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "lr", "train_loss", "train_OA", "val_OA", "val_Pre", "val_AUC"]


@dataclass
class TrainSchedule:
    total_epochs: int = TRAINING["epochs"]
    warmup_epochs: int = TRAINING["warmup_epochs"]
    base_lr: float = TRAINING["learning_rate"]
    min_lr: float = TRAINING["learning_rate"] * TRAINING["min_lr_fraction"]
    weight_decay: float = TRAINING["weight_decay"]
    patience: int = TRAINING["patience"]
    batch_size: int = TRAINING["batch_size"]
    seed: int = DATA["seed"]

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError("epochs", f"must be positive, got {self.total_epochs}")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("warmup_epochs", f"must lie in [0, epochs), got {self.warmup_epochs}")
        if self.patience < 1:
            raise ConfigError("patience", f"must be at least 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be positive, got {self.batch_size}")
        if self.base_lr <= 0:
            raise ConfigError("learning_rate", f"must be positive, got {self.base_lr}")
        if not 0 <= self.min_lr <= self.base_lr:
            raise ConfigError("min_lr", f"must lie in [0, learning_rate], got {self.min_lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", f"must be non-negative, got {self.weight_decay}")


def lr_at(epoch: int, sched: TrainSchedule) -> float:
    """Epochs are counted from 0."""
    if epoch < sched.warmup_epochs:
        return sched.base_lr * (epoch + 1) / sched.warmup_epochs
    t = epoch - sched.warmup_epochs
    period = sched.total_epochs - sched.warmup_epochs
    return sched.min_lr + 0.5 * (sched.base_lr - sched.min_lr) * (1.0 + math.cos(math.pi * t / period))


########################################################################
@dataclass
class OptimState:
    base_lr: float = TRAINING["learning_rate"]
    weight_decay: float = TRAINING["weight_decay"]
    betas: tuple[float, float] = TRAINING["betas"]
    epsilon: float = TRAINING["adam_epsilon"]
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> array view for checkpointing."""
        named = {f"m.{name}": value for name, value in self.first_moment.items()}
        named.update({f"v.{name}": value for name, value in self.second_moment.items()})
        named["step"] = np.array([float(self.step)])
        return named

    @classmethod
    def from_tensors(cls, named: dict[str, np.ndarray], **hyper) -> "OptimState":
        state = cls(**hyper)
        state.step = int(named.get("step", np.zeros(1))[0])
        for key, value in named.items():
            if key.startswith("m."):
                state.first_moment[key[2:]] = value
            elif key.startswith("v."):
                state.second_moment[key[2:]] = value
        return state


def adam_step(params: list[tuple[str, Tensor]], grads: list[np.ndarray], state: OptimState, lr: float):
    """Bias-corrected Adam; decoupled weight decay p <- p - lr*wd*p is applied before the Adam update."""
    for (name, _), grad in zip(params, grads):
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(name, "non-finite gradient")
    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for (name, tensor), grad in zip(params, grads):
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.first_moment[name], state.second_moment[name] = m, v
        data = tensor.data - lr * state.weight_decay * tensor.data
        data = data - lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        tensor.data = data.astype(tensor.dtype)


########################################################################
class EarlyStopping:
    """Tracks the best metric; only epochs past the warmup count against the patience."""

    def __init__(self, patience: int, warmup_epochs: int = 0):
        self.patience = patience
        self.warmup_epochs = warmup_epochs
        self.best = -math.inf
        self.best_epoch = None
        self.stale = 0

    def update(self, epoch: int, metric: float) -> tuple[bool, bool]:
        """epoch counts from 1; returns (improved, stop)."""
        if metric > self.best:
            self.best, self.best_epoch, self.stale = metric, epoch, 0
            return True, False
        if epoch > self.warmup_epochs:
            self.stale += 1
        return False, self.stale >= self.patience


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_metrics: MetricsReport | None
    history: pd.DataFrame
    optim_state: OptimState
    stopped_early: bool = False


@dataclass
class BatchStep:
    """Summed loss, correct predictions and the batch-mean gradients of one (shard of a) batch."""
    loss_sum: float
    correct: int
    grads: list[np.ndarray]


def batch_gradients(model: Module, images: Tensor, labels: np.ndarray) -> BatchStep:
    named = model.named_parameters()
    with Graph() as graph:
        logits = model(images)
        loss = cross_entropy(logits, labels)
    if not np.isfinite(loss.item()):
        return BatchStep(float("nan"), 0, [])
    bindings = graph.backward(loss)
    grads = [bindings.get(tensor, np.zeros_like(tensor.data)) for _, tensor in named]
    model.zero_grad()
    return BatchStep(loss.item() * len(labels), int((logits.data.argmax(axis=1) == labels).sum()), grads)


########################################################################
# worker side: one model per process and architecture, its weights replaced before every shard
_shard_models: dict[str, Module] = {}


def _worker_model(model_cfg: ModelConfig, state: dict[str, np.ndarray]) -> Module:
    key = repr(model_cfg)
    if key not in _shard_models:
        _shard_models[key] = build_model(model_cfg)
    model = _shard_models[key]
    model.load_state_dict(state)
    return model


def shard_gradients(shard: tuple[np.ndarray, np.ndarray], model_cfg: ModelConfig,
                    state: dict[str, np.ndarray]) -> BatchStep:
    images, labels = shard
    return batch_gradients(_worker_model(model_cfg, state), Tensor(images), labels)


def shard_logits(images: np.ndarray, model_cfg: ModelConfig, state: dict[str, np.ndarray]) -> np.ndarray:
    with no_grad():
        return _worker_model(model_cfg, state)(Tensor(images)).data


class ShardPool:
    """Local worker processes that split every batch between them.
    Shard results come back in shard order and are combined in that order, so a fixed
    number of workers gives reproducible runs.
    """

    def __init__(self, n_workers: int):
        self.n_workers = n_workers
        self.cluster = LocalCluster(n_workers=n_workers, processes=True, threads_per_worker=1)
        self.dask_client = self.cluster.get_client()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()

    def close(self):
        self.dask_client.close()
        self.cluster.close()

    def _shards(self, count: int) -> list[np.ndarray]:
        return [ids for ids in np.array_split(np.arange(count), self.n_workers) if ids.size]

    def _weights(self, model: Module):
        return self.dask_client.scatter([model.state_dict()], broadcast=True, hash=False)[0]

    def gradients(self, model: Module, images: Tensor, labels: np.ndarray) -> BatchStep:
        shards = self._shards(len(labels))
        futures = self.dask_client.map(shard_gradients, [(images.data[ids], labels[ids]) for ids in shards],
                                       model_cfg=model.cfg, state=self._weights(model), pure=False)
        results = self.dask_client.gather(futures)
        if any(not np.isfinite(result.loss_sum) for result in results):
            return BatchStep(float("nan"), 0, [])
        weights = [ids.size / len(labels) for ids in shards]
        grads = [sum(weight * result.grads[position] for weight, result in zip(weights, results))
                 for position in range(len(results[0].grads))]
        return BatchStep(sum(result.loss_sum for result in results), sum(result.correct for result in results), grads)

    def logits(self, model: Module, images: Tensor) -> np.ndarray:
        futures = self.dask_client.map(shard_logits, [images.data[ids] for ids in self._shards(len(images.data))],
                                       model_cfg=model.cfg, state=self._weights(model), pure=False)
        return np.concatenate(self.dask_client.gather(futures))


########################################################################
def predict_logits(model: Module, index: DatasetIndex, split: str, batch_size: int,
                   dtype=np.float64, pool: ShardPool | None = None) -> tuple[np.ndarray, np.ndarray]:
    logits, labels = [], []
    with no_grad():
        for batch in make_batches(index, split, batch_size, dtype=dtype):
            logits.append(pool.logits(model, batch.images) if pool else model(batch.images).data)
            labels.append(batch.labels)
    return np.concatenate(logits), np.concatenate(labels)


def evaluate_split(model: Module, index: DatasetIndex, split: str, batch_size: int, dtype=np.float64,
                   pool: ShardPool | None = None) -> MetricsReport:
    logits, labels = predict_logits(model, index, split, batch_size, dtype, pool)
    return compute_metrics(logits, labels)


def train_loop(model: Module, index: DatasetIndex, sched: TrainSchedule, dtype=np.float64,
               optim_state: OptimState | None = None, n_workers: int = 1) -> TrainResult:
    """With n_workers > 1 every batch is split over that many local processes; the model must carry its
    ModelConfig as .cfg so the workers can rebuild it.
    """
    with ShardPool(n_workers) if n_workers > 1 else nullcontext() as pool:
        return _train_epochs(model, index, sched, dtype, optim_state, pool)


def _train_epochs(model: Module, index: DatasetIndex, sched: TrainSchedule, dtype, optim_state: OptimState | None,
                  pool: ShardPool | None) -> TrainResult:
    named = model.named_parameters()
    state = optim_state or OptimState(base_lr=sched.base_lr, weight_decay=sched.weight_decay)
    stopper = EarlyStopping(sched.patience, sched.warmup_epochs)
    best_state = {name: tensor.data.copy() for name, tensor in named}
    best_metrics = None
    rows, stopped = [], False
    # no gradients to carry, so validation takes n_workers batches at a time
    eval_batch_size = sched.batch_size * (pool.n_workers if pool else 1)

    for epoch in range(sched.total_epochs):
        lr = lr_at(epoch, sched)
        loss_sum, correct, seen = 0.0, 0, 0
        for batch in make_batches(index, "train", sched.batch_size, sched.seed, epoch, dtype=dtype):
            if pool:
                step = pool.gradients(model, batch.images, batch.labels)
            else:
                step = batch_gradients(model, batch.images, batch.labels)
            if not np.isfinite(step.loss_sum):
                raise NonFiniteError("train_loop", f"loss diverged at epoch {epoch + 1}")
            adam_step(named, step.grads, state, lr)
            loss_sum += step.loss_sum
            correct += step.correct
            seen += len(batch)

        val = evaluate_split(model, index, "val", eval_batch_size, dtype, pool)
        rows.append({"epoch": epoch + 1, "lr": lr, "train_loss": loss_sum / seen, "train_OA": 100.0 * correct / seen,
                     "val_OA": val.oa, "val_Pre": val.precision, "val_AUC": val.auc})
        logger.info(f"epoch {epoch + 1:4d}  lr {lr:.3e}  loss {loss_sum / seen:.4f}  val OA {val.oa:6.2f}")
        improved, stop = stopper.update(epoch + 1, val.oa)
        if improved:
            best_state = {name: tensor.data.copy() for name, tensor in named}
            best_metrics = val
        if stop:
            logger.info(f"early stop after epoch {epoch + 1}, best val OA {stopper.best:.2f} at epoch {stopper.best_epoch}")
            stopped = True
            break

    history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
    return TrainResult(best_state, stopper.best_epoch, best_metrics, history, state, stopped)


def write_history(history: pd.DataFrame, output_dir: Path | str):
    """history.txt (aligned table) and history.csv (machine readable)."""
    output_dir = Path(output_dir)
    history.to_csv(output_dir / "history.csv", index=False)
    (output_dir / "history.txt").write_text(history.to_string(index=False, float_format=lambda v: f"{v:.6g}") + "\n")
