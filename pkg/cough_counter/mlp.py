#!/usr/bin/env python3
"""
Single-hidden-layer networks

A 32-unit tanh hidden layer with a logistic output, trained by mini-batch
gradient descent with momentum and early stopping for each of the two
binary subtasks of the cascade.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from cough_counter.audio_io import EventClass
from cough_counter.errors import NumericError, TrainingError, ValidationError
from cough_counter.features import FeatureMatrix

logger = logging.getLogger(__name__)

MODEL_FILE_MAGIC = b"CMLP"
OUTPUT_EPS = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class Task(str, Enum):
    ACTIVITY = "activity"
    EXPLOSIVE = "explosive"


# Seed salt per task so the two subsamples are independent
TASK_SALT = {Task.ACTIVITY: 1, Task.EXPLOSIVE: 2}

ACTIVITY_POSITIVES = (
    EventClass.COUGH,
    EventClass.FORCED_EXPIRATION,
    EventClass.THROAT_CLEARING,
    EventClass.LAUGH,
)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 500
    batch_size: int = 128
    patience: int = 20
    negative_ratio: float = 3.0
    validation_fraction: float = 0.1
    hidden_units: int = 32
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "patience", "negative_ratio", "hidden_units"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"Training parameter '{name}' must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"Momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError(f"Validation fraction must be in [0, 1), got {self.validation_fraction}")

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: float
    mean: np.ndarray
    std: np.ndarray
    task: Task = Task.ACTIVITY
    catalog_hash: str = ""
    feature_indices: List[int] = field(default_factory=list)
    feature_names: List[str] = field(default_factory=list)
    history: Dict[str, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64).ravel()
        self.W2 = np.asarray(self.W2, dtype=np.float64).ravel()
        self.b2 = float(self.b2)
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.std = np.asarray(self.std, dtype=np.float64).ravel()
        self.task = Task(self.task)
        hidden, dim = self.W1.shape
        if self.b1.shape != (hidden,) or self.W2.shape != (hidden,):
            raise ValidationError("Hidden-layer parameter shapes disagree")
        if self.mean.shape != (dim,) or self.std.shape != (dim,):
            raise ValidationError("Normalization statistics must have one entry per input")
        if np.any(self.std <= 0):
            raise ValidationError("Normalization standard deviations must be positive")
        self.check_finite()

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_units(self) -> int:
        return self.W1.shape[0]

    def check_finite(self) -> None:
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"Model parameter {name} is not finite")

    def predict(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    @classmethod
    def zeros(cls, input_dim: int, hidden_units: int = 32, task: Task = Task.ACTIVITY) -> "MlpModel":
        return cls(
            W1=np.zeros((hidden_units, input_dim)),
            b1=np.zeros(hidden_units),
            W2=np.zeros(hidden_units),
            b2=0.0,
            mean=np.zeros(input_dim),
            std=np.ones(input_dim),
            task=task,
        )


def _normalized(m: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.input_dim:
        raise ValidationError(f"Input has {x.shape[-1]} features, model expects {m.input_dim}")
    return (x - m.mean) / m.std


def _logits(m: MlpModel, xn: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    h = np.tanh(xn @ m.W1.T + m.b1)
    return h, h @ m.W2 + m.b2


def forward(m: MlpModel, x: np.ndarray) -> np.ndarray:
    """
    Posterior of the positive class for one feature vector or a stack of them.

    Raises:
        ValidationError: If the input dimension does not match the model
    """
    _, z = _logits(m, _normalized(m, x))
    return np.clip(expit(z), OUTPUT_EPS, 1.0 - OUTPUT_EPS)


def loss_and_gradient(m: MlpModel, x: np.ndarray, t: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean binary cross-entropy of a batch and its exact gradients.

    Returns:
        (loss, dict of gradients keyed like the parameters, plus "z" for the
        output pre-activation)
    """
    x = np.atleast_2d(x)
    t = np.asarray(t, dtype=np.float64).ravel()
    if x.shape[0] == 0 or x.shape[0] != t.shape[0]:
        raise ValidationError("Batch must be non-empty with one target per sample")
    xn = _normalized(m, x)
    h, z = _logits(m, xn)
    n = x.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, z) - t * z))

    dz = (expit(z) - t) / n
    da = np.outer(dz, m.W2) * (1.0 - h ** 2)
    grads = {
        "W1": da.T @ xn,
        "b1": da.sum(axis=0),
        "W2": h.T @ dz,
        "b2": float(dz.sum()),
        "z": dz * n,
    }
    return loss, grads


def _initial_model(input_dim: int, config: TrainConfig, task: Task, rng: np.random.Generator) -> MlpModel:
    hidden = config.hidden_units
    limit1 = math.sqrt(6.0 / (input_dim + hidden))
    limit2 = math.sqrt(6.0 / (hidden + 1))
    model = MlpModel.zeros(input_dim, hidden, task)
    model.W1 = rng.uniform(-limit1, limit1, size=(hidden, input_dim))
    model.W2 = rng.uniform(-limit2, limit2, size=hidden)
    return model


def fit(
    x: np.ndarray,
    t: np.ndarray,
    config: TrainConfig,
    task: Task = Task.ACTIVITY,
    rng: Optional[np.random.Generator] = None,
) -> MlpModel:
    """
    Train a network on (samples x features) inputs and binary targets.

    A seeded fraction of the samples is held out for early stopping; the
    parameters of the epoch with the lowest held-out loss are kept.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != t.shape[0] or x.shape[0] == 0:
        raise ValidationError("Training data must be a non-empty (samples x features) array with one target each")
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    n = x.shape[0]
    order = rng.permutation(n)
    n_val = int(round(config.validation_fraction * n)) if n >= 10 else 0
    val_idx, train_idx = order[:n_val], order[n_val:]
    x_train, t_train = x[train_idx], t[train_idx]
    x_val, t_val = (x[val_idx], t[val_idx]) if n_val else (x_train, t_train)

    model = _initial_model(x.shape[1], config, task, rng)
    if config.normalize:
        std = x_train.std(axis=0)
        model.mean = x_train.mean(axis=0)
        model.std = np.where(std > 1e-12, std, 1.0)

    velocity = {name: np.zeros_like(np.asarray(getattr(model, name))) for name in PARAM_NAMES}
    best = {name: np.copy(getattr(model, name)) for name in PARAM_NAMES}
    best_loss, best_epoch, wait = np.inf, 0, 0
    history: Dict[str, List[float]] = {"train_loss": [], "val_loss": []}

    for epoch in range(config.epochs):
        perm = rng.permutation(x_train.shape[0])
        for start in range(0, perm.size, config.batch_size):
            batch = perm[start : start + config.batch_size]
            _, grads = loss_and_gradient(model, x_train[batch], t_train[batch])
            for name in PARAM_NAMES:
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grads[name]
                setattr(model, name, getattr(model, name) + velocity[name])
        model.b2 = float(model.b2)
        model.check_finite()

        train_loss, _ = loss_and_gradient(model, x_train, t_train)
        val_loss, _ = loss_and_gradient(model, x_val, t_val)
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        if val_loss < best_loss - 1e-12:
            best_loss, best_epoch, wait = val_loss, epoch, 0
            best = {name: np.copy(getattr(model, name)) for name in PARAM_NAMES}
        else:
            wait += 1
            if wait >= config.patience:
                logger.debug("Early stop at epoch %d (best %d)", epoch + 1, best_epoch + 1)
                break

    for name in PARAM_NAMES:
        setattr(model, name, best[name])
    model.b2 = float(model.b2)
    history["best_epoch"] = [best_epoch]
    model.history = history
    logger.info("Trained %s network: best epoch %d, held-out loss %.4f", task.value, best_epoch + 1, best_loss)
    return model


def task_rng(seed: int, task: Task, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), TASK_SALT[Task(task)], stream])


def task_dataset(
    matrices: Union[FeatureMatrix, Sequence[FeatureMatrix]],
    task: Task,
    negative_ratio: float = 3.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frames and binary targets of one subtask, negatives subsampled.

    activity: cough, forced expiration, throat clearing and laugh frames
    against background and speech. explosive: explosive-phase frames against
    every other non-background frame.

    Raises:
        TrainingError: If either class has no frames
    """
    if isinstance(matrices, FeatureMatrix):
        matrices = [matrices]
    task = Task(task)
    rng = rng if rng is not None else np.random.default_rng(0)

    rows, targets = [], []
    for i, m in enumerate(matrices):
        if task == Task.ACTIVITY:
            keep = np.arange(m.n_frames)
            target = m.is_class(*ACTIVITY_POSITIVES)
        else:
            keep = np.flatnonzero(~m.is_class(EventClass.BACKGROUND))
            target = m.explosive[keep]
        rows.append(np.column_stack([np.full(keep.size, i), keep]))
        targets.append(np.asarray(target, dtype=bool))
    rows = np.concatenate(rows) if rows else np.empty((0, 2), dtype=np.int64)
    targets = np.concatenate(targets) if targets else np.empty(0, dtype=bool)

    positive = np.flatnonzero(targets)
    negative = np.flatnonzero(~targets)
    names = {Task.ACTIVITY: ("sound activity", "background/speech"), Task.EXPLOSIVE: ("explosive-phase", "non-explosive")}
    if positive.size == 0:
        raise TrainingError(f"No {names[task][0]} frames available for the {task.value} task")
    if negative.size == 0:
        raise TrainingError(f"No {names[task][1]} frames available for the {task.value} task")

    n_negative = min(negative.size, int(math.ceil(negative_ratio * positive.size)))
    negative = np.sort(rng.choice(negative, size=n_negative, replace=False))
    chosen = np.sort(np.concatenate([positive, negative]))

    values = np.empty((chosen.size, matrices[0].values.shape[1]))
    picked = rows[chosen]
    for i, m in enumerate(matrices):
        mask = picked[:, 0] == i
        values[mask] = m.values[picked[mask, 1]]
    logger.debug("%s task: %d positive, %d negative frames", task.value, positive.size, n_negative)
    return values, targets[chosen].astype(np.float64)


def train(
    matrices: Union[FeatureMatrix, Sequence[FeatureMatrix]],
    selection,
    task: Task,
    config: TrainConfig,
) -> MlpModel:
    """
    Train the network of one subtask on the selected columns.

    Args:
        matrices: Training feature matrices
        selection: SelectedFeatureSet giving the input columns
        task: Which subtask
        config: Hyperparameters and seed
    """
    task = Task(task)
    values, targets = task_dataset(matrices, task, config.negative_ratio, task_rng(config.seed, task))
    model = fit(selection.columns(values), targets, config, task, task_rng(config.seed, task, 1))
    model.catalog_hash = selection.catalog_hash
    model.feature_indices = list(selection.indices)
    model.feature_names = list(selection.names)
    return model


def to_bytes(m: MlpModel) -> bytes:
    """Model file: magic, header length, JSON header, little-endian float64 parameters."""
    header = {
        "input_dim": m.input_dim,
        "hidden_units": m.hidden_units,
        "task": m.task.value,
        "catalog_hash": m.catalog_hash,
        "feature_indices": [int(i) for i in m.feature_indices],
        "feature_names": list(m.feature_names),
        "layout": ["W1", "b1", "W2", "b2", "mean", "std"],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    block = np.concatenate([m.W1.ravel(), m.b1, m.W2, [m.b2], m.mean, m.std]).astype("<f8")
    return MODEL_FILE_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + block.tobytes()


def from_bytes(payload: bytes) -> MlpModel:
    if payload[:4] != MODEL_FILE_MAGIC:
        raise ValidationError("Not a model file")
    (header_len,) = struct.unpack("<I", payload[4:8])
    try:
        header = json.loads(payload[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"Corrupt model header: {e}") from e
    d, h = header["input_dim"], header["hidden_units"]
    block = np.frombuffer(payload, dtype="<f8", offset=8 + header_len).astype(np.float64)
    if block.size != h * d + 2 * h + 1 + 2 * d:
        raise ValidationError("Model parameter block has the wrong size")
    sizes = np.cumsum([h * d, h, h, 1, d])
    W1, b1, W2, b2, mean, std = np.split(block, sizes)
    return MlpModel(
        W1=W1.reshape(h, d),
        b1=b1,
        W2=W2,
        b2=float(b2[0]),
        mean=mean,
        std=std,
        task=Task(header["task"]),
        catalog_hash=header.get("catalog_hash", ""),
        feature_indices=header.get("feature_indices", []),
        feature_names=header.get("feature_names", []),
    )


def save_model(m: MlpModel, path: Union[str, Path]) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(m))


def load_model(path: Union[str, Path]) -> MlpModel:
    with open(path, "rb") as f:
        return from_bytes(f.read())
