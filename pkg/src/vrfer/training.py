"""Mini-batch Adam training with best-validation-accuracy snapshotting."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import BatchTooSmallError, DataError, TrainingError
from .nn import Adam, Module, weighted_cross_entropy, weighted_cross_entropy_grad


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 200
    seed: int = 0
    class_weighting: bool = True
    shuffle: bool = True

    def __post_init__(self):
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise DataError(f"batch_size must be an integer ≥ 1, got {self.batch_size!r}")
        if not self.learning_rate > 0:
            raise DataError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not isinstance(self.max_epochs, int) or self.max_epochs < 1:
            raise DataError(f"max_epochs must be an integer ≥ 1, got {self.max_epochs!r}")

    @classmethod
    def from_dict(cls, d: dict | None, **defaults) -> "TrainConfig":
        """Build from a mapping; keys outside the dataclass are ignored."""
        names = {f.name for f in fields(cls)}
        merged = {**defaults, **{k: v for k, v in (d or {}).items() if k in names}}
        return cls(**merged)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    selected_epoch: int | None = None

    def __len__(self) -> int:
        return len(self.val_accuracy)

    @property
    def best_val_accuracy(self) -> float | None:
        return None if self.selected_epoch is None else self.val_accuracy[self.selected_epoch]

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def _take(inputs, idx):
    if isinstance(inputs, tuple):
        return tuple(x[idx] for x in inputs)
    return inputs[idx]


def _n_rows(inputs) -> int:
    return len(inputs[0]) if isinstance(inputs, tuple) else len(inputs)


def batches(n: int, batch_size: int, order: np.ndarray, min_size: int = 1) -> list[np.ndarray]:
    """Split ``order`` into batches; a trailing batch smaller than ``min_size`` joins the previous one."""
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < min_size:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def fit(model: Module, train_inputs, train_labels, val_inputs, val_labels, config: TrainConfig,
        class_weights: np.ndarray | None = None) -> TrainHistory:
    """Train ``model`` in place and leave it at its best-validation snapshot.

    The selected epoch is the earliest one with maximal validation accuracy.
    """
    n = _n_rows(train_inputs)
    if n == 0:
        raise DataError("training split is empty")
    if _n_rows(val_inputs) == 0:
        raise DataError("validation split is empty")
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    weights = np.ones(getattr(model, "n_classes", 7)) if class_weights is None or not config.class_weighting \
        else np.asarray(class_weights, dtype=np.float64)
    min_batch = 2 if model.requires_batch_stats else 1
    if n < min_batch:
        raise BatchTooSmallError(f"batch norm training needs at least 2 training samples, got {n}")

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(config.learning_rate)
    history = TrainHistory()
    best_state = None
    for epoch in range(config.max_epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = weight_sum = 0.0
        for b, idx in enumerate(batches(n, config.batch_size, order, min_batch)):
            xb, yb = _take(train_inputs, idx), train_labels[idx]
            probs = model.forward(xb, training=True, rng=rng)
            loss = weighted_cross_entropy(probs, yb, weights) + model.regularization()
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.backward(weighted_cross_entropy_grad(probs, yb, weights))
            optimizer.step(model.parameters(), model.gradients())
            batch_weight = float(weights[yb].sum())
            loss_sum += loss * batch_weight
            weight_sum += batch_weight
        history.train_loss.append(loss_sum / weight_sum)
        history.train_accuracy.append(accuracy(model.forward(train_inputs), train_labels))
        val_acc = accuracy(model.forward(val_inputs), val_labels)
        history.val_accuracy.append(val_acc)
        if history.selected_epoch is None or val_acc > history.val_accuracy[history.selected_epoch]:
            history.selected_epoch = epoch
            best_state = model.state()
    model.load_state(best_state)
    return history
