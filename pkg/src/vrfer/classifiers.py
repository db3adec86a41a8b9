"""Unimodal FEA classifiers: multinomial logistic regression and the MLP."""

from __future__ import annotations

import numpy as np

from .data import FEA_DIM, N_CLASSES, DatasetBundle, compute_class_weights, fea_matrix, labels_of
from .errors import DataError, ShapeError
from .nn import Dense, Dropout, Sequential
from .training import TrainConfig, TrainHistory, fit

DEFAULT_HIDDEN = (128, 64)
DEFAULT_DROPOUT = 0.2


def mlp_param_count(n_in: int = FEA_DIM, hidden=DEFAULT_HIDDEN, n_out: int = N_CLASSES) -> int:
    sizes = [n_in, *hidden, n_out]
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


class MlpModel(Sequential):
    """Dense(relu) / Dropout blocks followed by a softmax Dense layer."""

    kind = "mlp"
    n_classes = N_CLASSES

    def __init__(self, hidden=DEFAULT_HIDDEN, dropout: float = DEFAULT_DROPOUT, seed: int | None = 0,
                 n_in: int = FEA_DIM):
        if not hidden:
            raise ShapeError("an MLP needs at least one hidden layer")
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        self.n_in = n_in
        rng = np.random.default_rng(seed) if seed is not None else None
        layers = []
        width = n_in
        for h in self.hidden:
            layers += [Dense(width, h, "relu", rng), Dropout(self.dropout)]
            width = h
        layers.append(Dense(width, N_CLASSES, "softmax", rng))
        super().__init__(layers)
        assert self.n_params() == mlp_param_count(n_in, self.hidden), "layer chain is inconsistent"

    def architecture(self) -> dict:
        return {"hidden": list(self.hidden), "dropout": self.dropout, "n_in": self.n_in}

    @classmethod
    def from_architecture(cls, arch: dict) -> "MlpModel":
        return cls(arch["hidden"], arch["dropout"], seed=None, n_in=arch.get("n_in", FEA_DIM))

    @property
    def first_layer(self) -> Dense:
        return self.layer_list[0]


class LogRegModel(Sequential):
    """Single softmax layer; L2 penalty (l2/2)*||W||^2 on weights only."""

    kind = "logreg"
    n_classes = N_CLASSES

    def __init__(self, l2_strength: float = 0.0, seed: int | None = None, n_in: int = FEA_DIM):
        if l2_strength < 0:
            raise DataError(f"l2_strength must be ≥ 0, got {l2_strength!r}")
        self.l2_strength = float(l2_strength)
        self.n_in = n_in
        rng = np.random.default_rng(seed) if seed is not None else None
        super().__init__([Dense(n_in, N_CLASSES, "softmax", rng)])

    def architecture(self) -> dict:
        return {"l2_strength": self.l2_strength, "n_in": self.n_in}

    @classmethod
    def from_architecture(cls, arch: dict) -> "LogRegModel":
        return cls(arch["l2_strength"], n_in=arch.get("n_in", FEA_DIM))


def _fit_on_bundle(model, bundle: DatasetBundle, config: TrainConfig) -> TrainHistory:
    train, val = bundle.train, bundle.val
    if not train:
        raise DataError("training split is empty")
    if not val:
        raise DataError("validation split is empty")
    weights = compute_class_weights(train) if config.class_weighting else None
    return fit(model, fea_matrix(train), labels_of(train), fea_matrix(val), labels_of(val), config, weights)


def train_mlp(bundle: DatasetBundle, config: TrainConfig = TrainConfig(), hidden=DEFAULT_HIDDEN,
              dropout: float = DEFAULT_DROPOUT):
    model = MlpModel(hidden, dropout, seed=config.seed)
    history = _fit_on_bundle(model, bundle, config)
    return model, history


def train_logreg(bundle: DatasetBundle, config: TrainConfig = TrainConfig(), l2_strength: float = 0.0):
    model = LogRegModel(l2_strength)
    history = _fit_on_bundle(model, bundle, config)
    return model, history


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.atleast_2d(samples.astype(np.float64))
    return fea_matrix(list(samples))


def predict_proba(model, samples) -> np.ndarray:
    """Inference-mode class probabilities, one simplex row per sample."""
    return model.forward(_as_matrix(samples), training=False)


def predict_label(model_or_probs, samples=None) -> np.ndarray:
    """Argmax class indices; ties resolve to the lowest index."""
    probs = model_or_probs if samples is None else predict_proba(model_or_probs, samples)
    return np.argmax(np.asarray(probs), axis=1)


def extract_features(mlp: MlpModel, samples) -> np.ndarray:
    """Post-ReLU output of the MLP's first dense layer (inference mode)."""
    return mlp.first_layer.forward(_as_matrix(samples), training=False)
