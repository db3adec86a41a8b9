"""Late fusion over paired probability vectors and intermediate fusion over
frozen-extractor features.

Late-fusion inputs are ``(p_fea, p_img)``, both [n x 7] simplex rows.
Intermediate-fusion inputs are ``(fea_features [n x 128], img_features [n x 1280])``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import MlpModel, extract_features, predict_proba
from .data import IMAGE_FEATURE_DIM, N_CLASSES, MultimodalBundle, compute_class_weights, fea_matrix, labels_of
from .errors import DataError, ShapeError
from .nn import BatchNorm, Dense, Dropout, Module, as_float, softmax
from .training import TrainConfig, TrainHistory, fit

LATE_STRATEGIES = ("average", "weighted_sum", "concat_dense", "bilinear", "cross_attention")
GATES = ("softmax", "sigmoid")
SIMPLEX_ATOL = 1e-6


def check_simplex(p: np.ndarray, name: str) -> np.ndarray:
    p = as_float(p)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] != N_CLASSES:
        raise ShapeError(f"{name} must have {N_CLASSES} columns, got shape {list(p.shape)}")
    if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > SIMPLEX_ATOL):
        raise ShapeError(f"{name} rows must be probability vectors (≥ 0, summing to 1)")
    return p


def fuse_average(p_fea: np.ndarray, p_img: np.ndarray) -> np.ndarray:
    return 0.5 * (np.asarray(p_fea, dtype=np.float64) + np.asarray(p_img, dtype=np.float64))


def outer_flatten(p_fea: np.ndarray, p_img: np.ndarray) -> np.ndarray:
    """Row-wise outer product flattened so that entry 7*i + j = p_fea[i] * p_img[j]."""
    return (p_fea[:, :, None] * p_img[:, None, :]).reshape(len(p_fea), -1)


class MixWeights:
    """Two learnable logits turned into a convex pair (alpha, beta)."""

    kind = "mix"

    def __init__(self):
        self.params = {"logits": np.zeros(2)}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def coefficients(self) -> np.ndarray:
        return softmax(self.params["logits"])


class LateFusionModel(Module):
    n_classes = N_CLASSES

    def __init__(self, strategy: str, seed: int | None = 0):
        if strategy not in LATE_STRATEGIES:
            raise ValueError(f"unknown late-fusion strategy {strategy!r}; expected one of {LATE_STRATEGIES}")
        self.strategy = strategy
        self.fea_model: MlpModel | None = None
        rng = np.random.default_rng(seed) if seed is not None else None
        self._layers: dict = {}
        if strategy == "weighted_sum":
            self._layers["mix"] = MixWeights()
        elif strategy == "concat_dense":
            self._layers["head"] = Dense(2 * N_CLASSES, N_CLASSES, "softmax", rng)
        elif strategy == "bilinear":
            self._layers["head"] = Dense(N_CLASSES * N_CLASSES, N_CLASSES, "softmax", rng)
        elif strategy == "cross_attention":
            # zero init: both gates start uniform, i.e. at the average-fusion point
            self._layers["att_a"] = Dense(N_CLASSES, N_CLASSES, "softmax")
            self._layers["att_b"] = Dense(N_CLASSES, N_CLASSES, "softmax")

    @property
    def kind(self) -> str:
        return f"late_fusion:{self.strategy}"

    def layers(self) -> dict:
        return self._layers

    def architecture(self) -> dict:
        return {"strategy": self.strategy}

    @classmethod
    def from_architecture(cls, arch: dict) -> "LateFusionModel":
        return cls(arch["strategy"], seed=None)

    def forward(self, inputs, training=False, rng=None):
        p_fea, p_img = (check_simplex(inputs[0], "p_fea"), check_simplex(inputs[1], "p_img"))
        if len(p_fea) != len(p_img):
            raise ShapeError(f"p_fea has {len(p_fea)} rows but p_img has {len(p_img)}")
        self._inputs = (p_fea, p_img)
        s = self.strategy
        if s == "average":
            return fuse_average(p_fea, p_img)
        if s == "weighted_sum":
            alpha, beta = self._layers["mix"].coefficients()
            return alpha * p_fea + beta * p_img
        if s == "concat_dense":
            return self._layers["head"].forward(np.hstack([p_fea, p_img]))
        if s == "bilinear":
            return self._layers["head"].forward(outer_flatten(p_fea, p_img))
        a = self._layers["att_a"].forward(p_img)
        b = self._layers["att_b"].forward(p_fea)
        raw = a * p_fea + b * p_img
        total = raw.sum(axis=1, keepdims=True)
        out = raw / total
        self._cache = (a, b, total, out)
        return out

    def backward(self, dprobs):
        p_fea, p_img = self._inputs
        s = self.strategy
        if s == "weighted_sum":
            mix = self._layers["mix"]
            coef = mix.coefficients()
            d = np.array([np.sum(dprobs * p_fea), np.sum(dprobs * p_img)])
            mix.grads = {"logits": coef * (d - np.dot(coef, d))}
        elif s in ("concat_dense", "bilinear"):
            self._layers["head"].backward(dprobs)
        elif s == "cross_attention":
            a, b, total, out = self._cache
            draw = (dprobs - np.sum(dprobs * out, axis=1, keepdims=True)) / total
            self._layers["att_a"].backward(draw * p_fea)
            self._layers["att_b"].backward(draw * p_img)


class IntermediateFusionModel(Module):
    """Projection + batch norm per branch, cross-attention gating, concat, dropout, softmax head.

    h_f = BN(P_fea f), h_i = BN(P_img g); a = gate(A h_i), b = gate(B h_f);
    z = [a * h_f, b * h_i]; out = softmax(head(dropout(z))).
    """

    kind = "intermediate_fusion"
    n_classes = N_CLASSES
    requires_batch_stats = True

    def __init__(self, fea_dim: int = 128, img_dim: int = IMAGE_FEATURE_DIM, width: int = 512,
                 dropout: float = 0.4, gate: str = "softmax", seed: int | None = 0,
                 bn_momentum: float = 0.99, bn_epsilon: float = 1e-5):
        if gate not in GATES:
            raise ValueError(f"gate must be one of {GATES}, got {gate!r}")
        if width < 1:
            raise ShapeError(f"projection width must be positive, got {width}")
        self.fea_dim, self.img_dim, self.width = fea_dim, img_dim, width
        self.dropout, self.gate = dropout, gate
        self.bn_momentum, self.bn_epsilon = bn_momentum, bn_epsilon
        self.fea_model: MlpModel | None = None
        rng = np.random.default_rng(seed) if seed is not None else None
        self._layers = {
            "proj_fea": Dense(fea_dim, width, "identity", rng),
            "proj_img": Dense(img_dim, width, "identity", rng),
            "bn_fea": BatchNorm(width, bn_momentum, bn_epsilon),
            "bn_img": BatchNorm(width, bn_momentum, bn_epsilon),
            "att_a": Dense(width, width, gate, rng),
            "att_b": Dense(width, width, gate, rng),
            "drop": Dropout(dropout),
            "head": Dense(2 * width, N_CLASSES, "softmax", rng),
        }

    @property
    def head_input_width(self) -> int:
        return self._layers["head"].n_in

    def layers(self) -> dict:
        return self._layers

    def architecture(self) -> dict:
        return {"fea_dim": self.fea_dim, "img_dim": self.img_dim, "width": self.width,
                "dropout": self.dropout, "gate": self.gate,
                "bn_momentum": self.bn_momentum, "bn_epsilon": self.bn_epsilon}

    @classmethod
    def from_architecture(cls, arch: dict) -> "IntermediateFusionModel":
        return cls(seed=None, **arch)

    def forward(self, inputs, training=False, rng=None):
        f, g = (as_float(x) for x in inputs)
        if f.ndim != 2 or f.shape[1] != self.fea_dim:
            raise ShapeError(f"FEA features must be [n x {self.fea_dim}], got {list(f.shape)}")
        if g.ndim != 2 or g.shape[1] != self.img_dim:
            raise ShapeError(f"image features must be [n x {self.img_dim}], got {list(g.shape)}")
        if len(f) != len(g):
            raise ShapeError(f"FEA features have {len(f)} rows but image features have {len(g)}")
        L = self._layers
        h_f = L["bn_fea"].forward(L["proj_fea"].forward(f), training=training)
        h_i = L["bn_img"].forward(L["proj_img"].forward(g), training=training)
        a = L["att_a"].forward(h_i)
        b = L["att_b"].forward(h_f)
        z = np.hstack([a * h_f, b * h_i])
        self._cache = (h_f, h_i, a, b)
        return L["head"].forward(L["drop"].forward(z, training=training, rng=rng))

    def backward(self, dprobs):
        L = self._layers
        h_f, h_i, a, b = self._cache
        dz = L["drop"].backward(L["head"].backward(dprobs))
        dz_f, dz_i = dz[:, :self.width], dz[:, self.width:]
        dh_f = dz_f * a + L["att_b"].backward(dz_i * h_i)
        dh_i = dz_i * b + L["att_a"].backward(dz_f * h_f)
        L["proj_fea"].backward(L["bn_fea"].backward(dh_f))
        L["proj_img"].backward(L["bn_img"].backward(dh_i))


def late_fusion_forward(model: LateFusionModel, p_fea, p_img, mode: str = "inference") -> np.ndarray:
    single = np.ndim(p_fea) == 1
    out = model.forward((p_fea, p_img), training=mode == "train")
    return out[0] if single else out


def intermediate_fusion_forward(model: IntermediateFusionModel, fea_features, img_features,
                                mode: str = "inference", rng_seed: int = 0) -> np.ndarray:
    return model.forward((np.atleast_2d(fea_features), np.atleast_2d(img_features)),
                         training=mode == "train", rng=np.random.default_rng(rng_seed))


@dataclass
class FusionSplit:
    """Model-ready arrays for one split of a multimodal bundle."""

    inputs: tuple
    labels: np.ndarray
    ids: list
    views: list

    def __len__(self) -> int:
        return len(self.labels)


def _observation_matrix(samples, attr: str) -> np.ndarray:
    rows = []
    for s in samples:
        value = getattr(s.observation, attr)
        if value is None:
            raise DataError(f"image observation ({s.id!r}, {s.view!r}) has no '{attr}' field")
        rows.append(value)
    return np.stack(rows)


def prepare_late_inputs(fea_model, samples) -> FusionSplit:
    """Frozen-model FEA probabilities paired with ingested image probabilities."""
    samples = list(samples)
    if not samples:
        empty = np.zeros((0, N_CLASSES))
        return FusionSplit((empty, empty), np.zeros(0, dtype=np.int64), [], [])
    p_img = _observation_matrix(samples, "probs")
    p_fea = predict_proba(fea_model, fea_matrix(samples))
    return FusionSplit((p_fea, p_img), labels_of(samples), [s.id for s in samples], [s.view for s in samples])


def prepare_intermediate_inputs(fea_model: MlpModel, samples) -> FusionSplit:
    """Frozen first-layer FEA features paired with ingested image features."""
    samples = list(samples)
    if not samples:
        return FusionSplit((np.zeros((0, fea_model.first_layer.n_out)), np.zeros((0, IMAGE_FEATURE_DIM))),
                           np.zeros(0, dtype=np.int64), [], [])
    g = _observation_matrix(samples, "features")
    f = extract_features(fea_model, fea_matrix(samples))
    return FusionSplit((f, g), labels_of(samples), [s.id for s in samples], [s.view for s in samples])


def fusion_predict_proba(model, samples) -> np.ndarray:
    """Probabilities of a fusion model (with its frozen FEA model attached) on multimodal samples."""
    if model.fea_model is None:
        raise DataError("fusion model has no frozen FEA model attached")
    prepare = prepare_intermediate_inputs if isinstance(model, IntermediateFusionModel) else prepare_late_inputs
    split = prepare(model.fea_model, samples)
    return model.forward(split.inputs, training=False)


def _class_weights(bundle: MultimodalBundle, config: TrainConfig):
    return compute_class_weights(bundle.train) if config.class_weighting else None


def train_late_fusion(strategy: str, fea_model, bundle: MultimodalBundle,
                      config: TrainConfig | None = None):
    """Train only the fusion parameters; the FEA model is read, never updated."""
    config = config or TrainConfig(batch_size=32)
    model = LateFusionModel(strategy, seed=config.seed)
    model.fea_model = fea_model
    train = prepare_late_inputs(fea_model, bundle.train)
    val = prepare_late_inputs(fea_model, bundle.val)
    if strategy == "average":
        if len(train) == 0:
            raise DataError("training split is empty")
        return model, TrainHistory()
    history = fit(model, train.inputs, train.labels, val.inputs, val.labels, config,
                  _class_weights(bundle, config))
    return model, history


def train_intermediate_fusion(fea_model: MlpModel, bundle: MultimodalBundle,
                              config: TrainConfig | None = None, width: int = 512,
                              dropout: float = 0.4, gate: str = "softmax"):
    config = config or TrainConfig(batch_size=128)
    model = IntermediateFusionModel(fea_model.first_layer.n_out, IMAGE_FEATURE_DIM, width, dropout, gate,
                                    seed=config.seed)
    model.fea_model = fea_model
    train = prepare_intermediate_inputs(fea_model, bundle.train)
    val = prepare_intermediate_inputs(fea_model, bundle.val)
    history = fit(model, train.inputs, train.labels, val.inputs, val.labels, config,
                  _class_weights(bundle, config))
    return model, history
