"""Small dense-network engine: layers with hand-written backward passes,
weighted cross-entropy, Adam, and a central-difference gradient checker.

Arrays are float64. Inputs of wider float type (``np.longdouble``) keep
their precision, which the gradient checker uses to resolve gradients
that sit below float64 roundoff. Layers keep ``params``, ``grads`` and (batch norm
only) ``buffers`` dicts; composite models expose them through ``Module``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmallError, LabelError, ShapeError

PROB_FLOOR = 1e-12
ACTIVATIONS = ("identity", "relu", "softmax", "sigmoid")


def as_float(x) -> np.ndarray:
    """Float array at least as wide as float64 (integers and float32 are promoted)."""
    x = np.asarray(x)
    return x.astype(np.result_type(x.dtype, np.float64), copy=False)


def softmax(v: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction. Accepts a vector or a matrix."""
    v = as_float(v)
    shifted = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "softmax":
        return softmax(z)
    if activation == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    raise ValueError(f"unknown activation {activation!r}")


def _activation_backward(dout: np.ndarray, z: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return dout
    if activation == "relu":
        return dout * (z > 0.0)
    if activation == "softmax":
        # Jacobian-vector product of row-wise softmax
        return out * (dout - np.sum(dout * out, axis=1, keepdims=True))
    if activation == "sigmoid":
        return dout * out * (1.0 - out)
    raise ValueError(f"unknown activation {activation!r}")


class Dense:
    """Fully connected layer, ``out = activation(x @ W.T + b)`` with W of shape [out, in]."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if n_in < 1 or n_out < 1:
            raise ShapeError(f"dense dimensions must be positive, got {n_in}->{n_out}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        weights = glorot_uniform(rng, n_out, n_in) if rng is not None else np.zeros((n_out, n_in))
        self.params = {"weights": weights, "bias": np.zeros(n_out)}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._x = self._z = self._out = None

    def config(self) -> dict:
        return {"type": "dense", "in": self.n_in, "out": self.n_out, "activation": self.activation}

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        x = as_float(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects [n x {self.n_in}] input, got {list(x.shape)}")
        z = x @ self.params["weights"].T + self.params["bias"]
        out = _activate(z, self.activation)
        self._x, self._z, self._out = x, z, out
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dz = _activation_backward(dout, self._z, self._out, self.activation)
        self.grads = {"weights": dz.T @ self._x, "bias": dz.sum(axis=0)}
        return dz @ self.params["weights"]


class BatchNorm:
    kind = "batchnorm"

    def __init__(self, dim: int, momentum: float = 0.99, epsilon: float = 1e-5):
        if dim < 1:
            raise ShapeError(f"batch norm dimension must be positive, got {dim}")
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.params = {"gamma": np.ones(dim), "beta": np.zeros(dim)}
        self.buffers = {"running_mean": np.zeros(dim), "running_var": np.ones(dim)}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def config(self) -> dict:
        return {"type": "batchnorm", "dim": self.dim, "momentum": self.momentum, "epsilon": self.epsilon}

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        x = as_float(x)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"batch norm expects [n x {self.dim}] input, got {list(x.shape)}")
        if training:
            if x.shape[0] < 2:
                raise BatchTooSmallError(f"batch norm needs at least 2 samples in training, got {x.shape[0]}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1.0 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1.0 - m) * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        self._cache = (training, xhat, inv_std)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        training, xhat, inv_std = self._cache
        self.grads = {"gamma": np.sum(dout * xhat, axis=0), "beta": dout.sum(axis=0)}
        dxhat = dout * self.params["gamma"]
        if not training:
            return dxhat * inv_std
        n = dout.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))


class Dropout:
    """Inverted dropout: kept entries are scaled by 1/(1-rate) in training."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._mask = None

    def config(self) -> dict:
        return {"type": "dropout", "rate": self.rate}

    def forward(self, x: np.ndarray, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs a random generator")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout if self._mask is None else dout * self._mask


def dense_forward(layer: Dense, batch: np.ndarray) -> np.ndarray:
    return layer.forward(batch)


def batchnorm_forward(bn: BatchNorm, batch: np.ndarray, mode: str = "inference") -> np.ndarray:
    return bn.forward(batch, training=_training(mode))


def dropout_forward(layer: Dropout, batch: np.ndarray, rng_seed: int, mode: str = "train") -> np.ndarray:
    return layer.forward(batch, training=_training(mode), rng=np.random.default_rng(rng_seed))


def _training(mode: str) -> bool:
    if mode not in ("train", "inference"):
        raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")
    return mode == "train"


def make_layer(cfg: dict):
    kind = cfg["type"]
    if kind == "dense":
        return Dense(cfg["in"], cfg["out"], cfg["activation"])
    if kind == "batchnorm":
        return BatchNorm(cfg["dim"], cfg["momentum"], cfg["epsilon"])
    if kind == "dropout":
        return Dropout(cfg["rate"])
    raise ValueError(f"unknown layer type {kind!r}")


class Module:
    """Base for every trainable model.

    Subclasses provide ``layers()`` (name -> layer), ``forward`` and ``backward``.
    ``backward`` receives d(loss)/d(output probabilities).
    """

    l2_strength = 0.0
    requires_batch_stats = False

    def layers(self) -> dict:
        raise NotImplementedError

    def forward(self, inputs, training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dprobs: np.ndarray) -> None:
        raise NotImplementedError

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, layer in self.layers().items() for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        grads = {f"{name}.{k}": v for name, layer in self.layers().items() for k, v in layer.grads.items()}
        for key, w in self.penalized().items():
            grads[key] = grads[key] + self.l2_strength * w
        return grads

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, layer in self.layers().items() for k, v in layer.buffers.items()}

    def penalized(self) -> dict[str, np.ndarray]:
        """Parameters under the L2 penalty (dense weights, never biases)."""
        if self.l2_strength == 0.0:
            return {}
        return {f"{name}.weights": layer.params["weights"]
                for name, layer in self.layers().items() if isinstance(layer, Dense)}

    def regularization(self) -> float:
        return 0.5 * self.l2_strength * sum(np.sum(w * w) for w in self.penalized().values())

    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def state(self) -> dict[str, np.ndarray]:
        """Deep copy of parameters and buffers."""
        out = {f"param:{k}": v.copy() for k, v in self.parameters().items()}
        out.update({f"buffer:{k}": v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, layer in self.layers().items():
            for group, store in (("param", layer.params), ("buffer", layer.buffers)):
                for k in store:
                    value = np.asarray(state[f"{group}:{name}.{k}"], dtype=np.float64)
                    if value.shape != store[k].shape:
                        raise ShapeError(f"{group} {name}.{k}: expected shape {list(store[k].shape)}, "
                                         f"got {list(value.shape)}")
                    store[k] = value.copy()


class Sequential(Module):
    def __init__(self, layers: list):
        self._layers = list(layers)
        self.requires_batch_stats = any(isinstance(layer, BatchNorm) for layer in self._layers)

    def layers(self) -> dict:
        return {str(i): layer for i, layer in enumerate(self._layers)}

    @property
    def layer_list(self) -> list:
        return self._layers

    def forward(self, inputs, training=False, rng=None):
        h = as_float(inputs)
        for layer in self._layers:
            h = layer.forward(h, training=training, rng=rng)
        return h

    def backward(self, dprobs):
        d = dprobs
        for layer in reversed(self._layers):
            d = layer.backward(d)
        return d


def _check_labels(labels: np.ndarray, n: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {list(labels.shape)}")
    if labels.size and (not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)] if np.issubdtype(labels.dtype, np.number) else labels
        raise LabelError(f"label indices must lie in 0..{n_classes - 1}, got {bad[:5].tolist()}")
    return labels.astype(np.int64)


def weighted_cross_entropy(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """Sum_i w[y_i] * -ln p[i, y_i] / Sum_i w[y_i], with probabilities clipped at 1e-12."""
    probs = as_float(probs)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    w = np.asarray(weights, dtype=np.float64)[labels]
    picked = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, 1.0)
    loss = np.sum(w * -np.log(picked)) / np.sum(w)
    return float(loss) if loss.dtype == np.float64 else loss


def weighted_cross_entropy_grad(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """d(weighted_cross_entropy)/d(probs); zero where clipping is active."""
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    w = np.asarray(weights, dtype=np.float64)[labels]
    rows = np.arange(len(labels))
    picked = probs[rows, labels]
    grad = np.zeros_like(probs)
    active = (picked > PROB_FLOOR) & (picked <= 1.0)
    grad[rows[active], labels[active]] = -w[active] / (np.sum(w) * picked[active])
    return grad


def objective(model: Module, inputs, labels, weights, training: bool = False,
              rng: np.random.Generator | None = None) -> float:
    probs = model.forward(inputs, training=training, rng=rng)
    return weighted_cross_entropy(probs, labels, weights) + model.regularization()


def network_backward(model: Module, inputs, labels, weights, training: bool = False,
                     rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Forward then backward; returns gradients of ``objective`` keyed like ``parameters()``."""
    probs = model.forward(inputs, training=training, rng=rng)
    model.backward(weighted_cross_entropy_grad(probs, labels, weights))
    return model.gradients()


class Adam:
    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        if learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place."""
        for k, p in params.items():
            if k not in grads or grads[k].shape != p.shape:
                got = None if k not in grads else list(grads[k].shape)
                raise ShapeError(f"gradient for {k}: expected shape {list(p.shape)}, got {got}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.epsilon)


def adam_step(state: Adam, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    state.step(params, grads)
    return params


EXTENDED_BELOW = 1e-5


@dataclass
class GradientCheck:
    """Outcome of a central-difference comparison.

    ``kinks`` counts coordinates whose ±h stencil changes the sign of some
    ReLU pre-activation; the loss is not differentiable there, so they are
    excluded from ``max_error``. ``extended`` counts coordinates whose
    gradient is below ``EXTENDED_BELOW`` and was therefore re-differenced in
    ``np.longdouble``, where float64 loss roundoff (about 1e-11 after
    dividing by 2h) would otherwise swamp the 1e-8 denominator floor.
    """

    max_error: float
    checked: int
    kinks: int
    extended: int
    worst: tuple | None = None


def _relu_signs(model: Module) -> np.ndarray:
    parts = [(layer._z > 0).ravel() for layer in model.layers().values()
             if isinstance(layer, Dense) and layer.activation == "relu" and layer._z is not None]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def _relative_error(a, b) -> float:
    return float(abs(a - b) / max(abs(a), abs(b), 1e-8))


def gradient_check(model: Module, inputs, labels, weights, h: float = 1e-5, *,
                   training: bool = False, seed: int = 0, max_coords: int | None = None,
                   rng: np.random.Generator | None = None, grads: dict | None = None) -> GradientCheck:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    Every coordinate is checked unless ``max_coords`` caps the number sampled
    per parameter tensor. In training mode each forward pass reuses ``seed``
    so dropout masks stay fixed; batch-norm running statistics are restored
    afterwards. ``grads`` overrides the analytic gradients (detector tests).
    """
    if h <= 0.0:
        raise ValueError(f"h must be positive, got {h}")
    saved = model.state()

    def loss():
        return objective(model, inputs, labels, weights, training=training,
                         rng=np.random.default_rng(seed) if training else None)

    if grads is None:
        grads = network_backward(model, inputs, labels, weights, training=training,
                                 rng=np.random.default_rng(seed) if training else None)
        grads = {k: v.copy() for k, v in grads.items()}
    pick = rng if rng is not None else np.random.default_rng(seed)
    worst, worst_at, checked, kinks = 0.0, None, 0, 0
    small: list[tuple[str, int]] = []
    try:
        loss()
        base_signs = _relu_signs(model)
        for key, p in model.parameters().items():
            flat = p.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = np.sort(pick.choice(flat.size, size=max_coords, replace=False))
            analytic = grads[key].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                up = loss()
                crossed = not np.array_equal(_relu_signs(model), base_signs)
                flat[i] = orig - h
                down = loss()
                crossed = crossed or not np.array_equal(_relu_signs(model), base_signs)
                flat[i] = orig
                if crossed:
                    kinks += 1
                    continue
                checked += 1
                numeric = (up - down) / (2.0 * h)
                a = analytic[i]
                if 0.0 < max(abs(a), abs(numeric)) < EXTENDED_BELOW:
                    small.append((key, int(i)))
                    continue
                err = _relative_error(a, numeric)
                if err > worst:
                    worst, worst_at = err, (key, int(i))
        if small:
            for layer in model.layers().values():
                for store in (layer.params, layer.buffers):
                    for k in store:
                        store[k] = store[k].astype(np.longdouble)
            params = model.parameters()
            h_ext = np.longdouble(h)
            for key, i in small:
                flat = params[key].reshape(-1)
                orig = flat[i]
                flat[i] = orig + h_ext
                up = loss()
                flat[i] = orig - h_ext
                down = loss()
                flat[i] = orig
                err = _relative_error(grads[key].reshape(-1)[i], (up - down) / (2 * h_ext))
                if err > worst:
                    worst, worst_at = err, (key, i)
    finally:
        model.load_state(saved)
    return GradientCheck(worst, checked, kinks, len(small), worst_at)


def finite_difference_check(model: Module, inputs, labels, weights, h: float = 1e-5, **kwargs) -> float:
    """Max relative error ``|a - n| / max(|a|, |n|, 1e-8)`` over checked coordinates."""
    return gradient_check(model, inputs, labels, weights, h, **kwargs).max_error
