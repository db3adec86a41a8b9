"""Grid search with best-validation selection.

Candidate ``i`` always trains with seed ``base_seed + i``, so the ranked
results do not depend on the worker count or on scheduling.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifiers import LogRegModel, MlpModel, predict_label
from .data import DatasetBundle, MultimodalBundle, compute_class_weights, fea_matrix, labels_of
from .errors import GridSpecError, VrferError
from .fusion import (
    GATES, LATE_STRATEGIES, IntermediateFusionModel, LateFusionModel, prepare_intermediate_inputs,
    prepare_late_inputs,
)
from .training import TrainConfig, fit

MODEL_KINDS = ("mlp", "logreg", "late_fusion", "intermediate_fusion")

_COMMON = {
    "learning_rate": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0,
    "batch_size": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
    "max_epochs": lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 1,
    "class_weighting": lambda v: isinstance(v, bool),
    "shuffle": lambda v: isinstance(v, bool),
}
_rate = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and 0 <= v < 1  # noqa: E731
AXES = {
    "mlp": {**_COMMON, "hidden": lambda v: isinstance(v, list) and len(v) >= 1
            and all(isinstance(h, int) and h >= 1 for h in v), "dropout": _rate},
    "logreg": {**_COMMON, "l2_strength": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0},
    "late_fusion": {**_COMMON, "strategy": lambda v: v in LATE_STRATEGIES},
    "intermediate_fusion": {**_COMMON, "projection_width": lambda v: isinstance(v, int) and v >= 1,
                            "dropout": _rate, "gate": lambda v: v in GATES},
}


@dataclass(frozen=True)
class GridSpec:
    model: str
    axes: dict
    base_seed: int = 0

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise GridSpecError(f"unknown model kind {self.model!r}; expected one of {MODEL_KINDS}")
        if not isinstance(self.axes, dict):
            raise GridSpecError("axes must be a mapping of name -> list of values")
        allowed = AXES[self.model]
        for name, values in self.axes.items():
            if name not in allowed:
                raise GridSpecError(f"axis {name!r} is not valid for model {self.model!r}")
            if not isinstance(values, list) or not values:
                raise GridSpecError(f"axis {name!r} is empty")
            for v in values:
                if not allowed[name](v):
                    raise GridSpecError(f"axis {name!r}: invalid value {v!r}")
        if not isinstance(self.base_seed, int):
            raise GridSpecError(f"base_seed must be an integer, got {self.base_seed!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            return cls(d["model"], d["axes"], d.get("base_seed", 0))
        except KeyError as exc:
            raise GridSpecError(f"grid spec is missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "GridSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise GridSpecError(f"{path}: cannot read grid spec ({exc})") from None

    @property
    def size(self) -> int:
        return int(np.prod([len(v) for v in self.axes.values()], dtype=np.int64))


def enumerate_grid(spec: GridSpec) -> list[dict]:
    """Cartesian product in declared axis order, last axis varying fastest."""
    names = list(spec.axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(spec.axes[n] for n in names))]


@dataclass
class CandidateResult:
    index: int
    config: dict
    seed: int
    val_accuracy: float | None = None
    test_accuracy: float | None = None
    wall_time: float = field(default=0.0, compare=False)
    error: str | None = None

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"index": self.index, "config": self.config, "seed": self.seed,
             "val_accuracy": self.val_accuracy, "test_accuracy": self.test_accuracy, "error": self.error}
        if include_timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class SearchResult:
    ranked: list
    winner: CandidateResult

    def to_jsonl(self, include_timing: bool = False) -> str:
        return "".join(json.dumps(r.to_dict(include_timing)) + "\n" for r in self.ranked)


def _train_config(config: dict, seed: int, default_batch: int) -> TrainConfig:
    return TrainConfig.from_dict(config, batch_size=default_batch, seed=seed)


def build_and_train(kind: str, config: dict, data, seed: int):
    """Train one candidate. Returns (model, val inputs/labels, test inputs/labels)."""
    if kind in ("mlp", "logreg"):
        tc = _train_config(config, seed, 32)
        if kind == "mlp":
            model = MlpModel(tuple(config.get("hidden", (128, 64))), config.get("dropout", 0.2), seed=seed)
        else:
            model = LogRegModel(config.get("l2_strength", 0.0))
        train, val, test = data.train, data.val, data.test
        weights = compute_class_weights(train) if tc.class_weighting else None
        fit(model, fea_matrix(train), labels_of(train), fea_matrix(val), labels_of(val), tc, weights)
        return model, (fea_matrix(val), labels_of(val)), (fea_matrix(test), labels_of(test))
    bundle: MultimodalBundle = data.bundle
    if kind == "late_fusion":
        tc = _train_config(config, seed, 32)
        model = LateFusionModel(config.get("strategy", "cross_attention"), seed=seed)
        prep = prepare_late_inputs
    else:
        tc = _train_config(config, seed, 128)
        fea_dim = data.fea_model.first_layer.n_out
        model = IntermediateFusionModel(fea_dim, width=config.get("projection_width", 512),
                                        dropout=config.get("dropout", 0.4), gate=config.get("gate", "softmax"),
                                        seed=seed)
        prep = prepare_intermediate_inputs
    model.fea_model = data.fea_model
    train, val, test = (prep(data.fea_model, s) for s in (bundle.train, bundle.val, bundle.test))
    if not (kind == "late_fusion" and model.strategy == "average"):
        weights = compute_class_weights(bundle.train) if tc.class_weighting else None
        fit(model, train.inputs, train.labels, val.inputs, val.labels, tc, weights)
    return model, (val.inputs, val.labels), (test.inputs, test.labels)


@dataclass
class FusionSearchData:
    """Multimodal data plus the frozen FEA model that fusion candidates build on."""

    bundle: MultimodalBundle
    fea_model: MlpModel


def _accuracy(model, inputs, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict_label(model.forward(inputs)) == labels))


_WORKER_DATA = None


def _init_worker(data):
    global _WORKER_DATA
    _WORKER_DATA = data


def _run_candidate(kind: str, index: int, config: dict, seed: int, evaluate_test: bool, data=None):
    data = _WORKER_DATA if data is None else data
    start = time.perf_counter()
    result = CandidateResult(index, config, seed)
    model = None
    try:
        model, (vx, vy), (tx, ty) = build_and_train(kind, config, data, seed)
        result.val_accuracy = _accuracy(model, vx, vy)
        if evaluate_test:
            result.test_accuracy = _accuracy(model, tx, ty)
    except (VrferError, ValueError, ArithmeticError, FloatingPointError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        model = None
    result.wall_time = time.perf_counter() - start
    return result, model


def _rank_key(r: CandidateResult):
    return (r.val_accuracy is None, -(r.val_accuracy or 0.0), r.index)


def run_grid_search(spec: GridSpec, data, parallelism: int = 1, evaluate_all: bool = False) -> SearchResult:
    """Train every candidate; rank by validation accuracy (desc) then index (asc).

    ``data`` is a DatasetBundle for unimodal kinds or a FusionSearchData for
    fusion kinds. Failed candidates are kept with their error and rank last.
    """
    if parallelism < 1:
        raise GridSpecError(f"parallelism must be ≥ 1, got {parallelism}")
    unimodal = spec.model in ("mlp", "logreg")
    if unimodal and not isinstance(data, DatasetBundle):
        raise GridSpecError(f"model {spec.model!r} needs an FEA dataset")
    if not unimodal and not isinstance(data, FusionSearchData):
        raise GridSpecError(f"model {spec.model!r} needs multimodal data and a frozen FEA model")
    configs = enumerate_grid(spec)
    tasks = [(spec.model, i, cfg, spec.base_seed + i, evaluate_all) for i, cfg in enumerate(configs)]
    results: list[CandidateResult] = []
    best: tuple | None = None

    def collect(result, model):
        nonlocal best
        results.append(result)
        if model is not None and (best is None or _rank_key(result) < _rank_key(best[0])):
            best = (result, model)

    if parallelism == 1:
        for task in tasks:
            collect(*_run_candidate(*task, data=data))
    else:
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_init_worker, initargs=(data,)) as pool:
            for result, model in pool.map(_run_candidate, *zip(*tasks)):
                collect(result, model)
    if best is None:
        errors = "; ".join(f"#{r.index}: {r.error}" for r in results[:3])
        raise VrferError(f"all {len(results)} grid candidates failed ({errors})")
    ranked = sorted(results, key=_rank_key)
    winner, model = best
    if winner.test_accuracy is None:
        _, _, (tx, ty) = _split_inputs(spec.model, data)
        winner.test_accuracy = _accuracy(model, tx, ty)
    return SearchResult(ranked, winner)


def _split_inputs(kind: str, data):
    if kind in ("mlp", "logreg"):
        return tuple((fea_matrix(s), labels_of(s)) for s in (data.train, data.val, data.test))
    prep = prepare_late_inputs if kind == "late_fusion" else prepare_intermediate_inputs
    return tuple((split.inputs, split.labels) for split in
                 (prep(data.fea_model, s) for s in (data.bundle.train, data.bundle.val, data.bundle.test)))
