"""Versioned JSON model files.

Layout::

    {"format_version": 1, "kind": "mlp" | "logreg" | "late_fusion:<strategy>" | "intermediate_fusion",
     "architecture": {...}, "layers": [...], "params": {name: nested lists},
     "buffers": {...}, "fea_model": {...}?}

Floats are written with Python's shortest round-trip repr, so loading
recovers every 64-bit value exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .classifiers import LogRegModel, MlpModel
from .errors import ModelFormatError, ModelVersionError, ShapeError
from .fileio import atomic_write_text
from .fusion import IntermediateFusionModel, LateFusionModel

FORMAT_VERSION = 1


def model_to_dict(model) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "architecture": model.architecture(),
        "layers": [{"name": name, **(layer.config() if hasattr(layer, "config") else {"type": layer.kind})}
                   for name, layer in model.layers().items()],
        "params": {k: v.tolist() for k, v in model.parameters().items()},
        "buffers": {k: v.tolist() for k, v in model.buffers().items()},
    }
    fea_model = getattr(model, "fea_model", None)
    if fea_model is not None:
        doc["fea_model"] = model_to_dict(fea_model)
    return doc


def _build(kind: str, arch: dict):
    if kind == "mlp":
        return MlpModel.from_architecture(arch)
    if kind == "logreg":
        return LogRegModel.from_architecture(arch)
    if kind == "intermediate_fusion":
        return IntermediateFusionModel.from_architecture(arch)
    if kind.startswith("late_fusion:"):
        return LateFusionModel.from_architecture({**arch, "strategy": kind.split(":", 1)[1]})
    raise ModelFormatError(f"unknown model kind {kind!r}")


def model_from_dict(doc: dict):
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format_version {version!r}; this reader handles {FORMAT_VERSION}")
    try:
        model = _build(doc["kind"], doc["architecture"])
        state = {f"param:{k}": np.array(v, dtype=np.float64) for k, v in doc["params"].items()}
        state.update({f"buffer:{k}": np.array(v, dtype=np.float64) for k, v in doc.get("buffers", {}).items()})
        expected = set(model.state())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ModelFormatError(f"parameter names do not match architecture (missing {missing}, unexpected {extra})")
        model.load_state(state)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupted model document: {exc}") from None
    except ShapeError as exc:
        raise ModelFormatError(f"corrupted dimensions: {exc}") from None
    for v in model.parameters().values():
        if not np.all(np.isfinite(v)):
            raise ModelFormatError("model parameters contain non-finite values")
    if "fea_model" in doc:
        model.fea_model = model_from_dict(doc["fea_model"])
    return model


def save_model(model, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model), separators=(",", ":")) + "\n")


def load_model(path):
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"{path}: no such model file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: corrupted model file ({exc.msg} at char {exc.pos})") from None
    return model_from_dict(doc)
