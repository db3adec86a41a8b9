"""FEA and image-model data: records, JSONL ingestion, class weights,
multimodal pairing and the synthetic generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_text
from .errors import (
    DataError, DuplicateIdError, FeaLengthError, FeaRangeError, FeatureLengthError,
    MissingClassError, PairingError, RecordError, SimplexError, UnknownLabelError,
    UnknownSplitError,
)

EMOTIONS = ("anger", "disgust", "fear", "happiness", "neutral", "sadness", "surprise")
LABEL_INDEX = {name: i for i, name in enumerate(EMOTIONS)}
N_CLASSES = len(EMOTIONS)
FEA_DIM = 63
IMAGE_FEATURE_DIM = 1280
SPLITS = ("train", "val", "test")
VIEWS = ("central", "side")
SIMPLEX_TOL = 1e-4


def label_index(name: str) -> int:
    return LABEL_INDEX[name]


def label_name(index: int) -> str:
    return EMOTIONS[index]


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabeledSample:
    id: str
    participant: str
    split: str
    label: int
    fea: np.ndarray

    def to_record(self) -> dict:
        return {"id": self.id, "participant": self.participant, "split": self.split,
                "label": EMOTIONS[self.label], "fea": self.fea.tolist()}


@dataclass(frozen=True, eq=False)
class ImageObservation:
    sample_id: str
    view: str
    probs: np.ndarray | None = None
    features: np.ndarray | None = None

    def to_record(self) -> dict:
        rec: dict = {"sample_id": self.sample_id, "view": self.view}
        if self.probs is not None:
            rec["probs"] = self.probs.tolist()
        if self.features is not None:
            rec["features"] = self.features.tolist()
        return rec


@dataclass(frozen=True, eq=False)
class MultimodalSample:
    sample: LabeledSample
    observation: ImageObservation

    @property
    def id(self) -> str:
        return self.sample.id

    @property
    def view(self) -> str:
        return self.observation.view

    @property
    def label(self) -> int:
        return self.sample.label

    @property
    def split(self) -> str:
        return self.sample.split


def class_counts(samples) -> np.ndarray:
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for s in samples:
        counts[s.label] += 1
    return counts


@dataclass(frozen=True)
class DatasetBundle:
    """Samples in file order; split views are derived from each sample's tag."""

    samples: tuple = ()

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> list:
        return self.split("train")

    @property
    def val(self) -> list:
        return self.split("val")

    @property
    def test(self) -> list:
        return self.split("test")

    def counts(self) -> dict[str, np.ndarray]:
        return {name: class_counts(self.split(name)) for name in SPLITS}

    def __len__(self) -> int:
        return len(self.samples)


def fea_matrix(samples) -> np.ndarray:
    if not samples:
        return np.zeros((0, FEA_DIM))
    return np.stack([getattr(s, "sample", s).fea for s in samples])


def labels_of(samples) -> np.ndarray:
    return np.array([s.label for s in samples], dtype=np.int64)


def _read_jsonl(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(path, lineno, "<record>", f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise RecordError(path, lineno, "<record>", "expected a JSON object")
            yield lineno, rec


def _require(rec: dict, key: str, path, lineno: int):
    if key not in rec:
        raise RecordError(path, lineno, key, "missing")
    return rec[key]


def _float_vector(value, path, lineno: int, key: str) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise RecordError(path, lineno, key, "expected a list of numbers")
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise RecordError(path, lineno, key, "non-finite value")
    return arr


def parse_fea_record(rec: dict, path="<memory>", lineno: int = 0) -> LabeledSample:
    sid = _require(rec, "id", path, lineno)
    if not isinstance(sid, str):
        raise RecordError(path, lineno, "id", "expected a string")
    split = _require(rec, "split", path, lineno)
    if split not in SPLITS:
        raise UnknownSplitError(path, lineno, "split", f"unknown split tag {split!r}")
    label = _require(rec, "label", path, lineno)
    if label not in LABEL_INDEX:
        raise UnknownLabelError(path, lineno, "label", f"unknown label {label!r}")
    fea = _float_vector(_require(rec, "fea", path, lineno), path, lineno, "fea")
    if fea.size != FEA_DIM:
        raise FeaLengthError(path, lineno, "fea", f"fea length {fea.size} ≠ {FEA_DIM}")
    outside = np.flatnonzero((fea < 0.0) | (fea > 1.0))
    if outside.size:
        i = int(outside[0])
        raise FeaRangeError(path, lineno, "fea", f"fea[{i}] = {fea[i]!r} outside [0, 1]")
    return LabeledSample(sid, str(rec.get("participant", "")), split, LABEL_INDEX[label], _frozen(fea))


def load_fea_dataset(path) -> DatasetBundle:
    samples = []
    seen: dict[str, int] = {}
    for lineno, rec in _read_jsonl(path):
        sample = parse_fea_record(rec, path, lineno)
        if sample.id in seen:
            raise DuplicateIdError(path, lineno, "id", f"duplicate id {sample.id!r} (first on line {seen[sample.id]})")
        seen[sample.id] = lineno
        samples.append(sample)
    return DatasetBundle(tuple(samples))


def parse_image_record(rec: dict, path="<memory>", lineno: int = 0) -> ImageObservation:
    sid = _require(rec, "sample_id", path, lineno)
    if not isinstance(sid, str):
        raise RecordError(path, lineno, "sample_id", "expected a string")
    view = _require(rec, "view", path, lineno)
    if view not in VIEWS:
        raise RecordError(path, lineno, "view", f"unknown view {view!r}")
    probs = features = None
    if rec.get("probs") is not None:
        probs = _float_vector(rec["probs"], path, lineno, "probs")
        if probs.size != N_CLASSES:
            raise SimplexError(path, lineno, "probs", f"probs length {probs.size} ≠ {N_CLASSES}")
        if np.any(probs < 0.0):
            raise SimplexError(path, lineno, "probs", "negative probability")
        total = float(probs.sum())
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise SimplexError(path, lineno, "probs", f"probs sum {total!r} outside 1 ± {SIMPLEX_TOL}")
        if total != 1.0:
            probs = probs / total
    if rec.get("features") is not None:
        features = _float_vector(rec["features"], path, lineno, "features")
        if features.size != IMAGE_FEATURE_DIM:
            raise FeatureLengthError(path, lineno, "features",
                                     f"features length {features.size} ≠ {IMAGE_FEATURE_DIM}")
    if probs is None and features is None:
        raise RecordError(path, lineno, "probs", "observation carries neither probs nor features")
    return ImageObservation(sid, view,
                            None if probs is None else _frozen(probs),
                            None if features is None else _frozen(features))


def load_image_observations(path) -> list[ImageObservation]:
    out = []
    seen: dict[tuple[str, str], int] = {}
    for lineno, rec in _read_jsonl(path):
        obs = parse_image_record(rec, path, lineno)
        key = (obs.sample_id, obs.view)
        if key in seen:
            raise DuplicateIdError(path, lineno, "sample_id",
                                   f"duplicate observation {key} (first on line {seen[key]})")
        seen[key] = lineno
        out.append(obs)
    return out


def dump_jsonl(records, path) -> None:
    """Write one compact JSON object per line; floats use shortest round-trip repr."""
    atomic_write_text(path, "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records))


def save_fea_dataset(bundle: DatasetBundle, path) -> None:
    dump_jsonl((s.to_record() for s in bundle.samples), path)


def save_image_observations(observations, path) -> None:
    dump_jsonl((o.to_record() for o in observations), path)


def compute_class_weights(train_samples) -> np.ndarray:
    """Inverse-frequency weights N / (K * n_c); balanced counts give all ones."""
    counts = class_counts(train_samples)
    missing = [EMOTIONS[c] for c in range(N_CLASSES) if counts[c] == 0]
    if missing:
        raise MissingClassError(f"class(es) absent from training data: {', '.join(missing)}")
    return weights_from_counts(counts)


def weights_from_counts(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return counts.sum() / (len(counts) * counts)


@dataclass(frozen=True)
class MultimodalBundle:
    samples: tuple = ()

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> list:
        return self.split("train")

    @property
    def val(self) -> list:
        return self.split("val")

    @property
    def test(self) -> list:
        return self.split("test")

    def counts(self) -> dict[str, np.ndarray]:
        return {name: class_counts(self.split(name)) for name in SPLITS}

    def __len__(self) -> int:
        return len(self.samples)


def pair_multimodal(bundle: DatasetBundle, observations, require_both_views: bool = True) -> MultimodalBundle:
    """One multimodal sample per (FEA sample, view) pair, ordered by FEA sample then view."""
    by_id = {s.id: s for s in bundle.samples}
    grouped: dict[str, dict[str, ImageObservation]] = {}
    for obs in observations:
        if obs.sample_id not in by_id:
            raise PairingError(f"image observation refers to unknown sample id {obs.sample_id!r}")
        views = grouped.setdefault(obs.sample_id, {})
        if obs.view in views:
            raise PairingError(f"duplicate observation for ({obs.sample_id!r}, {obs.view!r})")
        views[obs.view] = obs
    out = []
    for sample in bundle.samples:
        views = grouped.get(sample.id, {})
        if require_both_views:
            absent = [v for v in VIEWS if v not in views]
            if absent:
                raise PairingError(f"sample {sample.id!r} is missing view(s): {', '.join(absent)}")
        out.extend(MultimodalSample(sample, views[v]) for v in VIEWS if v in views)
    return MultimodalBundle(tuple(out))


def split_summary(bundle) -> dict:
    counts = bundle.counts()
    table = {name: {EMOTIONS[c]: int(counts[name][c]) for c in range(N_CLASSES)} for name in SPLITS}
    for name in SPLITS:
        table[name]["total"] = int(counts[name].sum())
    table["all"] = {EMOTIONS[c]: int(sum(counts[n][c] for n in SPLITS)) for c in range(N_CLASSES)}
    table["all"]["total"] = int(sum(table[n]["total"] for n in SPLITS))
    return table


def format_split_summary(summary: dict) -> str:
    columns = list(SPLITS) + ["all"]
    rows = list(EMOTIONS) + ["total"]
    width = max(len(r) for r in rows)
    lines = [f"{'class':<{width}} " + " ".join(f"{c:>6}" for c in columns)]
    for r in rows:
        lines.append(f"{r:<{width}} " + " ".join(f"{summary[c][r]:>6d}" for c in columns))
    return "\n".join(lines)


@dataclass(frozen=True)
class SynthConfig:
    per_class_train: int = 50
    per_class_val: int = 20
    per_class_test: int = 20
    sigma: float = 0.05
    mode: str = "easy"
    seed: int = 0
    # temperature of the simulated image classifier's nearest-prototype softmax
    image_temperature: float = field(default=0.01)

    def __post_init__(self):
        for name in ("per_class_train", "per_class_val", "per_class_test"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise DataError(f"{name} must be an integer ≥ 1, got {value!r}")
        if not isinstance(self.sigma, (int, float)) or not math.isfinite(self.sigma) or self.sigma < 0:
            raise DataError(f"sigma must be a finite number ≥ 0, got {self.sigma!r}")
        if self.mode not in ("easy", "complementary"):
            raise DataError(f"mode must be 'easy' or 'complementary', got {self.mode!r}")
        if self.image_temperature <= 0:
            raise DataError(f"image_temperature must be positive, got {self.image_temperature!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown synth config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def per_split(self) -> dict[str, int]:
        return {"train": self.per_class_train, "val": self.per_class_val, "test": self.per_class_test}


# classes sharing one prototype in complementary mode
FEA_COLLAPSED = (4, 5, 6)
IMAGE_COLLAPSED = (0, 1, 2)


def generate_synthetic(config: SynthConfig, seed: int | None = None):
    """Deterministic stand-in dataset: (DatasetBundle, list of ImageObservation).

    Each class has a 63-dim FEA prototype and a 1280-dim image prototype drawn
    from U[0.2, 0.8]; samples add N(0, sigma) noise (FEA clipped to [0, 1]).
    Image probabilities come from a simulated nearest-prototype classifier:
    softmax(-mean squared distance / temperature). In complementary mode FEA
    prototypes of neutral/sadness/surprise coincide and image prototypes of
    anger/disgust/fear coincide, so neither modality alone separates all classes.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    fea_protos = rng.uniform(0.2, 0.8, size=(N_CLASSES, FEA_DIM))
    img_protos = rng.uniform(0.2, 0.8, size=(N_CLASSES, IMAGE_FEATURE_DIM))
    if config.mode == "complementary":
        fea_protos[list(FEA_COLLAPSED)] = fea_protos[FEA_COLLAPSED[0]]
        img_protos[list(IMAGE_COLLAPSED)] = img_protos[IMAGE_COLLAPSED[0]]
    samples, observations = [], []
    serial = 0
    for split, per_class in config.per_split().items():
        for c in range(N_CLASSES):
            for k in range(per_class):
                fea = np.clip(fea_protos[c] + rng.normal(0.0, config.sigma, FEA_DIM), 0.0, 1.0) \
                    if config.sigma > 0 else fea_protos[c].copy()
                sid = f"s{serial:05d}"
                # participant-independent: participants never span splits
                participant = f"{split}-p{k % 10:02d}"
                samples.append(LabeledSample(sid, participant, split, c, _frozen(fea)))
                for view in VIEWS:
                    g = img_protos[c] + rng.normal(0.0, config.sigma, IMAGE_FEATURE_DIM) \
                        if config.sigma > 0 else img_protos[c].copy()
                    dist = np.mean((img_protos - g) ** 2, axis=1)
                    logits = -dist / config.image_temperature
                    probs = np.exp(logits - logits.max())
                    probs /= probs.sum()
                    observations.append(ImageObservation(sid, view, _frozen(probs), _frozen(g)))
                serial += 1
    return DatasetBundle(tuple(samples)), observations
