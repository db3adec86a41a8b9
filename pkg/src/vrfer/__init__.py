"""Static facial-expression recognition from VR headset expression activations,
with late and intermediate fusion against image-model outputs."""

from .classifiers import LogRegModel, MlpModel, extract_features, predict_label, predict_proba, train_logreg, train_mlp
from .data import EMOTIONS, DatasetBundle, SynthConfig, generate_synthetic, load_fea_dataset, pair_multimodal
from .evaluation import agreement_analysis, evaluate, oracle_fusion_accuracy
from .fusion import IntermediateFusionModel, LateFusionModel, train_intermediate_fusion, train_late_fusion
from .modelio import load_model, save_model
from .training import TrainConfig, TrainHistory

__version__ = "0.1.0"

__all__ = [
    "EMOTIONS", "DatasetBundle", "IntermediateFusionModel", "LateFusionModel", "LogRegModel", "MlpModel",
    "SynthConfig", "TrainConfig", "TrainHistory", "agreement_analysis", "evaluate", "extract_features",
    "generate_synthetic", "load_fea_dataset", "load_model", "oracle_fusion_accuracy", "pair_multimodal",
    "predict_label", "predict_proba", "save_model", "train_intermediate_fusion", "train_late_fusion",
    "train_logreg", "train_mlp",
]
