"""Context-aware user embeddings from masked non-negative CP factorization.

The package turns match logs into a user x version x champion tensor of pick
proportions, factorizes it into non-negative user, temporal and champion
embeddings, feeds those embeddings to an MLP decoder and offers tools for
reading the embeddings back as behavior.
"""

from .analysis import (champion_entropy, champion_type_activation, classify_generalists_specialists,
                       component_labels, engagement_summary, pick_rates)
from .data import (Dataset, LabeledInstance, MatchRecord, SplitSpec, ingest, label_instances,
                   sessionize, split)
from .decoder import DecoderConfig, DecoderModel, fuse_individual_context, gradient_check, predict, train
from .factorization import (FitOptions, KruskalFactors, factorize, holdout_slices, load_factors,
                            masked_gradient, masked_loss, reconstruct, save_factors, select_rank)
from .metrics import EvalBatch, auc, nrmse, rmse
from .synth import GeneratorConfig, generate
from .tensor import SparseMaskedTensor, build_tensor

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DecoderConfig", "DecoderModel", "EvalBatch", "FitOptions", "GeneratorConfig",
    "KruskalFactors", "LabeledInstance", "MatchRecord", "SparseMaskedTensor", "SplitSpec",
    "auc", "build_tensor", "champion_entropy", "champion_type_activation",
    "classify_generalists_specialists", "component_labels", "engagement_summary", "factorize",
    "fuse_individual_context", "generate", "gradient_check", "holdout_slices", "ingest",
    "label_instances", "load_factors", "masked_gradient", "masked_loss", "nrmse", "pick_rates",
    "predict", "reconstruct", "rmse", "save_factors", "select_rank", "sessionize", "split", "train",
    "__version__",
]
