"""Co-attention cascades for language-based audio retrieval.

Audio arrives as frame-level embeddings and captions as single embeddings;
the cascades refine both with self- and guided attention before a joint
projection trained with a bidirectional temperature-scaled contrastive loss.
"""
from coattn.cascade import (
    AttendedFeatures,
    CascadeConfig,
    CascadeParams,
    CascadeState,
    cascade_forward,
    iterating_forward,
    single_module,
    stacking_forward,
)
from coattn.data_io import EmbeddingBundle, generate_synthetic, read_bundle, write_bundle
from coattn.model import CoAttentionModel
from coattn.objective import LossConfig, combined_loss
from coattn.retrieval import MetricsReport, evaluate
from coattn.trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttendedFeatures", "CascadeConfig", "CascadeParams", "CascadeState", "CoAttentionModel",
    "EmbeddingBundle", "LossConfig", "MetricsReport", "TrainConfig", "cascade_forward",
    "combined_loss", "evaluate", "generate_synthetic", "iterating_forward", "read_bundle",
    "single_module", "stacking_forward", "train", "write_bundle",
]
