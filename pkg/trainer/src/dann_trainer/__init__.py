"""Domain-adversarial trainer producing card-invariant press embeddings.

Trains on labeled source-card traces plus unlabeled target-card traces
from the simulator's dataset format, and exports the frozen encoder in
the cross-runtime weight-file format for the recognition package.
"""

from .data import DomainSplit, load_splits
from .export import (encoder_manifest, encoder_tensors, export_embeddings,
                     export_encoder, infer_embeddings)
from .model import (EMBED_DIM, INPUT_SPEC, N_CLASSES, ClassHead, DannModel,
                    DomainHead, PressEncoder, gradient_reversal,
                    prepare_input)
from .train import (TrainConfig, TrainResult, accuracy, discriminator_probe,
                    grl_check, predict, train)

__all__ = [
    "DomainSplit", "load_splits", "encoder_manifest", "encoder_tensors",
    "export_embeddings", "export_encoder", "infer_embeddings", "EMBED_DIM",
    "INPUT_SPEC", "N_CLASSES", "ClassHead", "DannModel", "DomainHead",
    "PressEncoder", "gradient_reversal", "prepare_input", "TrainConfig",
    "TrainResult", "accuracy", "discriminator_probe", "grl_check", "predict",
    "train",
]
