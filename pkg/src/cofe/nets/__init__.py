"""Networks, training procedures, and checkpoint persistence."""

from .checkpoint import (
    G_SOURCE_AUTOENCODER,
    G_SOURCE_GAN,
    LoadedBundle,
    ModelBundle,
    bundle_from_parts,
    load_checkpoint,
    save_checkpoint,
)
from .models import (
    TASK_AF,
    TASK_POTASSIUM,
    TASKS,
    Discriminator,
    Encoder,
    Generator,
    Predictor,
)
from .pipeline import train_bundles, train_generator_encoder
from .train import (
    TrainConfig,
    inversion_quality,
    train_autoencoder,
    train_encoder,
    train_gan,
    train_predictor,
)

__all__ = [
    "G_SOURCE_AUTOENCODER", "G_SOURCE_GAN", "LoadedBundle", "ModelBundle",
    "bundle_from_parts", "load_checkpoint", "save_checkpoint", "TASK_AF",
    "TASK_POTASSIUM", "TASKS", "Discriminator", "Encoder", "Generator",
    "Predictor", "train_bundles", "train_generator_encoder", "TrainConfig",
    "inversion_quality", "train_autoencoder", "train_encoder", "train_gan",
    "train_predictor",
]
