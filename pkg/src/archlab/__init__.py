"""Desk-scale lab for comparing transformer architectures and pretraining objectives."""
from .model.config import CD, ED, ND, ArchitectureKind, ModelConfig

__version__ = "0.1.0"

__all__ = ["CD", "ED", "ND", "ArchitectureKind", "ModelConfig", "__version__"]
