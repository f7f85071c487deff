"""Coarse-to-fine diffeomorphic registration of lung CT with lesion-change tracking."""
from .cascade import CascadeConfig, RegistrationResult, register
from .preprocess import PreprocessConfig, preprocess
from .volume import IntensityWindow, Volume, load_volume, save_volume

__version__ = "0.1.0"

__all__ = [
    "CascadeConfig", "RegistrationResult", "register", "PreprocessConfig", "preprocess",
    "IntensityWindow", "Volume", "load_volume", "save_volume", "__version__",
]
