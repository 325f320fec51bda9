"""Model-serving sidecar for the balance swap-sampling wire protocol."""

from .app import create_app
from .models import (
    MaskCrop,
    ModelLoadError,
    StubModelBundle,
    TorchModelBundle,
    load_bundle,
)

__version__ = "0.1.0"
