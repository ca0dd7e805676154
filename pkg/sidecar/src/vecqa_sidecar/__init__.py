"""Wire-protocol sidecar serving an open-weight causal language model."""

from .config import SidecarConfig
from .model import GenerationError, ModelBundle, load_model
from .server import make_app

__all__ = ["SidecarConfig", "GenerationError", "ModelBundle", "load_model",
           "make_app"]
