"""Torchvision classifier adapter for the nasseg oracle protocol."""

from .export import export_fixture
from .specs import REGISTRY, ExtractionSpec, get_spec
from .wrapper import TorchOracle

__all__ = ["ExtractionSpec", "REGISTRY", "get_spec", "TorchOracle", "export_fixture"]

__version__ = "0.1.0"
