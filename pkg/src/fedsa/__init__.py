"""Sliding-mode-control model poisoning against federated aggregation rules."""
from .errors import ConfigError, ControllerFault, FormatError, InvalidInput

__version__ = "0.1.0"

__all__ = ["ConfigError", "ControllerFault", "FormatError", "InvalidInput", "__version__"]
