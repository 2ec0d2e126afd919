"""Wideband near-field massive-MIMO channel estimation workbench."""

from .config import DESK, FULL, SystemConfig, get_preset

__version__ = "0.1.0"

__all__ = ["SystemConfig", "DESK", "FULL", "get_preset", "__version__"]
