"""Probabilistic grounding of metric-semantic spatial queries in 3D scene graphs."""

from __future__ import annotations

__version__ = "0.1.0"

from .parser import parse
from .pipeline import ground

__all__ = ["__version__", "ground", "parse"]
