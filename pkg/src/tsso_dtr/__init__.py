"""Risk-aware placement and scheduling of dynamic thermal rating sensors."""

__version__ = "0.1.0"
