"""DG solver for steady electroneutral multi-ion transport."""

__version__ = "0.1.0"
