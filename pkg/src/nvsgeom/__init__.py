"""Multi-view geometry and data-pipeline utilities for novel view synthesis."""

__version__ = "0.1.0"
