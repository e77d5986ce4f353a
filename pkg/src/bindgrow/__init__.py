"""Task-incremental learning by binding to similar tasks and growing only
conflicting layers, with multi-objective search over grow sequences."""

__version__ = "0.1.0"
