"""treecast: boosted trees that learn the parameters of time-series models."""

__version__ = "0.1.0"
