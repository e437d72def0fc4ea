"""Joint continuous/discrete VAEs for unsupervised discovery of acquisition sites in connectomes."""

__version__ = "0.1.0"
