"""Station weather forecasting with a hierarchical bidirectional state-space encoder."""

__version__ = "0.1.0"
