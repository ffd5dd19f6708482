"""Multi-view clustering: decoupled contrastive learning with random-walk rectified targets."""

__version__ = "0.1.0"
