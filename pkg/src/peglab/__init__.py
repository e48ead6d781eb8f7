"""Expert-guided multi-agent RL with personalized demonstrations."""

__version__ = "0.1.0"
