"""Plugin-protocol adapters for pretrained watermarking models, neural
codec attacks, and objective quality scoring."""

__version__ = "0.1.0"
