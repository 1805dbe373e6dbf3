"""Low-rank adapters over 8-bit quantized weights for contrastive sentence embeddings."""

__version__ = "0.1.0"
