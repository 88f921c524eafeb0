"""Thin adapters around the frozen models (inpainting, captioning, ViT
extraction, LPIPS, sentence embeddings) that communicate with the core
toolkit only through its file-interchange formats."""

__version__ = "0.1.0"
