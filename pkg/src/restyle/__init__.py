"""Toy pixel-space diffusion stack with rearranged-attention style transfer."""

__version__ = "0.1.0"
