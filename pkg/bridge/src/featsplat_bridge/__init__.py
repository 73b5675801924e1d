"""Encoder bridge: turns images and text prompts into the engine's FMAP/TEMB
wire formats and runs point-prompted mask refinement."""

__version__ = "0.1.0"
