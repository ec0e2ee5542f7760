"""Ear-canal heart sounds to SCG/GCG: conditioning, gating, segmentation, equalization and reconstruction."""

__version__ = "0.1.0"
TOOL_NAME = "earcardio"
