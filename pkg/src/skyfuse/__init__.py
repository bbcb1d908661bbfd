"""Multimodal (audio, IR/RGB video, radar) aerial-object classification."""

__version__ = "0.1.0"

CLASS_NAMES = ("airplane", "background", "bird", "drone", "helicopter")
MODALITIES = ("audio", "video_ir", "video_rgb", "radar")
