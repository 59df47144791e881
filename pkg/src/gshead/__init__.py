"""Emotion-editable 3D Gaussian talking head.

Speech features map to 17-dim action-unit codes, AU codes prompt a diffusion
model over facial vertex offsets, dedicated decoders produce dynamic Gaussian
rotation and opacity, a reference splatting rasterizer renders frames, and a
text-to-AU controller drives prompt-based emotion editing.
"""

__version__ = "0.1.0"
