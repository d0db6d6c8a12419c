"""Point-based 3D segmentation with back-projected image features."""

__version__ = "0.1.0"
