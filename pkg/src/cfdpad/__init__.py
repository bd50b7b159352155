"""Channel-wise feature denoising for presentation attack detection, at desk scale."""

__version__ = "0.1.0"
