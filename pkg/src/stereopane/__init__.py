"""stereopane: antique stereo pairs to real-time explorable 3D scenes."""

__version__ = "0.1.0"
