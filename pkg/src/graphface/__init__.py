"""graphface: joint face completion and super-resolution with patch-graph convolutions."""
__version__ = "0.1.0"
