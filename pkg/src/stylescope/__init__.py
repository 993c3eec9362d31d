"""stylescope: calibrated clothing-trend measurement and style clustering."""

__version__ = "0.1.0"
