"""Model adapters that feed the calibration toolkit through its file
formats: dense features (.fmap), robot masks (PNG), and 2D tracks (CSV)."""

__version__ = "0.1.0"
