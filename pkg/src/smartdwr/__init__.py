"""Goal-oriented adaptive finite elements with recovered sensitivity weights."""
__version__ = "0.1.0"
