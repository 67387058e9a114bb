"""Off-policy learning with exponentially smoothed importance weights."""
__version__ = "0.1.0"
