"""Multi-task temporal models for per-frame affect recognition."""
__version__ = "0.1.0"
