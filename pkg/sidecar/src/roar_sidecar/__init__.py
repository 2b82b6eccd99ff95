"""Model-serving sidecar speaking the roar-scrub wire protocol."""

__version__ = "0.1.0"
