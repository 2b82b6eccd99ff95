"""roar-scrub: remove sensitive objects from annotated image datasets and
re-score the privacy/utility trade-off, with deterministic built-in backends."""

__version__ = "0.1.0"
