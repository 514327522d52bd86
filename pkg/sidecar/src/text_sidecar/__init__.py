"""Out-of-process NER and embedding provider for the corpus pipeline."""

__version__ = "0.1.0"
