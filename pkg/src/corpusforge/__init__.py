"""corpusforge: build and evaluate weakly-supervised speech corpora from podcasts."""

__version__ = "0.1.0"
