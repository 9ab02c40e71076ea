"""Reference backend processes for the corpusforge wire protocol."""

__version__ = "0.1.0"
