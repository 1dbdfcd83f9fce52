"""Multi-view abstractive dialogue summarization at desk scale."""

__version__ = "0.1.0"
