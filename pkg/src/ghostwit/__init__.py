"""Ghost-variable correctness witnesses for a small concurrent language."""

__version__ = "0.1.0"
