"""fedselsim: deterministic simulator for FL client-selection strategies."""

__version__ = "0.1.0"
