"""Parallelizable state-space world models and memory benchmarks."""

__version__ = "0.1.0"
