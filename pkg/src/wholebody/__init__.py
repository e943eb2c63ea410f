"""Temporally coherent whole-body (body + hands) motion recovery on synthetic data."""

__version__ = "0.1.0"
