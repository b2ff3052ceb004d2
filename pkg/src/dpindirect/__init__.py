"""Indirect estimation and parametric-bootstrap inference for privatized statistics."""

__version__ = "0.1.0"
