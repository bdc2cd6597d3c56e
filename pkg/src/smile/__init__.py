"""Certified training of neural networks under global relational properties."""

from .model import LinearHead, Mlp, SmileModel
from .property import InputBox, RelationalProperty, fairness, monotonicity, robustness

__version__ = "0.1.0"

__all__ = ["LinearHead", "Mlp", "SmileModel", "InputBox", "RelationalProperty",
           "fairness", "monotonicity", "robustness"]
