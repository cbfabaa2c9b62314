"""Adversarial imitation learning with residual critics, desk scale."""

__version__ = "0.1.0"

from arcil.nets import Adam, GradTape, Mlp, NonFiniteError

__all__ = ["Adam", "GradTape", "Mlp", "NonFiniteError", "__version__"]
