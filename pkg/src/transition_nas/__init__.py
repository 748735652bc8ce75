"""Desk-scale differentiable architecture search with transition-derived
inner-edge weights and iterative edge pruning."""

__version__ = "0.1.0"
