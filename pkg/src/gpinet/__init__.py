"""Graph-permutation-invariant structured prediction."""

__version__ = "0.1.0"
