"""Off-policy learning of prompt policies with kernel-marginalized sentence-space gradients."""
__version__ = "0.1.0"
