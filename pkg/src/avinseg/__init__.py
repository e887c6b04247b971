"""Desk-scale audiovisual instance segmentation with sound-aware counting."""

from avinseg.autodiff import Tensor, constant, grad_check

__all__ = ["Tensor", "constant", "grad_check"]
__version__ = "0.1.0"
