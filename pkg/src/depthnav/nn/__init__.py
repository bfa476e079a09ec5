"""Minimal float64 autodiff and network toolkit."""

from .autodiff import Parameter, Tape, Tensor, detach, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .init import init_delta_orthogonal, init_orthogonal
from .layers import LayerSpec, Sequential, ShapeError, forward
from .optim import Adam, AdamState, polyak_update

__all__ = [
    "Adam",
    "AdamState",
    "LayerSpec",
    "Parameter",
    "Sequential",
    "ShapeError",
    "Tape",
    "Tensor",
    "detach",
    "forward",
    "init_delta_orthogonal",
    "init_orthogonal",
    "load_checkpoint",
    "no_grad",
    "polyak_update",
    "save_checkpoint",
]


def backward(tape: Tape, loss: Tensor, wrt=None):
    """Gradients of scalar ``loss``; see :meth:`Tape.backward`."""
    return tape.backward(loss, wrt=wrt)
