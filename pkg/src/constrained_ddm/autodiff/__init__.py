from .jets import DerivativeBundle, evaluate, parameter_gradient
from .tape import Node, NonFiniteError, backward, constant, grad

__all__ = [
    "DerivativeBundle",
    "Node",
    "NonFiniteError",
    "backward",
    "constant",
    "evaluate",
    "grad",
    "parameter_gradient",
]
