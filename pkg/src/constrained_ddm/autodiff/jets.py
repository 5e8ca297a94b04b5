"""Spatial jets of network outputs and parameter gradients of scalar losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .tape import Node


@dataclass
class DerivativeBundle:
    """Network output and its spatial derivatives at a batch of points.

    ``value`` has shape (N, n_out); ``gradient`` and ``hessian_diag`` have
    shape (dim, N, n_out) and hold du/dx_i and d2u/dx_i^2.
    """

    value: Node
    gradient: Node | None = None
    hessian_diag: Node | None = None

    @property
    def dim(self) -> int:
        return self.gradient.shape[0]

    def output(self, j: int) -> "DerivativeBundle":
        """Restrict to one output component (keeps a trailing axis of length 1)."""
        sl = slice(j, j + 1)
        return DerivativeBundle(
            self.value[:, sl],
            None if self.gradient is None else self.gradient[:, :, sl],
            None if self.hessian_diag is None else self.hessian_diag[:, :, sl],
        )

    def laplacian(self) -> Node:
        if self.hessian_diag is None:
            raise ValueError("bundle was evaluated without second derivatives")
        return tape.sum(self.hessian_diag, axis=0)

    def partial(self, i: int) -> Node:
        return self.gradient[i]

    def directional(self, direction: np.ndarray) -> Node:
        """Derivative along per-point unit vectors ``direction`` of shape (N, dim)."""
        direction = np.asarray(direction, dtype=np.float64)
        weights = direction.T[:, :, None]  # (dim, N, 1)
        return tape.sum(self.gradient * weights, axis=0)


def evaluate(model, params, x, order: int = 2) -> DerivativeBundle:
    """Evaluate ``model`` and its spatial derivatives up to ``order`` at ``x``.

    ``params`` is either a flat parameter vector or the list of leaf nodes
    returned by ``model.leaves``. ``x`` is a single point (dim,) or a batch
    (N, dim).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    leaves = params if isinstance(params, (list, tuple)) else model.leaves(params)
    stack = model.jet(leaves, x, order)
    tape.check_finite(stack, "network output")
    d = x.shape[1]
    value = stack[0]
    gradient = stack[1 : 1 + d] if order >= 1 else None
    hessian = stack[1 + d : 1 + 2 * d] if order >= 2 else None
    return DerivativeBundle(value, gradient, hessian)


def parameter_gradient(loss: Node, leaves) -> np.ndarray:
    """d(loss)/d(theta) flattened in leaf order; unreachable leaves give zeros."""
    grads = tape.grad(loss, leaves)
    flat = np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0)
    tape.check_finite(flat, "parameter gradient")
    return flat
