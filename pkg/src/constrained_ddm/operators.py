"""Residual operators, interface transmission losses and constraint aggregates.

Residuals are graph nodes of shape (N, c) where c is 1 for real fields and 2
for complex fields stored as (real, imaginary) columns.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import evaluate, tape
from .autodiff.jets import DerivativeBundle
from .autodiff.tape import Node

LOSS_KINDS = ("approx", "full", "abs")


def rotate_normal(normal: np.ndarray) -> np.ndarray:
    """Tangent obtained by rotating unit normals (N, 2) by +90 degrees."""
    normal = np.asarray(normal, dtype=np.float64)
    return np.stack([-normal[..., 1], normal[..., 0]], axis=-1)


def dirichlet_residual(value: Node, target) -> Node:
    return value - np.asarray(target, dtype=np.float64)


def normal_derivative(bundle: DerivativeBundle, normal, coefficient=None) -> Node:
    """du/dn (or coefficient * du/dn for a flux) with per-point unit normals."""
    dn = bundle.directional(normal)
    return dn if coefficient is None else dn * coefficient


def neumann_residual(bundle: DerivativeBundle, normal, target, coefficient=None) -> Node:
    return normal_derivative(bundle, normal, coefficient) - np.asarray(target, dtype=np.float64)


def tangential_residual(bundle: DerivativeBundle, tangent, target) -> Node:
    return bundle.directional(tangent) - np.asarray(target, dtype=np.float64)


def pde_residual(model, params, x, problem, **context) -> Node:
    """Evaluate the governing-equation residual of ``problem`` at interior points."""
    bundle = evaluate(model, params, x, order=2)
    return problem.pde_residual(bundle, np.atleast_2d(x), **context)


def modulus(a: Node) -> Node:
    """Row-wise Euclidean norm of an (N, c) node, subgradient 0 at the origin."""
    a = tape.as_node(a)
    v = a.value
    r = np.sqrt(np.sum(v * v, axis=-1))
    safe = np.where(r > 0.0, r, 1.0)
    unit = np.where((r > 0.0)[..., None], v / safe[..., None], 0.0)
    return Node(r, [(a, lambda g: g[..., None] * unit)])


def _operator_nodes(operators) -> list[Node]:
    """Normalize interface operators to a list of m nodes of shape (N, c)."""
    if isinstance(operators, (list, tuple)) and operators and isinstance(operators[0], Node):
        return [op if op.ndim == 2 else tape.reshape(op, (-1, 1)) for op in operators]
    arr = np.asarray(operators, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :, None]
    elif arr.ndim == 2:
        arr = arr[:, :, None]
    return [tape.constant(arr[:, j, :]) for j in range(arr.shape[1])]


def _weights(q) -> Node:
    q = q if isinstance(q, Node) else tape.constant(np.asarray(q, dtype=np.float64))
    return q


def interface_loss_full(q, operators) -> Node:
    """Per-point |sum_j q_j O_j|^2."""
    q, ops = _weights(q), _operator_nodes(operators)
    combo = ops[0] * q[0]
    for j in range(1, len(ops)):
        combo = combo + ops[j] * q[j]
    return tape.sum(combo * combo, axis=1)


def interface_loss_abs(q, operators) -> Node:
    """Per-point sum_j q_j |O_j|."""
    q, ops = _weights(q), _operator_nodes(operators)
    total = None
    for j, op in enumerate(ops):
        mag = tape.absolute(op[:, 0]) if op.shape[1] == 1 else modulus(op)
        term = mag * q[j]
        total = term if total is None else total + term
    return total


def interface_loss_approx(q, operators) -> Node:
    """Per-point sum_j q_j^2 |O_j|^2."""
    q, ops = _weights(q), _operator_nodes(operators)
    total = None
    for j, op in enumerate(ops):
        term = tape.sum(op * op, axis=1) * (q[j] * q[j])
        total = term if total is None else total + term
    return total


_LOSSES = {
    "approx": interface_loss_approx,
    "full": interface_loss_full,
    "abs": interface_loss_abs,
}


def interface_loss(kind: str, q, operators) -> Node:
    try:
        return _LOSSES[kind](q, operators)
    except KeyError:
        raise ValueError(f"unknown interface loss {kind!r}; expected one of {LOSS_KINDS}") from None


def interface_objective(kind: str, q, groups: Sequence[Sequence[Node]]) -> Node:
    """Mean of the per-point transmission loss over all interface points.

    ``groups`` holds one operator list per interface edge; all edges share the
    same weights ``q``.
    """
    per_point = [interface_loss(kind, q, ops) for ops in groups]
    if not per_point:
        return tape.constant(0.0)
    stacked = per_point[0] if len(per_point) == 1 else tape.concatenate(per_point, axis=0)
    return tape.mean(stacked)


def mse(residual) -> Node:
    """Mean over points of the squared residual (components summed)."""
    r = tape.as_node(residual)
    sq = r * r
    if sq.ndim > 1:
        sq = tape.sum(sq, axis=tuple(range(1, sq.ndim)))
    return tape.mean(sq)


def constraint_vector(residuals: dict) -> tuple[tuple[str, ...], list[Node]]:
    """MSE aggregates of the residual groups that are present, in B, P, M order."""
    names, values = [], []
    for key in ("B", "P", "M"):
        r = residuals.get(key)
        if r is None:
            continue
        if isinstance(r, (list, tuple)):
            parts = [mse(x) for x in r if x is not None]
            if not parts:
                continue
            agg = parts[0]
            for extra in parts[1:]:
                agg = agg + extra
        else:
            agg = mse(r)
        names.append(key)
        values.append(agg)
    return tuple(names), values
