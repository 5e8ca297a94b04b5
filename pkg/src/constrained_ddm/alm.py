"""Conditionally adaptive augmented Lagrangian updates.

The state vectors are aligned with an ordered tuple of constraint names, a
subset of ("B", "P", "M") for boundary, physics and measurement constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

DEFAULT_ETA = {"B": 1.0, "P": 1e-2, "M": 1.0}


@dataclass
class ALMState:
    names: tuple[str, ...]
    lam: np.ndarray
    mu: np.ndarray
    mu_max: np.ndarray
    v_bar: np.ndarray
    eta: np.ndarray
    omega: float = 0.999
    zeta: float = 0.99
    epsilon: float = 1e-16
    prev_loss: float = math.inf
    n_dual_updates: int = field(default=0)

    @classmethod
    def initial(
        cls,
        names,
        eta: dict[str, float] | None = None,
        omega: float = 0.999,
        zeta: float = 0.99,
        epsilon: float = 1e-16,
    ) -> "ALMState":
        names = tuple(names)
        eta_map = dict(DEFAULT_ETA)
        eta_map.update(eta or {})
        n = len(names)
        return cls(
            names=names,
            lam=np.ones(n),
            mu=np.ones(n),
            mu_max=np.ones(n),
            v_bar=np.zeros(n),
            eta=np.array([eta_map[k] for k in names], dtype=np.float64),
            omega=omega,
            zeta=zeta,
            epsilon=epsilon,
        )

    def copy(self) -> "ALMState":
        return replace(
            self,
            lam=self.lam.copy(),
            mu=self.mu.copy(),
            mu_max=self.mu_max.copy(),
            v_bar=self.v_bar.copy(),
            eta=self.eta.copy(),
        )

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {
            k: {"lambda": float(self.lam[i]), "mu": float(self.mu[i]), "v_bar": float(self.v_bar[i])}
            for i, k in enumerate(self.names)
        }


def augmented_loss(objective, constraints, state: ALMState):
    """J + lam.C + 0.5 mu.(C*C).

    ``constraints`` is a sequence aligned with ``state.names``; entries may be
    floats or graph nodes, in which case a node is returned.
    """
    total = objective
    for i, c in enumerate(constraints):
        total = total + state.lam[i] * c + 0.5 * state.mu[i] * (c * c)
    return total


def should_trigger(loss_p: float, loss_prev: float, p: int, cap: int, omega: float = 0.999) -> bool:
    return loss_p >= omega * loss_prev or p == cap


def square_average_update(constraints, state: ALMState) -> ALMState:
    c = np.asarray(constraints, dtype=np.float64)
    state.v_bar = state.zeta * state.v_bar + (1.0 - state.zeta) * (c * c)
    return state


def dual_and_penalty_update(constraints, state: ALMState) -> ALMState:
    """Moving average, multiplier, penalty bound and penalty updates (in place)."""
    c = np.asarray(constraints, dtype=np.float64)
    square_average_update(c, state)
    root = np.sqrt(state.v_bar) + state.epsilon
    state.lam = state.lam + state.mu * c
    state.mu_max = np.maximum(state.mu_max, state.eta / root)
    state.mu = np.minimum(state.mu_max, np.maximum(c / root, 1.0) * state.mu)
    state.n_dual_updates += 1
    return state


def inner_loop(
    epoch: Callable[[int], tuple[float, np.ndarray]],
    state: ALMState,
    cap: int,
    epoch_min: int,
) -> int:
    """Run primal epochs until a trigger fires at or after ``epoch_min``.

    ``epoch(p)`` performs one primal update and returns the augmented loss at
    the new parameters (with the multipliers in force during the update) and
    the constraint values there. Returns the number of epochs executed.
    """
    state.prev_loss = math.inf
    p = 0
    for p in range(1, cap + 1):
        loss_p, c = epoch(p)
        if should_trigger(loss_p, state.prev_loss, p, cap, state.omega):
            dual_and_penalty_update(c, state)
            if p >= epoch_min:
                state.prev_loss = loss_p
                break
        else:
            square_average_update(c, state)
        state.prev_loss = loss_p
    return p

