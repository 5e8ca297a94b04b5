"""Limited-memory BFGS with a strong Wolfe line search, and Adam.

Objectives are callables ``fg(x) -> (f, g)`` over flat float64 vectors.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff.tape import NonFiniteError

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def _cubic_min(x1, f1, g1, x2, f2, g2, lo=None, hi=None) -> float:
    """Minimizer of the cubic interpolating two points with slopes, clipped to [lo, hi]."""
    if lo is None:
        lo, hi = (x1, x2) if x1 <= x2 else (x2, x1)
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0.0:
        d2 = math.sqrt(disc)
        if x1 <= x2:
            t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        else:
            t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        if math.isfinite(t):
            return min(max(t, lo), hi)
    return 0.5 * (lo + hi)


@dataclass
class LineSearchResult:
    t: float
    f: float
    g: np.ndarray
    evaluations: int
    success: bool


def strong_wolfe(
    fg: Objective,
    x: np.ndarray,
    t: float,
    d: np.ndarray,
    f0: float,
    g0: np.ndarray,
    c1: float = 1e-4,
    c2: float = 0.9,
    max_evals: int = 25,
    tol_change: float = 1e-9,
) -> LineSearchResult:
    """Bracketing and zoom search for a step satisfying the strong Wolfe conditions."""
    gtd0 = float(g0 @ d)
    d_norm = float(np.max(np.abs(d)))
    evals = 0

    def phi(step):
        nonlocal evals
        evals += 1
        f, g = fg(x + step * d)
        return float(f), g, float(g @ d)

    f_new, g_new, gtd_new = phi(t)
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    done = False
    bracket = None
    while evals < max_evals:
        if not math.isfinite(f_new):
            # shrink into the finite region
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)]
            break
        if f_new > f0 + c1 * t * gtd0 or (evals > 1 and f_new >= f_prev):
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            done = True
            break
        if gtd_new >= 0:
            bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)]
            break
        lo, hi = t + 0.01 * (t - t_prev), 10.0 * t
        t_next = _cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, lo, hi)
        t_prev, f_prev, g_prev, gtd_prev = t, f_new, g_new, gtd_new
        t = t_next
        f_new, g_new, gtd_new = phi(t)
    if done:
        return LineSearchResult(t, f_new, g_new, evals, True)
    if bracket is None:
        bracket = [(t_prev, f_prev, g_prev, gtd_prev), (t, f_new, g_new, gtd_new)]

    # zoom phase
    insuf_progress = False
    while evals < max_evals:
        (ta, fa, ga, gtda), (tb, fb, gb, gtdb) = bracket
        lo_i = 0 if (fa <= fb or not math.isfinite(fb)) else 1
        if abs(tb - ta) * d_norm < tol_change:
            break
        if math.isfinite(fa) and math.isfinite(fb):
            t = _cubic_min(ta, fa, gtda, tb, fb, gtdb)
        else:
            t = 0.5 * (ta + tb)
        # keep away from the bracket ends
        lo_b, hi_b = min(ta, tb), max(ta, tb)
        eps = 0.1 * (hi_b - lo_b)
        if min(hi_b - t, t - lo_b) < eps:
            if insuf_progress or t >= hi_b or t <= lo_b:
                t = hi_b - eps if abs(t - hi_b) < abs(t - lo_b) else lo_b + eps
                insuf_progress = False
            else:
                insuf_progress = True
        else:
            insuf_progress = False
        f_new, g_new, gtd_new = phi(t)
        lo_entry = bracket[lo_i]
        if not math.isfinite(f_new) or f_new > f0 + c1 * t * gtd0 or f_new >= lo_entry[1]:
            bracket[1 - lo_i] = (t, f_new, g_new, gtd_new)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                return LineSearchResult(t, f_new, g_new, evals, True)
            if gtd_new * (bracket[1 - lo_i][0] - bracket[lo_i][0]) >= 0:
                bracket[1 - lo_i] = bracket[lo_i]
            bracket[lo_i] = (t, f_new, g_new, gtd_new)
    # no strong Wolfe point: hand back the best sufficient-decrease point, if any
    best = min(bracket, key=lambda e: e[1] if math.isfinite(e[1]) else math.inf)
    ok = best[0] > 0 and math.isfinite(best[1]) and best[1] <= f0 + c1 * best[0] * gtd0
    if ok:
        return LineSearchResult(best[0], best[1], best[2], evals, False)
    return LineSearchResult(0.0, f0, g0, evals, False)


@dataclass
class LBFGS:
    """Quasi-Newton minimizer; each ``step`` call runs a short burst of iterations."""

    lr: float = 0.1
    history_size: int = 10
    max_iter: int = 20
    max_evals: int = 25
    tolerance_grad: float = 1e-7
    tolerance_change: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    n_iter: int = 0
    n_evals: int = 0
    n_fallbacks: int = 0

    def reset(self) -> None:
        self.s_hist.clear()
        self.y_hist.clear()
        self.n_iter = 0

    def direction(self, g: np.ndarray) -> np.ndarray:
        q = -g.copy()
        if not self.s_hist:
            return q
        alphas = []
        rhos = [1.0 / float(y @ s) for s, y in zip(self.s_hist, self.y_hist)]
        for s, y, rho in zip(reversed(self.s_hist), reversed(self.y_hist), reversed(rhos)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        s_last, y_last = self.s_hist[-1], self.y_hist[-1]
        q *= float(s_last @ y_last) / float(y_last @ y_last)
        for (s, y, rho), a in zip(zip(self.s_hist, self.y_hist, rhos), reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return q

    def step(self, x: np.ndarray, fg: Objective, f0=None, g0=None):
        """Up to ``max_iter`` iterations from ``x``; returns (x_new, f_new, g_new).

        The evaluation budget ``max_evals`` covers all line searches of the
        call. A non-finite objective at ``x`` raises after the curvature
        history is discarded; non-finite trial points are rejected inside the
        line search.
        """
        x = np.asarray(x, dtype=np.float64)
        evals = 0
        if f0 is None:
            try:
                f0, g0 = fg(x)
            except NonFiniteError:
                self.reset()
                raise
            evals += 1
        if not math.isfinite(f0) or not np.all(np.isfinite(g0)):
            self.reset()
            raise NonFiniteError("objective is not finite at the current point")

        def safe_fg(z):
            try:
                f, g = fg(z)
            except NonFiniteError:
                return math.inf, np.full_like(z, np.nan)
            if not math.isfinite(f) or not np.all(np.isfinite(g)):
                return math.inf, np.full_like(z, np.nan)
            return f, g

        f, g = float(f0), g0
        for _ in range(self.max_iter):
            g_norm1 = float(np.sum(np.abs(g)))
            if float(np.max(np.abs(g))) <= self.tolerance_grad:
                break
            d = self.direction(g)
            gtd = float(g @ d)
            if gtd > -1e-300:
                # not a descent direction, restart from steepest descent
                self.reset()
                d = -g
                gtd = float(g @ d)
            t = min(1.0, 1.0 / g_norm1) * self.lr if not self.s_hist else self.lr
            res = strong_wolfe(safe_fg, x, t, d, f, g, self.c1, self.c2, self.max_evals)
            evals += res.evaluations
            if res.t == 0.0:
                # line search failed outright: plain gradient step at the base rate
                self.n_fallbacks += 1
                self.reset()
                t = min(1.0, 1.0 / g_norm1) * self.lr
                x_try = x - t * g
                f_try, g_try = safe_fg(x_try)
                evals += 1
                if math.isfinite(f_try) and f_try < f:
                    x, f, g = x_try, f_try, g_try
                break
            x_new = x + res.t * d
            s = x_new - x
            y = res.g - g
            ys = float(y @ s)
            if ys > 1e-10:
                if len(self.s_hist) == self.history_size:
                    self.s_hist.popleft()
                    self.y_hist.popleft()
                self.s_hist.append(s)
                self.y_hist.append(y)
            self.n_iter += 1
            f_old = f
            x, f, g = x_new, res.f, res.g
            if evals >= self.max_evals:
                break
            if float(np.max(np.abs(s))) <= self.tolerance_change or abs(f - f_old) < self.tolerance_change:
                break
        self.n_evals += evals
        return x, f, g


def lbfgs_step(state: LBFGS, params: np.ndarray, loss_fn: Objective):
    """Functional form: returns (new params, state, loss)."""
    x_new, f_new, _ = state.step(params, loss_fn)
    return x_new, state, f_new


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    maximize: bool = False
    lower_bound: float | None = None
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def reset(self) -> None:
        self.m = self.v = None
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        if self.maximize:
            g = -g
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        x_new = np.asarray(x, dtype=np.float64) - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if self.lower_bound is not None:
            x_new = np.maximum(x_new, self.lower_bound)
        return x_new


def adam_step(state: Adam, params: np.ndarray, grad: np.ndarray):
    """Functional form: returns (new params, state)."""
    return state.step(params, grad), state


def project_interface_params(q: np.ndarray, floor: float = 1.0) -> np.ndarray:
    return np.maximum(q, floor)
