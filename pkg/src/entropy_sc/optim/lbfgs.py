"""Limited-memory BFGS with a backtracking Armijo line search (minimization)."""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 40
# rounding allowance on f for the approximate Armijo test (Hager & Zhang)
F_ROUNDING = 4.0 * np.finfo(np.float64).eps


@dataclass
class LbfgsState:
    capacity: int = 10
    history: deque = field(default_factory=deque)
    last_point: np.ndarray = None
    last_gradient: np.ndarray = None

    def push(self, s, y):
        """Store a curvature pair; pairs with s^T y <= 0 are skipped."""
        sy = float(s @ y)
        if not sy > 1e-300:
            return False
        if len(self.history) == self.capacity:
            self.history.popleft()
        self.history.append((s, y, 1.0 / sy))
        return True

    def direction(self, grad):
        """Two-loop recursion: returns -H grad."""
        q = grad.copy()
        alphas = []
        for s, y, rho in reversed(self.history):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if self.history:
            s, y, _ = self.history[-1]
            q *= float(s @ y) / float(y @ y)
        for (s, y, rho), a in zip(self.history, reversed(alphas)):
            b = rho * float(y @ q)
            q += (a - b) * s
        return -q


@dataclass(frozen=True)
class LbfgsInfo:
    iterations: int
    grad_norm: float
    converged: bool
    line_search_failed: bool
    evaluations: int


def lbfgs_minimize(fun, x0, max_iters=100, m=10, tolerance=1e-8, f_tolerance=0.0, state=None):
    """Minimize ``fun`` (returning value and gradient) starting at ``x0``.

    Stops when the gradient norm drops below ``tolerance``, when an accepted
    step lowers f by less than ``f_tolerance * max(1, |f|)`` (only if
    ``f_tolerance > 0``), or after
    ``max_iters`` iterations. If the line search needs more than 40 halvings
    the best point so far is returned with ``info.line_search_failed`` set.

    Passing an ``LbfgsState`` reuses (and extends) its curvature history, which
    lets a caller resume an interrupted run on the same objective.

    Returns:
        (x, f, info)
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    f = float(f)
    evals = 1
    if not np.isfinite(f):
        raise FloatingPointError("objective is not finite at the starting point")
    if state is None:
        state = LbfgsState(capacity=m)
    gnorm = float(np.linalg.norm(g))
    it = 0
    failed = False
    while gnorm >= tolerance and it < max_iters:
        d = state.direction(g)
        slope = float(g @ d)
        if not slope < 0.0:
            state.history.clear()
            d = -g
            slope = -gnorm * gnorm
        if not state.history:
            step = min(1.0, 1.0 / gnorm)
        else:
            step = 1.0
        for _ in range(MAX_BACKTRACKS + 1):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            evals += 1
            f_new = float(f_new)
            if not np.isfinite(f_new):
                step *= SHRINK
                continue
            if f_new <= f + ARMIJO_C * step * slope:
                break
            # near the minimum the decrease drops below the resolution of f;
            # accept if f did not rise beyond rounding and the slope shrank
            if (f_new <= f + F_ROUNDING * max(1.0, abs(f))
                    and float(g_new @ d) <= (1.0 - 2.0 * ARMIJO_C) * -slope):
                break
            step *= SHRINK
        else:
            failed = True
            break
        state.push(x_new - x, g_new - g)
        stalled = f_tolerance > 0 and f - f_new <= f_tolerance * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        if stalled:
            break
    state.last_point, state.last_gradient = x, g
    info = LbfgsInfo(it, gnorm, gnorm < tolerance, failed, evals)
    return x, f, info
