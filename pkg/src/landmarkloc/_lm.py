"""Gauss-Newton with a Levenberg damping fallback.

The first attempt of every iteration is an undamped Gauss-Newton step; only
when it fails to lower the cost (or the system is singular) is the diagonal
damping switched on and raised until a step is accepted. Accepted steps never
increase the cost.
"""

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


@dataclass
class SolveInfo:
    state: Any
    iterations: int
    cost_history: list[float]
    converged: bool


def damped_gauss_newton(
    state,
    cost: Callable[[Any], float],
    linearize: Callable[[Any], tuple[np.ndarray, np.ndarray]],
    retract: Callable[[Any, np.ndarray], Any],
    max_iterations: int = 100,
    rel_tol: float = 1e-8,
    cost_floor: float = 1e-20,
    max_damping: float = 1e12,
) -> SolveInfo:
    """Minimise ``cost`` from ``state``.

    ``linearize(state)`` returns ``(H, g)`` with ``H ~ J^T W J`` and
    ``g = J^T W r``; the step solves ``(H + lambda diag(H)) dx = -g``.
    """
    current = cost(state)
    history = [current]
    if current <= cost_floor:
        return SolveInfo(state, 0, history, True)
    lam = 0.0
    accepted = 0
    converged = False
    for _ in range(max_iterations):
        H, g = linearize(state)
        diag = np.clip(np.diag(H).copy(), 1e-12 * max(np.max(np.diag(H)), 1e-300), None)
        step_taken = False
        while True:
            A = H + lam * np.diag(diag)
            try:
                dx = np.linalg.solve(A, -g)
                ok = np.all(np.isfinite(dx))
            except np.linalg.LinAlgError:
                ok = False
            if ok:
                candidate = retract(state, dx)
                new_cost = cost(candidate)
                if new_cost <= current:
                    step_taken = True
                    break
            lam = 1e-6 if lam == 0.0 else lam * 10.0
            if lam > max_damping:
                break
        if not step_taken:
            # no descent left at machine precision
            converged = True
            break
        rel = (current - new_cost) / current if current > 0 else 0.0
        state, current = candidate, new_cost
        history.append(current)
        accepted += 1
        lam = 0.0 if lam <= 1e-6 else lam / 10.0
        if rel < rel_tol or current <= cost_floor:
            converged = True
            break
    return SolveInfo(state, accepted, history, converged)
