"""Levenberg-Marquardt for small dense nonlinear least-squares problems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    iterations: int
    nfev: int
    converged: bool
    message: str
    costs: list = field(default_factory=list)


def forward_difference_jacobian(fun_batch: Callable, x: np.ndarray, step: float = 1e-6):
    """Residual at ``x`` and its forward-difference Jacobian from one batched call.

    ``fun_batch`` maps (B, p) parameter rows to (B, k) residual rows.
    """
    p = x.size
    X = np.repeat(x[None], p + 1, axis=0)
    h = step * np.maximum(1.0, np.abs(x))
    X[1:] += np.diag(h)
    R = fun_batch(X)
    r0 = R[0]
    J = (R[1:] - r0).T / h
    return r0, J


def levenberg_marquardt(fun_batch: Callable, x0, max_iter: int = 100, gtol: float = 1e-10,
                        xtol: float = 1e-12, ftol: float = 1e-15, fd_step: float = 1e-6) -> LMResult:
    """Minimize ``0.5 * ||r(x)||^2`` with Nielsen's damping update.

    Accepted steps never increase the cost. The Jacobian comes from forward
    differences of ``fun_batch`` (see :func:`forward_difference_jacobian`).
    """
    x = np.asarray(x0, dtype=float).copy()
    r, J = forward_difference_jacobian(fun_batch, x, fd_step)
    nfev = x.size + 1
    cost = 0.5 * float(r @ r)
    costs = [cost]
    A = J.T @ J
    g = J.T @ r
    mu = 1e-3 * max(float(np.max(np.diag(A))), 1e-12)
    nu = 2.0
    message = "max iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) <= gtol:
            converged, message = True, "gradient below tolerance"
            break
        D = np.diag(np.maximum(np.diag(A), 1e-12))
        try:
            delta = np.linalg.solve(A + mu * D, -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            continue
        if np.linalg.norm(delta) <= xtol * (np.linalg.norm(x) + xtol):
            converged, message = True, "step below tolerance"
            break
        x_new = x + delta
        r_new = fun_batch(x_new[None])[0]
        nfev += 1
        cost_new = 0.5 * float(r_new @ r_new)
        predicted = -float(delta @ g) - 0.5 * float(delta @ (A @ delta))
        rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        if rho > 0 and cost_new <= cost:
            improvement = cost - cost_new
            x = x_new
            r, J = forward_difference_jacobian(fun_batch, x, fd_step)
            nfev += x.size + 1
            cost = 0.5 * float(r @ r)
            costs.append(cost)
            A = J.T @ J
            g = J.T @ r
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if improvement <= ftol * max(cost, 1e-300) or cost == 0.0:
                converged, message = True, "cost change below tolerance"
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e20:
                converged, message = True, "damping saturated"
                break
    return LMResult(x, cost, it, nfev, converged, message, costs)
