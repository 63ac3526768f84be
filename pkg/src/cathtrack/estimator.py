"""Sequential shape and roll estimation from reconstructed marker positions.

The shape (modal coefficients) is solved with the roll held fixed, then the
roll with the shape held fixed, alternating until both stop moving.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import (
    BackbonePath,
    ModalCoefficients,
    as_coefficients,
    base_frame,
    frames_at,
    integrate_frames,
    marker_positions_batch,
    propagate,
)
from .lm import forward_difference_jacobian, levenberg_marquardt


class IdentifiabilityError(ValueError):
    """Too few residual rows to determine the requested unknowns."""


class UnobservableRollError(IdentifiabilityError):
    """No intermediate marker is present, so roll carries no signal."""


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class EstimatorConfig:
    order: int = 3
    tip_weight: float = 10.0
    intermediate_weight: float = 1.0
    shape_damping: float = 0.0
    roll_damping: float = 0.0
    prior_coefficients: tuple | None = None
    prior_roll: float = 0.0
    tol_coefficients: float = 1e-6
    tol_roll: float = 1e-6
    max_outer_iter: int = 50
    max_inner_iter: int = 100
    fd_step: float = 1e-6
    roll_starts: int = 8
    step: float | None = None

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.tip_weight <= 0 or self.intermediate_weight <= 0:
            raise ValueError("weights must be positive")
        if self.shape_damping < 0 or self.roll_damping < 0:
            raise ValueError("damping factors must be non-negative")
        if self.tol_coefficients <= 0 or self.tol_roll <= 0:
            raise ValueError("convergence thresholds must be positive")

    def prior_vector(self) -> np.ndarray:
        if self.prior_coefficients is None:
            return np.zeros(2 * self.order)
        prior = np.asarray(self.prior_coefficients, dtype=float)
        if prior.size != 2 * self.order:
            raise ValueError("prior_coefficients must have length 2 * order")
        return prior

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if d["prior_coefficients"] is not None:
            d["prior_coefficients"] = [float(v) for v in d["prior_coefficients"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        d = dict(d)
        if d.get("prior_coefficients") is not None:
            d["prior_coefficients"] = tuple(d["prior_coefficients"])
        return cls(**d)


@dataclass
class PoseEstimate:
    coefficients: ModalCoefficients
    roll: float
    base_pose: np.ndarray
    length: float
    final_cost: float
    outer_iterations: int
    converged: bool
    residual_per_marker: np.ndarray
    cost_history: list = field(default_factory=list)
    step: float | None = None

    def backbone(self, step: float | None = None) -> BackbonePath:
        return propagate(self.coefficients, self.base_pose, self.length, step or self.step)

    def material_frames(self, step: float | None = None) -> BackbonePath:
        """Backbone frames turned by the estimated roll (the catheter's own frames)."""
        return self.backbone(step).rolled(self.roll)

    def to_dict(self) -> dict:
        return {
            "order": self.coefficients.order,
            "cx": self.coefficients.cx.tolist(),
            "cy": self.coefficients.cy.tolist(),
            "sigma": float(self.roll),
            "base_pose": np.asarray(self.base_pose).tolist(),
            "length": float(self.length),
            "final_cost": float(self.final_cost),
            "outer_iterations": int(self.outer_iterations),
            "converged": bool(self.converged),
            "residual_per_marker": [None if not np.isfinite(v) else float(v) for v in self.residual_per_marker],
            "cost_history": [float(v) for v in self.cost_history],
        }


class _Problem:
    """Measured markers, weights and priors bound together for residual evaluation."""

    def __init__(self, markers, design, cfg: EstimatorConfig):
        positions = np.asarray(markers.positions, dtype=float)
        mask = np.asarray(markers.present, dtype=bool)
        if positions.shape != (design.n + 3, 3):
            raise ValueError(f"expected {design.n + 3} marker rows, got {positions.shape[0]}")
        if not (mask[0] and mask[1] and mask[-1]):
            raise ValueError("base bands and tip band must be present")
        self.design = design
        self.cfg = cfg
        self.base_pose = base_frame(positions[1], positions[1] - positions[0])
        rows = np.flatnonzero(mask[2:-1]) + 2
        self.rows = np.append(rows, design.n + 2)
        self.measured = positions[self.rows]
        w = np.full(self.rows.size, math.sqrt(cfg.intermediate_weight))
        w[-1] = math.sqrt(cfg.tip_weight)
        self.sqrt_w = w
        self.n_present = rows.size
        self.prior_c = cfg.prior_vector()
        self.prior_roll = cfg.prior_roll
        self.step = cfg.step

    def model(self, C, roll):
        P = marker_positions_batch(self.design, C, roll, self.base_pose, self.step)
        return P[:, self.rows]

    def errors(self, C, roll):
        """Unweighted ``measured - model`` per used marker, shape (B, k, 3)."""
        return self.measured[None] - self.model(C, roll)

    def residual_batch(self, C, roll):
        C = np.atleast_2d(C)
        e = self.errors(C, roll) * self.sqrt_w[None, :, None]
        parts = [e.reshape(C.shape[0], -1)]
        if self.cfg.shape_damping > 0:
            parts.append(math.sqrt(self.cfg.shape_damping) * (C - self.prior_c))
        if self.cfg.roll_damping > 0:
            roll = np.broadcast_to(np.asarray(roll, dtype=float), (C.shape[0],))
            parts.append(math.sqrt(self.cfg.roll_damping) * wrap_angle(roll - self.prior_roll)[:, None])
        return np.concatenate(parts, axis=1)

    def cost(self, c, roll) -> float:
        r = self.residual_batch(np.asarray(c, dtype=float)[None], roll)[0]
        return 0.5 * float(r @ r)


def residuals(c, roll: float, markers, design, cfg: EstimatorConfig):
    """Stacked marker errors (present intermediates, then tip) and the scalar cost."""
    prob = _Problem(markers, design, cfg)
    C = as_coefficients(c).vector
    e = prob.errors(C[None], roll)[0].reshape(-1)
    return e, prob.cost(C, roll)


def cost_gradient(c, roll: float, markers, design, cfg: EstimatorConfig) -> np.ndarray:
    """Gradient of the cost w.r.t. ``[c, roll]``.

    Damping terms are differentiated analytically; the marker terms use the
    forward-difference Jacobian the solver itself relies on.
    """
    prob = _Problem(markers, design, cfg)
    x = np.append(as_coefficients(c).vector, roll)
    m2 = x.size - 1

    def marker_rows(X):
        e = prob.errors(X[:, :m2], X[:, m2]) * prob.sqrt_w[None, :, None]
        return e.reshape(X.shape[0], -1)

    r, J = forward_difference_jacobian(marker_rows, x, cfg.fd_step)
    grad = J.T @ r
    grad[:m2] += cfg.shape_damping * (x[:m2] - prob.prior_c)
    grad[m2] += cfg.roll_damping * wrap_angle(roll - prob.prior_roll)
    return grad


def _solve_shape(prob: _Problem, roll: float, c0: np.ndarray):
    m2 = c0.size
    rows = 3 * prob.rows.size + (m2 if prob.cfg.shape_damping > 0 else 0)
    if rows < m2:
        raise IdentifiabilityError(f"{rows} residual rows cannot determine {m2} coefficients")
    return levenberg_marquardt(lambda C: prob.residual_batch(C, roll), c0,
                               max_iter=prob.cfg.max_inner_iter, fd_step=prob.cfg.fd_step)


def solve_shape(markers, design, roll: float, cfg: EstimatorConfig, c0=None) -> ModalCoefficients:
    """Modal coefficients minimizing the weighted marker error at fixed roll."""
    prob = _Problem(markers, design, cfg)
    c0 = np.zeros(2 * cfg.order) if c0 is None else as_coefficients(c0).vector
    return ModalCoefficients.from_vector(_solve_shape(prob, roll, c0).x)


def _roll_residual_fn(prob: _Problem, c: np.ndarray):
    """Residual as a function of roll only; frames at the markers are computed once."""
    design = prob.design
    F = frames_at(ModalCoefficients.from_vector(c), np.append(design.arc_lengths, design.length),
                  prob.base_pose, design.length, prob.step)
    used = prob.rows[:-1] - 2
    R = F[used, :3, :3]
    p = F[used, :3, 3]
    beta = design.angles[used]
    tip_e = (prob.measured[-1] - F[-1, :3, 3]) * prob.sqrt_w[-1]
    meas = prob.measured[:-1]
    w_int = prob.sqrt_w[:-1]
    extra = (math.sqrt(prob.cfg.shape_damping) * (c - prob.prior_c)) if prob.cfg.shape_damping > 0 else None

    def fun(S):
        s = np.asarray(S, dtype=float).reshape(-1)
        ang = beta[None, :] + s[:, None]
        off = np.stack([np.cos(ang), np.sin(ang)], axis=-1) * design.radius
        model = p[None] + np.einsum("kij,bkj->bki", R[:, :, :2], off)
        e = (meas[None] - model) * w_int[None, :, None]
        parts = [e.reshape(s.size, -1), np.broadcast_to(tip_e, (s.size, 3))]
        if extra is not None:
            parts.append(np.broadcast_to(extra, (s.size, extra.size)))
        if prob.cfg.roll_damping > 0:
            parts.append(math.sqrt(prob.cfg.roll_damping) * wrap_angle(s - prob.prior_roll)[:, None])
        return np.concatenate(parts, axis=1)

    return fun


def _solve_roll(prob: _Problem, c: np.ndarray, roll0: float, multistart: bool):
    if prob.n_present == 0:
        raise UnobservableRollError("roll is unobservable without intermediate markers")
    fun = _roll_residual_fn(prob, c)
    seeds = [roll0]
    if multistart:
        k = prob.cfg.roll_starts
        seeds += list(-np.pi + 2.0 * np.pi * (np.arange(k) + 0.5) / k)
    best = None
    for seed in seeds:
        res = levenberg_marquardt(lambda S: fun(S[:, 0]), np.array([seed]),
                                  max_iter=prob.cfg.max_inner_iter, fd_step=prob.cfg.fd_step)
        if best is None or res.cost < best.cost:
            best = res
    return wrap_angle(best.x[0]), best.cost


def solve_roll(markers, design, c, cfg: EstimatorConfig, roll0: float = 0.0, multistart: bool = True) -> float:
    """Roll angle minimizing the marker error at fixed shape, wrapped to (-pi, pi]."""
    prob = _Problem(markers, design, cfg)
    return _solve_roll(prob, as_coefficients(c).vector, roll0, multistart)[0]


def estimate(markers, design, cfg: EstimatorConfig | None = None, c0=None, roll0: float = 0.0) -> PoseEstimate:
    """Alternate shape and roll solves until neither moves more than its threshold.

    Never raises on non-convergence; ``converged`` reports it instead.
    """
    cfg = cfg or EstimatorConfig()
    prob = _Problem(markers, design, cfg)
    if prob.n_present == 0:
        raise UnobservableRollError("roll is unobservable without intermediate markers")
    cold = c0 is None and cfg.shape_damping == 0 and cfg.roll_damping == 0
    c = np.zeros(2 * cfg.order) if c0 is None else as_coefficients(c0).vector.copy()
    if c.size != 2 * cfg.order:
        raise ValueError("initial coefficients do not match the configured order")
    roll = float(roll0)
    history = [prob.cost(c, roll)]
    converged = False
    it = 0
    for it in range(1, cfg.max_outer_iter + 1):
        c_new = _solve_shape(prob, roll, c).x
        history.append(prob.cost(c_new, roll))
        roll_new, roll_cost = _solve_roll(prob, c_new, roll, multistart=cold and it == 1)
        history.append(roll_cost)
        dc = float(np.linalg.norm(c_new - c))
        dr = abs(wrap_angle(roll_new - roll))
        c, roll = c_new, roll_new
        if dc <= cfg.tol_coefficients and dr <= cfg.tol_roll:
            converged = True
            break
    e = prob.errors(c[None], roll)[0]
    per_marker = np.full(design.n + 3, np.nan)
    per_marker[prob.rows] = np.linalg.norm(e, axis=1)
    return PoseEstimate(ModalCoefficients.from_vector(c), roll, prob.base_pose, design.length,
                        history[-1], it, converged, per_marker, history, cfg.step)


class PriorTracker:
    """Moving average of recent estimates, used as damping prior for the next frame."""

    def __init__(self, window: int = 5):
        self.window = window
        self._history: deque = deque(maxlen=window)

    def __len__(self):
        return len(self._history)

    def update(self, est: PoseEstimate):
        self._history.append((est.coefficients.vector, est.roll))

    def prior(self):
        if not self._history:
            return None
        C = np.array([h[0] for h in self._history])
        r = np.array([h[1] for h in self._history])
        return C.mean(axis=0), float(math.atan2(np.sin(r).mean(), np.cos(r).mean()))

    def configure(self, cfg: EstimatorConfig, damping: float = 1e-3) -> EstimatorConfig:
        p = self.prior()
        if p is None:
            return replace(cfg, shape_damping=0.0, roll_damping=0.0, prior_coefficients=None, prior_roll=0.0)
        return replace(cfg, shape_damping=damping, roll_damping=damping,
                       prior_coefficients=tuple(p[0]), prior_roll=p[1])
