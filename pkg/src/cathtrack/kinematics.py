"""Modal-strain forward kinematics of the tracked catheter segment.

The bending strain along the backbone is a Chebyshev expansion in arc-length,
and frames along the backbone come from a product of closed-form SE(3)
exponentials. Everything here is batched over coefficient vectors so the
estimator can evaluate a whole finite-difference Jacobian in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

# Below this rotation angle the exponential coefficients use their Taylor series.
_SERIES_THRESHOLD = 1e-4
_DOMAIN_SLACK = 1e-12


def chebyshev_basis(x, m: int) -> np.ndarray:
    """First-kind Chebyshev polynomials ``[T_0(x), ..., T_{m-1}(x)]``.

    ``x`` may be a scalar or an array; the basis is appended as the last axis.
    """
    if m < 1:
        raise ValueError(f"basis order must be >= 1, got {m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + _DOMAIN_SLACK):
        raise ValueError("Chebyshev argument outside [-1, 1]")
    x = np.clip(x, -1.0, 1.0)
    out = np.empty(x.shape + (m,))
    out[..., 0] = 1.0
    if m > 1:
        out[..., 1] = x
    for k in range(2, m):
        out[..., k] = 2.0 * x * out[..., k - 1] - out[..., k - 2]
    return out


@dataclass(frozen=True, eq=False)
class ModalCoefficients:
    """Chebyshev coefficients of the two bending strains (1/mm).

    Torsion is not modelled, so there is no z block.
    """

    cx: np.ndarray
    cy: np.ndarray

    def __post_init__(self):
        cx = np.atleast_1d(np.asarray(self.cx, dtype=float)).copy()
        cy = np.atleast_1d(np.asarray(self.cy, dtype=float)).copy()
        if cx.ndim != 1 or cx.shape != cy.shape or cx.size < 1:
            raise ValueError("cx and cy must be 1-D with identical length >= 1")
        cx.flags.writeable = False
        cy.flags.writeable = False
        object.__setattr__(self, "cx", cx)
        object.__setattr__(self, "cy", cy)

    @property
    def order(self) -> int:
        return self.cx.size

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.cx, self.cy])

    @classmethod
    def from_vector(cls, vec) -> "ModalCoefficients":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.size % 2:
            raise ValueError("coefficient vector must be 1-D with even length")
        m = vec.size // 2
        return cls(vec[:m], vec[m:])

    @classmethod
    def zeros(cls, m: int) -> "ModalCoefficients":
        return cls(np.zeros(m), np.zeros(m))

    def rotated(self, angle: float) -> "ModalCoefficients":
        """Express the strain in a body frame turned by ``angle`` about z."""
        c, s = math.cos(angle), math.sin(angle)
        return ModalCoefficients(c * self.cx + s * self.cy, -s * self.cx + c * self.cy)

    def __eq__(self, other):
        if not isinstance(other, ModalCoefficients):
            return NotImplemented
        return np.array_equal(self.cx, other.cx) and np.array_equal(self.cy, other.cy)

    def __repr__(self):
        return f"ModalCoefficients(cx={self.cx.tolist()}, cy={self.cy.tolist()})"


def as_coefficients(c) -> ModalCoefficients:
    if isinstance(c, ModalCoefficients):
        return c
    return ModalCoefficients.from_vector(c)


def _basis_at(s, length: float, m: int) -> np.ndarray:
    return chebyshev_basis(2.0 * np.asarray(s, dtype=float) / length - 1.0, m)


def strain_at(s, c, length: float) -> np.ndarray:
    """Body-frame strain ``(u_x, u_y, 0)`` at arc-length ``s`` (mm)."""
    c = as_coefficients(c)
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < -_DOMAIN_SLACK * length) or np.any(s_arr > length * (1 + _DOMAIN_SLACK)):
        raise ValueError(f"arc-length outside [0, {length}]")
    phi = _basis_at(s_arr, length, c.order)
    u = np.zeros(s_arr.shape + (3,))
    u[..., 0] = phi @ c.cx
    u[..., 1] = phi @ c.cy
    return u


def skew(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def se3_exp(omega: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Closed-form exponential of twists ``(omega, v)``, batched over leading axes.

    Rotation block by Rodrigues, translation by the exact left Jacobian.
    """
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    theta2 = np.sum(omega * omega, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < _SERIES_THRESHOLD
    safe = np.where(small, 1.0, theta)
    safe2 = safe * safe
    a = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0 + theta2**2 / 720.0, (1.0 - np.cos(safe)) / safe2)
    c = np.where(small, 1.0 / 6.0 - theta2 / 120.0 + theta2**2 / 5040.0,
                 (safe - np.sin(safe)) / (safe2 * safe))
    K = skew(omega)
    K2 = K @ K
    eye = np.eye(3)
    R = eye + a[..., None, None] * K + b[..., None, None] * K2
    V = eye + b[..., None, None] * K + c[..., None, None] * K2
    T = np.zeros(omega.shape[:-1] + (4, 4))
    T[..., :3, :3] = R
    T[..., :3, 3] = np.einsum("...ij,...j->...i", V, v)
    T[..., 3, 3] = 1.0
    return T


def _scan_products(T: np.ndarray) -> np.ndarray:
    """Inclusive left-to-right matrix prefix products along axis -3."""
    P = T.copy()
    k = P.shape[-3]
    d = 1
    while d < k:
        P[..., d:, :, :] = P[..., :-d, :, :] @ P[..., d:, :, :]
        d *= 2
    return P


def arc_grid(length: float, step: float) -> np.ndarray:
    """Uniform arc-length samples; a short final step lands exactly on ``length``."""
    if length <= 0 or step <= 0:
        raise ValueError("length and step must be positive")
    n_steps = max(1, math.ceil(length / step - 1e-9))
    s = np.arange(n_steps + 1) * step
    s[-1] = length
    return s


def _step_exponentials(C: np.ndarray, s_start: np.ndarray, h: np.ndarray, length: float) -> np.ndarray:
    # strain sampled at the step midpoint: second-order accurate in the step
    m = C.shape[-1] // 2
    phi = _basis_at(s_start + 0.5 * h, length, m)
    ux =np.einsum("bm,...m->b...", C[:, :m], phi)
    uy = np.einsum("bm,...m->b...", C[:, m:], phi)
    omega = np.stack([ux * h, uy * h, np.zeros_like(ux)], axis=-1)
    v = np.zeros_like(omega)
    v[..., 2] = h
    return se3_exp(omega, v)


def integrate_frames(C, base_pose, length: float, step: float, s_query=None):
    """Batched backbone integration.

    Args:
        C: coefficient vectors, shape (B, 2m).
        base_pose: 4x4 pose of the base frame.
        length: tracked segment length (mm).
        step: nominal integration step (mm).
        s_query: optional extra arc-lengths at which frames are wanted.

    Returns:
        ``(s_grid, grid_frames)`` with frames of shape (B, K, 4, 4), plus the
        query frames (B, Q, 4, 4) when ``s_query`` is given.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    base = np.asarray(base_pose, dtype=float)
    s_grid = arc_grid(length, step)
    h = np.diff(s_grid)
    E = _step_exponentials(C, s_grid[:-1], h, length)
    P = _scan_products(E)
    B, K = C.shape[0], s_grid.size
    frames = np.empty((B, K, 4, 4))
    frames[:, 0] = base
    frames[:, 1:] = base @ P
    if s_query is None:
        return s_grid, frames
    s_query = np.asarray(s_query, dtype=float)
    if np.any(s_query < 0) or np.any(s_query > length):
        raise ValueError(f"query arc-length outside [0, {length}]")
    j = np.clip(np.searchsorted(s_grid, s_query, side="right") - 1, 0, K - 1)
    hq = s_query - s_grid[j]
    Eq = _step_exponentials(C, s_grid[j], hq, length)
    return s_grid, frames, frames[:, j] @ Eq


@dataclass(frozen=True)
class FrameSample:
    s: float
    rotation: np.ndarray
    position: np.ndarray


@dataclass(frozen=True, eq=False)
class BackbonePath:
    """Frames sampled along the backbone at uniform arc-length steps."""

    s: np.ndarray
    rotations: np.ndarray
    positions: np.ndarray

    @property
    def base_pose(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotations[0]
        T[:3, 3] = self.positions[0]
        return T

    @property
    def tangents(self) -> np.ndarray:
        return self.rotations[:, :, 2]

    def __len__(self):
        return self.s.size

    def __iter__(self) -> Iterator[FrameSample]:
        for k in range(self.s.size):
            yield FrameSample(float(self.s[k]), self.rotations[k], self.positions[k])

    @property
    def samples(self) -> list[FrameSample]:
        return list(self)

    def rolled(self, roll: float) -> "BackbonePath":
        """Material frames: every rotation turned by ``roll`` about its own z-axis."""
        return BackbonePath(self.s, self.rotations @ rot_z(roll), self.positions)


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def propagate(c, base_pose=None, length: float = 25.0, step: float | None = None) -> BackbonePath:
    """Integrate the backbone frames from ``base_pose`` along ``[0, length]``.

    ``step`` defaults to ``length / 100``.
    """
    c = as_coefficients(c)
    base = np.eye(4) if base_pose is None else np.asarray(base_pose, dtype=float)
    step = length / 100.0 if step is None else step
    s, frames = integrate_frames(c.vector[None], base, length, step)
    F = frames[0]
    return BackbonePath(s, F[:, :3, :3].copy(), F[:, :3, 3].copy())


def frames_at(c, s, base_pose=None, length: float = 25.0, step: float | None = None) -> np.ndarray:
    """4x4 frames at arbitrary arc-lengths, consistent with :func:`propagate`."""
    c = as_coefficients(c)
    base = np.eye(4) if base_pose is None else np.asarray(base_pose, dtype=float)
    step = length / 100.0 if step is None else step
    _, _, q = integrate_frames(c.vector[None], base, length, step, np.atleast_1d(s))
    return q[0]


def marker_positions_batch(design, C, roll, base_pose, step: float | None = None) -> np.ndarray:
    """Marker positions for a batch of coefficient vectors and rolls.

    Returns shape (B, n + 3, 3) in design order ``[b', b, 1..n, e]``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    roll = np.broadcast_to(np.asarray(roll, dtype=float), (C.shape[0],))
    L = design.length
    step = L / 100.0 if step is None else step
    base = np.asarray(base_pose, dtype=float)
    s_q = np.append(design.arc_lengths, L)
    _, _, Fq = integrate_frames(C, base, L, step, s_q)
    B, n = C.shape[0], design.n
    out = np.empty((B, n + 3, 3))
    out[:, 0] = base[:3, 3] - design.base_offset * base[:3, 2]
    out[:, 1] = base[:3, 3]
    ang = design.angles[None, :] + roll[:, None]
    offs = np.stack([design.radius * np.cos(ang), design.radius * np.sin(ang), np.zeros_like(ang)], axis=-1)
    Rm = Fq[:, :n, :3, :3]
    out[:, 2:n + 2] = Fq[:, :n, :3, 3] + np.einsum("bnij,bnj->bni", Rm, offs)
    out[:, n + 2] = Fq[:, n, :3, 3]
    return out


def marker_world_positions(design, c, roll: float = 0.0, base_pose=None, step: float | None = None) -> np.ndarray:
    """World positions of all markers, ordered ``[b', b, 1..n, e]``.

    Intermediate markers sit ``radius`` off the backbone at angle
    ``beta_i + roll`` in the local cross-section; bands lie on the backbone,
    with ``b'`` on the straight proximal extension of the base tangent.
    """
    c = as_coefficients(c)
    base = np.eye(4) if base_pose is None else np.asarray(base_pose, dtype=float)
    return marker_positions_batch(design, c.vector[None], roll, base, step)[0]


def base_frame(origin, tangent) -> np.ndarray:
    """Pose with z along ``tangent``, reached from the world frame by the minimal rotation."""
    z = np.asarray(tangent, dtype=float)
    norm = np.linalg.norm(z)
    if norm < 1e-12:
        raise ValueError("base tangent is undefined (zero length)")
    z = z / norm
    T = np.eye(4)
    T[:3, 3] = origin
    ez = np.array([0.0, 0.0, 1.0])
    axis = np.cross(ez, z)
    sin_a = np.linalg.norm(axis)
    cos_a = float(z @ ez)
    if sin_a < 1e-12:
        T[:3, :3] = np.eye(3) if cos_a > 0 else np.diag([1.0, -1.0, -1.0])
        return T
    K = skew(axis / sin_a)
    T[:3, :3] = np.eye(3) + sin_a * K + (1.0 - cos_a) * (K @ K)
    return T


def tip_bend_angle(path: BackbonePath) -> float:
    """Angle between the base and tip tangents (rad)."""
    t0, t1 = path.tangents[0], path.tangents[-1]
    return float(math.atan2(np.linalg.norm(np.cross(t0, t1)), float(t0 @ t1)))
