"""Orthographic biplane imaging: projection, planar noise and triangulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PLANES = ("front", "side")


class DegenerateGeometryError(ValueError):
    """The two imaging planes cannot resolve depth (parallel normals)."""


def _check_rotation(R, name):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
        raise ValueError(f"{name} is not a proper rotation")
    return R


@dataclass(frozen=True, eq=False)
class BiplaneGeometry:
    """World-to-plane rotations of the front (AP) and side (lateral) imagers.

    Rows of each rotation are the plane's horizontal axis, vertical axis and
    normal, all in world coordinates.
    """

    front_rotation: np.ndarray
    side_rotation: np.ndarray
    pixel_scale: float = 0.1

    def __post_init__(self):
        Rf = _check_rotation(self.front_rotation, "front_rotation").copy()
        Rs = _check_rotation(self.side_rotation, "side_rotation").copy()
        if abs(Rf[2] @ Rs[2]) >= 0.999:
            raise DegenerateGeometryError("imaging planes are (nearly) parallel")
        object.__setattr__(self, "front_rotation", Rf)
        object.__setattr__(self, "side_rotation", Rs)

    @classmethod
    def canonical(cls, pixel_scale: float = 0.1) -> "BiplaneGeometry":
        """AP plane looking along world y, lateral plane along world x; both share world z as vertical."""
        front = np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
        side = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        return cls(front, side, pixel_scale)

    def rotation(self, plane: str) -> np.ndarray:
        if plane == "front":
            return self.front_rotation
        if plane == "side":
            return self.side_rotation
        raise ValueError(f"unknown plane {plane!r}")

    def normal(self, plane: str) -> np.ndarray:
        return self.rotation(plane)[2]

    def projector(self, plane: str) -> np.ndarray:
        n = self.normal(plane)
        return np.eye(3) - np.outer(n, n)

    def to_dict(self) -> dict:
        return {
            "front_rotation": self.front_rotation.tolist(),
            "side_rotation": self.side_rotation.tolist(),
            "pixel_scale": float(self.pixel_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BiplaneGeometry":
        if d.get("preset") == "canonical":
            return cls.canonical(d.get("pixel_scale", 0.1))
        return cls(np.array(d["front_rotation"]), np.array(d["side_rotation"]), d.get("pixel_scale", 0.1))

    def __eq__(self, other):
        if not isinstance(other, BiplaneGeometry):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class NoiseModel:
    """Maximum planar segmentation uncertainty per plane (mm), plus a seed."""

    front: float = 0.5
    side: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.front < 0 or self.side < 0:
            raise ValueError("noise radii must be non-negative")

    def radius(self, plane: str) -> float:
        return self.front if plane == "front" else self.side

    def generator(self, plane: str) -> np.random.Generator:
        """Independent stream per plane, spawned from the model seed."""
        child = np.random.SeedSequence(self.seed).spawn(2)[PLANES.index(plane)]
        return np.random.default_rng(child)


def project_point(p, plane: str, geom: BiplaneGeometry) -> np.ndarray:
    """In-plane coordinates (mm) of world point(s) ``p`` under parallel projection."""
    p = np.asarray(p, dtype=float)
    return (p @ geom.rotation(plane).T)[..., :2]


def sample_disk(rng: np.random.Generator, radius: float, size: int) -> np.ndarray:
    """``size`` points uniform over the disk of ``radius``."""
    rho = radius * np.sqrt(rng.random(size))
    phi = 2.0 * np.pi * rng.random(size)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=-1)


def perturb(points, noise: NoiseModel, plane: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """Displace each planar point uniformly within the plane's uncertainty disk.

    Without an explicit ``rng`` the plane's seeded stream is used, so repeated
    calls are bit-identical.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    radius = noise.radius(plane)
    if radius == 0:
        return points.copy()
    rng = noise.generator(plane) if rng is None else rng
    return points + sample_disk(rng, radius, points.shape[0])


def _stacked(geom: BiplaneGeometry) -> np.ndarray:
    A = np.vstack([geom.projector("front"), geom.projector("side")])
    if np.linalg.matrix_rank(A, tol=1e-9) < 3:
        raise DegenerateGeometryError("stacked projector is rank deficient")
    return A


def triangulate(p_front, p_side, geom: BiplaneGeometry) -> np.ndarray:
    """Least-squares world point(s) from matching front/side plane coordinates.

    Each planar point is lifted into its plane at zero depth and the stacked
    projector system is solved by pseudo-inverse. Accepts (2,) or (k, 2).
    """
    pf = np.asarray(p_front, dtype=float)
    ps = np.asarray(p_side, dtype=float)
    A_pinv = np.linalg.pinv(_stacked(geom))
    Rf, Rs = geom.front_rotation, geom.side_rotation
    lf = pf[..., 0, None] * Rf[0] + pf[..., 1, None] * Rf[1]
    ls = ps[..., 0, None] * Rs[0] + ps[..., 1, None] * Rs[1]
    rhs = np.concatenate([lf, ls], axis=-1)
    return rhs @ A_pinv.T


def epipolar_line(p, primary: str, geom: BiplaneGeometry):
    """Point and unit direction (secondary-plane coordinates) of the epipolar line of ``p``."""
    secondary = "side" if primary == "front" else "front"
    Rp = geom.rotation(primary)
    origin = p[..., 0, None] * Rp[0] + p[..., 1, None] * Rp[1]
    a = project_point(origin, secondary, geom)
    b = project_point(Rp[2], secondary, geom)
    nb = np.linalg.norm(b)
    if nb < 1e-12:
        raise DegenerateGeometryError("primary ray projects to a point in the secondary plane")
    return a, b / nb


def epipolar_distance(q, p, geom: BiplaneGeometry, primary: str = "front") -> np.ndarray:
    """Distance from secondary-plane point(s) ``q`` to the epipolar line of primary point ``p``."""
    q = np.asarray(q, dtype=float)
    a, b = epipolar_line(np.asarray(p, dtype=float), primary, geom)
    d = q - a
    return np.abs(d[..., 0] * b[1] - d[..., 1] * b[0])
