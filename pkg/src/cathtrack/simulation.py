"""Forward simulation of biplane marker observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .biplane import PLANES, BiplaneGeometry, project_point, sample_disk
from .kinematics import base_frame, marker_world_positions
from .reconstruction import PlanarMarkers


@dataclass
class Scene:
    """Ground-truth world markers and their (possibly noisy, partial) planar views.

    ``ids[plane]`` holds, for every row of ``views[plane].intermediates``, the
    1-based design index of the marker it came from.
    """

    world: np.ndarray
    views: dict
    ids: dict


def default_base_pose() -> np.ndarray:
    """Base band at the world origin, tangent along world z (vertical in both views)."""
    return base_frame(np.zeros(3), np.array([0.0, 0.0, 1.0]))


def simulate_scene(design, c, roll: float, geom: BiplaneGeometry, noise_radius=(0.0, 0.0),
                   rng: np.random.Generator | None = None, base_pose=None,
                   dropped: dict | None = None, shuffle: bool = True, step: float | None = None) -> Scene:
    """Project the catheter's markers into both planes and corrupt them.

    Args:
        noise_radius: maximum planar uncertainty (front, side) in mm.
        rng: generator for noise, shuffling; required when either is active.
        dropped: optional ``{plane: iterable of 1-based marker indices}`` to hide.
    """
    base = default_base_pose() if base_pose is None else np.asarray(base_pose, dtype=float)
    world = marker_world_positions(design, c, roll, base, step)
    if rng is None:
        rng = np.random.default_rng(0)
    streams = dict(zip(PLANES, rng.spawn(2)))
    views, ids = {}, {}
    n = design.n
    for plane, radius in zip(PLANES, noise_radius):
        g = streams[plane]
        pts = project_point(world, plane, geom)
        if radius > 0:
            pts = pts + sample_disk(g, radius, pts.shape[0])
        idx = np.arange(1, n + 1)
        if dropped and plane in dropped:
            idx = np.setdiff1d(idx, np.asarray(list(dropped[plane]), dtype=int))
        if shuffle:
            idx = g.permutation(idx)
        views[plane] = PlanarMarkers(pts[0], pts[1], pts[n + 2], pts[idx + 1])
        ids[plane] = idx
    return Scene(world, views, ids)
