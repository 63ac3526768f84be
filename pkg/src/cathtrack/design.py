"""Marker layouts on the catheter surface and the spacing design measure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class CatheterDesign:
    """Geometry of the tracked segment and its radiopaque markers.

    Attributes:
        length: tracked length L from base band to tip band (mm).
        radius: cross-section radius r (mm).
        arc_lengths: arc-length of each intermediate marker (mm), increasing.
        angles: circumferential angle of each intermediate marker (rad).
        base_offset: distance of the proximal band b' behind the base band (mm).
        band_width: axial width of the tip and base bands (mm), rendering only.
        marker_diameter: diameter of the intermediate dots (mm), rendering only.
    """

    length: float
    radius: float
    arc_lengths: np.ndarray
    angles: np.ndarray
    base_offset: float = 3.0
    band_width: float = 1.0
    marker_diameter: float = 1.0

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.arc_lengths, dtype=float)).copy()
        b = np.atleast_1d(np.asarray(self.angles, dtype=float)).copy()
        if s.ndim != 1 or s.shape != b.shape:
            raise ValueError("arc_lengths and angles must be 1-D with equal length")
        if not (self.length > 0 and self.radius > 0 and self.base_offset > 0):
            raise ValueError("length, radius and base_offset must be positive")
        if s.size:
            if s[0] <= 0 or s[-1] >= self.length:
                raise ValueError(f"markers must lie strictly inside (0, {self.length})")
            if np.any(np.diff(s) <= 0):
                raise ValueError("marker arc-lengths must be strictly increasing")
        s.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "arc_lengths", s)
        object.__setattr__(self, "angles", b)

    @property
    def n(self) -> int:
        return self.arc_lengths.size

    def straight_positions(self) -> np.ndarray:
        """Marker positions, design order, for the straight unrolled catheter at the origin."""
        out = np.zeros((self.n + 3, 3))
        out[0, 2] = -self.base_offset
        out[2:-1, 0] = self.radius * np.cos(self.angles)
        out[2:-1, 1] = self.radius * np.sin(self.angles)
        out[2:-1, 2] = self.arc_lengths
        out[-1, 2] = self.length
        return out

    def to_dict(self) -> dict:
        return {
            "length": float(self.length),
            "radius": float(self.radius),
            "arc_lengths": [float(v) for v in self.arc_lengths],
            "angles": [float(v) for v in self.angles],
            "base_offset": float(self.base_offset),
            "band_width": float(self.band_width),
            "marker_diameter": float(self.marker_diameter),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CatheterDesign":
        d = dict(d)
        if "helix" in d:
            helix = HelixSpec(**d.pop("helix"))
            n = d.pop("n")
            return build_helical_design(d.pop("length"), d.pop("radius"), n, helix, **d)
        return cls(**d)

    def __eq__(self, other):
        if not isinstance(other, CatheterDesign):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class HelixSpec:
    """Equally spaced helix: ``pitch`` in mm per radian, ``spacing`` angle between markers."""

    pitch: float
    spacing: float
    start: float = 0.0

    def __post_init__(self):
        if self.spacing == 0:
            raise ValueError("helix angular spacing must be non-zero")


def build_helical_design(length: float, radius: float, n: int, helix: HelixSpec, **kwargs) -> CatheterDesign:
    """Center ``n`` markers on a helix inside the tracked segment.

    Consecutive markers advance ``pitch * spacing`` in arc-length and
    ``spacing`` in angle. Extra keyword arguments go to :class:`CatheterDesign`.
    """
    if n < 1:
        raise ValueError("need at least one intermediate marker")
    gap = helix.pitch * helix.spacing
    idx = np.arange(n)
    s = 0.5 * (length - gap * (n - 1)) + gap * idx
    beta = helix.start + helix.spacing * idx
    if n > 1 and gap <= 0:
        raise ValueError("helix must advance along the segment (pitch * spacing > 0)")
    return CatheterDesign(length, radius, s, beta, **kwargs)


def helix_for_turns(length: float, n: int, turns: float = 2.0, start: float = 0.0) -> HelixSpec:
    """Helix whose ``n`` markers split the segment into ``n + 1`` equal gaps.

    The first and last marker are ``turns`` full revolutions apart.
    """
    spacing = 2.0 * math.pi * turns / max(n - 1, 1)
    gap = length / (n + 1)
    return HelixSpec(pitch=gap / spacing, spacing=spacing, start=start)


def helix_for_angle(length: float, n: int, spacing: float, start: float = 0.0) -> HelixSpec:
    """Helix with a fixed angular step whose ``n`` markers split the segment into equal gaps."""
    if spacing == 0:
        raise ValueError("angular spacing must be non-zero")
    gap = length / (n + 1)
    return HelixSpec(pitch=gap / spacing, spacing=spacing, start=start)


def marker_spacing(radius: float, helix: HelixSpec) -> float:
    """Distance between consecutive markers of a straight helix."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    chord = 2.0 * radius * math.sin(0.5 * helix.spacing)
    axial = helix.pitch * helix.spacing
    return math.sqrt(chord * chord + axial * axial)


def spacing_factor(d: float, noise: float) -> float:
    """Marker spacing factor: spacing over planar position uncertainty."""
    if noise == 0:
        raise ZeroDivisionError("planar uncertainty must be non-zero")
    return d / noise


@dataclass(frozen=True)
class SweepPoint:
    n: int
    design: CatheterDesign = field(repr=False)
    spacing: float
    kappa: float


def spacing_sweep(length: float, radius: float, ns, noise: float, turns: float = 2.0, **kwargs) -> list[SweepPoint]:
    """Helical designs for each marker count in ``ns`` with their spacing factor."""
    out = []
    for n in ns:
        helix = helix_for_turns(length, int(n), turns)
        design = build_helical_design(length, radius, int(n), helix, **kwargs)
        d = marker_spacing(radius, helix)
        out.append(SweepPoint(int(n), design, d, spacing_factor(d, noise)))
    return out
