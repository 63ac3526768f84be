"""Input checks shared by the public API and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .design import CatheterDesign
from .reconstruction import OrderedMarkerSet


def check_positive(value, name: str, allow_zero: bool = False) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return float(value)


def check_order(order) -> int:
    if isinstance(order, bool) or not isinstance(order, numbers.Integral) or order < 1:
        raise ValueError(f"order must be a positive integer, got {order!r}")
    return int(order)


def check_design(design) -> CatheterDesign:
    if isinstance(design, CatheterDesign):
        return design
    if isinstance(design, dict):
        return CatheterDesign.from_dict(design)
    raise TypeError(f"design must be a CatheterDesign or a mapping, got {type(design).__name__}")


def check_marker_frames(X, design: CatheterDesign | None = None) -> list:
    """Normalize marker input to a list of :class:`OrderedMarkerSet`.

    Accepts one marker set, a sequence of them, or an array shaped
    ``(n + 3, 3)`` / ``(frames, n + 3, 3)`` with NaN rows for missing markers.
    """
    if isinstance(X, OrderedMarkerSet):
        frames = [X]
    elif isinstance(X, (list, tuple)) and X and all(isinstance(x, OrderedMarkerSet) for x in X):
        frames = list(X)
    else:
        A = np.asarray(X, dtype=float)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[-1] != 3:
            raise ValueError(f"marker array must be (n+3, 3) or (frames, n+3, 3), got shape {A.shape}")
        if A.shape[0] == 0:
            raise ValueError("no marker frames given")
        frames = [OrderedMarkerSet.from_array(a) for a in A]
    if design is not None:
        for i, f in enumerate(frames):
            if f.n != design.n:
                raise ValueError(f"frame {i} has {f.n} intermediate slots, design has {design.n}")
    return frames
