"""Synthetic biplane frames and dark-blob marker segmentation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse.csgraph import minimum_spanning_tree, shortest_path

from .biplane import PLANES, BiplaneGeometry, project_point

LABELS = ("base_prime", "base", "tip", "intermediate", "unknown")


class ImageBoundsError(ValueError):
    """Raised when rendered markers would fall outside the frame."""


class LabelingError(ValueError):
    """Raised when band-scale regions cannot be identified."""


@dataclass
class GrayImage:
    """8-bit frame with its mm calibration.

    Pixel ``(row, col)`` maps to plane coordinates
    ``x = origin[0] + (col - (W - 1) / 2) * pixel_scale`` and
    ``y = origin[1] - (row - (H - 1) / 2) * pixel_scale`` (y points up).
    """

    data: np.ndarray
    pixel_scale: float = 0.1
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError("image data must be 2-D")
        if self.data.dtype != np.uint8:
            self.data = np.clip(np.rint(self.data), 0, 255).astype(np.uint8)
        if self.pixel_scale <= 0:
            raise ValueError("pixel_scale must be positive")
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def to_mm(self, rows, cols) -> np.ndarray:
        rows, cols = np.broadcast_arrays(np.asarray(rows, dtype=float), np.asarray(cols, dtype=float))
        x = self.origin[0] + (cols - 0.5 * (self.width - 1)) * self.pixel_scale
        y = self.origin[1] - (rows - 0.5 * (self.height - 1)) * self.pixel_scale
        return np.stack([x, y], axis=-1)

    def to_pixels(self, points) -> np.ndarray:
        """(row, col) for plane points in mm."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        cols = (p[:, 0] - self.origin[0]) / self.pixel_scale + 0.5 * (self.width - 1)
        rows = 0.5 * (self.height - 1) - (p[:, 1] - self.origin[1]) / self.pixel_scale
        return np.stack([rows, cols], axis=-1)

    def write_pgm(self, path) -> None:
        header = (f"P5\n# pixel_scale {float(self.pixel_scale)!r}\n"
                  f"# origin {float(self.origin[0])!r} {float(self.origin[1])!r}\n"
                  f"{self.width} {self.height}\n255\n")
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(self.data).tobytes())

    @classmethod
    def read_pgm(cls, path) -> "GrayImage":
        with open(path, "rb") as fh:
            raw = fh.read()
        tokens, meta, pos = [], {}, 0
        while len(tokens) < 4:
            # header: magic, width, height, maxval with optional comment lines
            while pos < len(raw) and raw[pos:pos + 1].isspace():
                pos += 1
            if pos >= len(raw):
                raise ValueError(f"{os.fspath(path)}: truncated PGM header")
            if raw[pos:pos + 1] == b"#":
                end = raw.index(b"\n", pos)
                parts = raw[pos + 1:end].decode("ascii", "replace").split()
                if parts:
                    meta[parts[0]] = parts[1:]
                pos = end + 1
                continue
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end].decode("ascii"))
            pos = end
        magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
        if magic != "P5" or maxval != 255:
            raise ValueError(f"{os.fspath(path)}: only 8-bit binary PGM (P5) is supported")
        pos += 1
        buf = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
        scale = float(meta.get("pixel_scale", ["0.1"])[0])
        origin = [float(v) for v in meta.get("origin", ["0", "0"])[:2]]
        return cls(buf.reshape(h, w).copy(), scale, np.array(origin))


@dataclass(frozen=True)
class ImageParams:
    width: int = 512
    height: int = 512
    background: float = 200.0
    foreground: float = 40.0
    noise_sigma: float = 0.0
    supersample: int = 4
    seed: int = 0


@dataclass(frozen=True)
class SegmentationParams:
    """Detector settings; ``bg_intensity=None`` estimates the background as the image median."""

    thresh: float = 60.0
    bg_intensity: float | None = None
    area_range: tuple = (20.0, 5000.0)
    stability_delta: float = 10.0
    max_variation: float = 0.5

    def __post_init__(self):
        lo, hi = self.area_range
        if not lo < hi:
            raise ValueError("area_range must satisfy min < max")
        if not 0 <= self.thresh <= 255:
            raise ValueError("thresh must lie in [0, 255]")
        if self.stability_delta < 0:
            raise ValueError("stability_delta must be non-negative")


@dataclass
class MarkerDetections:
    centroids: np.ndarray
    areas: np.ndarray
    labels: list

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float).reshape(-1, 2)
        self.areas = np.asarray(self.areas, dtype=float).reshape(-1)
        self.labels = list(self.labels)
        if not (len(self.labels) == self.centroids.shape[0] == self.areas.size):
            raise ValueError("one label and area per centroid")
        if self.labels.count("tip") > 1:
            raise ValueError("at most one tip detection")

    def __len__(self) -> int:
        return self.centroids.shape[0]

    def select(self, label: str) -> np.ndarray:
        return self.centroids[[i for i, l in enumerate(self.labels) if l == label]]


# --- rendering -----------------------------------------------------------------

@dataclass(frozen=True)
class Blob:
    """Disk (``length == 0``) or bar centred at ``center`` (mm) in one plane.

    A bar of width ``diameter`` along ``direction`` gets elliptical end caps
    reaching ``cap * diameter / 2`` beyond each end: the silhouette of a short
    cylinder whose axis is tilted out of the plane.
    """

    center: tuple
    diameter: float
    length: float = 0.0
    direction: tuple = (0.0, 1.0)
    cap: float = 0.0


def _coverage(img: GrayImage, blob: Blob, ss: int) -> tuple:
    c = np.asarray(blob.center, dtype=float)
    half = 0.5 * max(blob.diameter, blob.length + blob.cap * blob.diameter) + 2 * img.pixel_scale
    rc = img.to_pixels(c)[0]
    reach = half / img.pixel_scale
    r0, r1 = int(np.floor(rc[0] - reach)), int(np.ceil(rc[0] + reach)) + 1
    c0, c1 = int(np.floor(rc[1] - reach)), int(np.ceil(rc[1] + reach)) + 1
    r0, c0 = max(r0, 0), max(c0, 0)
    r1, c1 = min(r1, img.height), min(c1, img.width)
    if r0 >= r1 or c0 >= c1:
        return None
    off = (np.arange(ss) + 0.5) / ss - 0.5
    rows = (np.arange(r0, r1)[:, None] + off[None]).reshape(-1)
    cols = (np.arange(c0, c1)[:, None] + off[None]).reshape(-1)
    pts = img.to_mm(rows[:, None], cols[None, :]) - c
    if blob.length <= 0:
        inside = np.einsum("...i,...i->...", pts, pts) <= (0.5 * blob.diameter) ** 2
    else:
        t = np.asarray(blob.direction, dtype=float)
        t = t / np.linalg.norm(t)
        h, rad = 0.5 * blob.length, 0.5 * blob.diameter
        along = pts @ t
        across = pts @ np.array([-t[1], t[0]])
        beyond = np.abs(along) - h
        inside = np.abs(across) <= rad
        if blob.cap > 0:
            inside &= (beyond <= 0) | ((beyond / (blob.cap * rad)) ** 2 + (across / rad) ** 2 <= 1.0)
        else:
            inside &= beyond <= 0
    cov = inside.reshape(r1 - r0, ss, c1 - c0, ss).mean(axis=(1, 3))
    return (slice(r0, r1), slice(c0, c1)), cov


def render(blobs, params: ImageParams = ImageParams(), pixel_scale: float = 0.1, origin=(0.0, 0.0),
           rng: np.random.Generator | None = None) -> GrayImage:
    """Draw dark anti-aliased blobs on a light background.

    Overlapping blobs take the darker coverage, so merged markers stay one region.
    """
    img = GrayImage(np.zeros((params.height, params.width), dtype=np.uint8), pixel_scale, origin)
    dark = np.zeros((params.height, params.width))
    clipped = []
    for i, blob in enumerate(blobs):
        rc = img.to_pixels(blob.center)[0]
        reach = 0.5 * max(blob.diameter, blob.length + blob.cap * blob.diameter) / pixel_scale
        if (rc[0] - reach < 0 or rc[1] - reach < 0 or rc[0] + reach > params.height - 1
                or rc[1] + reach > params.width - 1):
            clipped.append(i)
            continue
        got = _coverage(img, blob, params.supersample)
        if got is not None:
            sl, cov = got
            np.maximum(dark[sl], cov, out=dark[sl])
    if clipped:
        raise ImageBoundsError(f"markers outside the frame: {clipped}")
    val = params.background - (params.background - params.foreground) * dark
    if params.noise_sigma > 0:
        g = rng if rng is not None else np.random.default_rng(params.seed)
        val = val + g.normal(0.0, params.noise_sigma, val.shape)
    img.data = np.clip(np.rint(val), 0, 255).astype(np.uint8)
    return img


def plane_blobs(world, design, plane: str, geom: BiplaneGeometry, tangents=None) -> tuple:
    """Planar blobs for the ``[b', b, 1..n, e]`` world marker rows, plus their kinds.

    ``tangents`` = (base, tip) unit backbone tangents; estimated from the
    marker rows when omitted.
    """
    W = np.asarray(world, dtype=float).reshape(-1, 3)
    n = design.n
    if W.shape[0] != n + 3:
        raise ValueError(f"expected {n + 3} marker rows, got {W.shape[0]}")
    P = project_point(W, plane, geom)
    if tangents is None:
        base_t, tip_t = W[1] - W[0], W[-1] - (W[-2] if n else W[1])
    else:
        base_t, tip_t = (np.asarray(v, dtype=float) for v in tangents)
    blobs, kinds = [], []
    for idx, kind in ((0, "base_prime"), (1, "base"), (n + 2, "tip")):
        t3 = base_t if kind != "tip" else tip_t
        t3 = t3 / np.linalg.norm(t3)
        rot = geom.rotation(plane)
        t2 = (rot @ t3)[:2]
        # band silhouette: projected axis segment swept by the projected end circle
        length = design.band_width * float(np.linalg.norm(t2))
        dirn = t2 if np.linalg.norm(t2) > 1e-9 else np.array([0.0, 1.0])
        blobs.append(Blob(tuple(P[idx]), 2.0 * design.radius, length, tuple(dirn), abs(float(rot[2] @ t3))))
        kinds.append(kind)
    for i in range(n):
        blobs.append(Blob(tuple(P[i + 2]), design.marker_diameter))
        kinds.append("intermediate")
    return blobs, kinds


def frame_origin(points, pixel_scale: float) -> np.ndarray:
    """Pixel-aligned centre of the projected extent."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    mid = 0.5 * (p.min(axis=0) + p.max(axis=0))
    return np.round(mid / pixel_scale) * pixel_scale


def render_biplane(world, design, geom: BiplaneGeometry, params: ImageParams = ImageParams(),
                   origins: dict | None = None, tangents=None) -> dict:
    """Front and side frames of the marker set keyed by plane name.

    Frames are centred on each view's projected markers unless ``origins`` is given.
    Noise streams are spawned per plane from ``params.seed``.
    """
    streams = dict(zip(PLANES, np.random.default_rng(params.seed).spawn(2)))
    out = {}
    for plane in PLANES:
        blobs, _ = plane_blobs(world, design, plane, geom, tangents)
        if origins and plane in origins:
            origin = np.asarray(origins[plane], dtype=float)
        else:
            origin = frame_origin([b.center for b in blobs], geom.pixel_scale)
        out[plane] = render(blobs, params, geom.pixel_scale, origin, streams[plane])
    return out


# --- segmentation --------------------------------------------------------------

def segment(img: GrayImage, params: SegmentationParams = SegmentationParams()) -> MarkerDetections:
    """Dark stable regions of ``img`` with darkness-weighted centroids in mm.

    A region found at ``thresh`` is kept when its area lies in ``area_range``
    and its area changes by at most ``max_variation`` (relative) between
    ``thresh - stability_delta`` and ``thresh + stability_delta``.
    """
    a = img.data
    if params.bg_intensity is None:
        hist = np.bincount(a.ravel(), minlength=256)
        bg = float(np.searchsorted(np.cumsum(hist), 0.5 * a.size))
    else:
        bg = float(params.bg_intensity)
    diff = bg - a.astype(np.float32)
    t, dt = params.thresh, params.stability_delta
    empty = MarkerDetections(np.zeros((0, 2)), np.zeros(0), [])
    lab_lo, k_lo = ndimage.label(diff > t - dt)
    if k_lo == 0:
        return empty
    # everything at t or t + dt lies inside the t - dt mask; work on its pixels only
    flat = np.flatnonzero(lab_lo)
    dv = diff.ravel()[flat]
    lab, k = ndimage.label(diff > t)
    if k == 0:
        return empty
    lt = lab.ravel()[flat]
    area = np.bincount(lt, minlength=k + 1)
    area_hi = np.bincount(lt[dv > t + dt], minlength=k + 1)
    lo_of = np.zeros(k + 1, dtype=np.int64)
    lo_of[lt] = lab_lo.ravel()[flat]
    area_lo = np.bincount(lab_lo.ravel()[flat], minlength=k_lo + 1)[lo_of]
    a_t = area[1:]
    variation = (area_lo[1:] - area_hi[1:]) / np.maximum(a_t, 1)
    lo, hi = params.area_range
    keep = (a_t >= lo) & (a_t <= hi) & (variation <= params.max_variation)
    if not keep.any():
        return empty
    inside = lt > 0
    li, w = lt[inside], np.clip(dv[inside], 0, None).astype(float)
    rows, cols = np.divmod(flat[inside], img.width)
    wsum = np.bincount(li, weights=w, minlength=k + 1)[1:]
    rc = np.stack([np.bincount(li, weights=w * rows, minlength=k + 1)[1:],
                   np.bincount(li, weights=w * cols, minlength=k + 1)[1:]], axis=1)
    rc = rc[keep] / wsum[keep, None]
    mm = img.to_mm(rc[:, 0], rc[:, 1])
    return MarkerDetections(mm, a_t[keep].astype(float), ["unknown"] * int(keep.sum()))


def expected_areas(design, pixel_scale: float) -> tuple:
    """(dot, smallest band silhouette) areas in px^2."""
    dot = math.pi * (0.5 * design.marker_diameter) ** 2
    # end-on a band is a disk of radius r; side-on a 2r x width bar
    band = min(math.pi * design.radius ** 2, 2.0 * design.radius * design.band_width)
    return dot / pixel_scale ** 2, band / pixel_scale ** 2


def _tree_distances(points: np.ndarray, source: int) -> np.ndarray:
    """Path lengths from ``source`` through the Euclidean minimum spanning tree."""
    D = np.linalg.norm(points[:, None] - points[None], axis=-1)
    mst = minimum_spanning_tree(D + 1e-12 * (D == 0) * (1 - np.eye(len(points))))
    return shortest_path(mst, directed=False, indices=source)


def classify(det: MarkerDetections, design, expected: tuple | None = None,
             pixel_scale: float = 0.1) -> MarkerDetections:
    """Label band-scale regions as base', base and tip; the rest are intermediates.

    Regions at or above the geometric mean of the expected dot and band areas
    are band candidates. The candidate pair whose separation best matches the
    base offset is the base pair. The tip is the remaining candidate farthest
    from the base along the spanning tree of all detections, so merged dots
    mid-chain are not mistaken for it; they are labelled ``unknown``. Of the
    base pair, ``base`` is the one nearer the tip along the tree.

    Raises:
        LabelingError: fewer than two band-scale regions.
    """
    dot, band = expected if expected is not None else expected_areas(design, pixel_scale)
    cut = math.sqrt(dot * band)
    is_band = det.areas >= cut
    bands = np.flatnonzero(is_band)
    if bands.size < 2:
        raise LabelingError(f"found {bands.size} band-scale regions, need at least 2")
    labels = ["unknown" if b else "intermediate" for b in is_band]
    C = det.centroids
    best, pair = np.inf, None
    for i in range(bands.size):
        for j in range(i + 1, bands.size):
            gap = np.linalg.norm(C[bands[i]] - C[bands[j]])
            # foreshortening can only shrink the projected offset
            if gap <= 1.5 * design.base_offset and abs(gap - design.base_offset) < best:
                best, pair = abs(gap - design.base_offset), (int(bands[i]), int(bands[j]))
    if pair is None:
        # no plausible base pair: base bands merged into one region
        d = _tree_distances(C, int(bands[0]))
        far = int(bands[np.argmax(d[bands])])
        d = _tree_distances(C, far)
        labels[far] = "tip"
        labels[int(bands[np.argmax(d[bands])])] = "base"
        return MarkerDetections(C, det.areas, labels)
    i, j = pair
    d_i = _tree_distances(C, i)
    others = [int(b) for b in bands if b not in pair]
    if others:
        tip = max(others, key=lambda o: d_i[o])
        labels[tip] = "tip"
        d_tip = _tree_distances(C, tip)
        near_i = d_tip[i] <= d_tip[j]
    else:
        dots = np.flatnonzero(~is_band)
        near_i = bool(dots.size) and d_i[dots].min() <= _tree_distances(C, j)[dots].min()
    labels[i], labels[j] = ("base", "base_prime") if near_i else ("base_prime", "base")
    return MarkerDetections(C, det.areas, labels)


def detections_to_planar(det: MarkerDetections):
    """Labelled detections to :class:`~cathtrack.reconstruction.PlanarMarkers`."""
    from .reconstruction import PlanarMarkers

    need = {}
    for lab in ("base_prime", "base", "tip"):
        pts = det.select(lab)
        if pts.shape[0] != 1:
            raise LabelingError(f"expected one {lab} detection, found {pts.shape[0]}")
        need[lab] = pts[0]
    return PlanarMarkers(need["base_prime"], need["base"], need["tip"], det.select("intermediate"))
