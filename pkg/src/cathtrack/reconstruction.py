"""Ordering, cross-plane correspondence and 3D reconstruction of markers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .biplane import BiplaneGeometry, epipolar_distance, triangulate


class AmbiguousCorrespondenceWarning(UserWarning):
    pass


class MarkerAssignmentError(ValueError):
    """Observed markers cannot be aligned with the design."""


@dataclass(frozen=True, eq=False)
class OrderedMarkerSet:
    """World marker positions in design order ``[b', b, 1..n, e]``.

    Missing markers have ``present == False`` and NaN positions.
    """

    positions: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        mask = np.array(self.present, dtype=bool)
        if pos.ndim != 2 or pos.shape[1] != 3 or mask.shape != (pos.shape[0],) or pos.shape[0] < 3:
            raise ValueError("positions must be (k, 3) with a matching mask, k >= 3")
        if not (mask[0] and mask[1] and mask[-1]):
            raise ValueError("b', b and e must always be present")
        if not np.all(np.isfinite(pos[mask])):
            raise ValueError("present markers must have finite positions")
        pos[~mask] = np.nan
        if np.linalg.norm(pos[1] - pos[0]) < 1e-12:
            raise ValueError("base bands coincide; base tangent undefined")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "present", mask)

    @property
    def n(self) -> int:
        return self.positions.shape[0] - 3

    @property
    def base_tangent(self) -> np.ndarray:
        d = self.positions[1] - self.positions[0]
        return d / np.linalg.norm(d)

    @classmethod
    def from_array(cls, X) -> "OrderedMarkerSet":
        """Build from an (n + 3, 3) array where missing rows are NaN."""
        X = np.asarray(X, dtype=float)
        return cls(X, np.all(np.isfinite(X), axis=1))


@dataclass
class Correspondence:
    pairs: list
    unmatched_primary: list
    unmatched_secondary: list
    ambiguous: list = field(default_factory=list)


def sort_primary(points, tip) -> np.ndarray:
    """Indices of ``points`` as a greedy nearest-neighbour chain starting at ``tip``."""
    points = np.asarray(points, dtype=float)
    k = points.shape[0]
    if k == 0:
        return np.zeros(0, dtype=int)
    D = np.linalg.norm(points[:, None] - points[None], axis=-1)
    free = np.ones(k, dtype=bool)
    d0 = np.linalg.norm(points - np.asarray(tip, dtype=float), axis=-1)
    order = [int(np.argmin(d0))]
    free[order[0]] = False
    for _ in range(k - 1):
        d = np.where(free, D[order[-1]], np.inf)
        j = int(np.argmin(d))
        order.append(j)
        free[j] = False
    return np.array(order)


def correspond(primary_ordered, secondary, geom: BiplaneGeometry, primary: str = "front",
               gate: float = 1.5, ambiguity_ratio: float = 0.1, warn: bool = True) -> Correspondence:
    """Greedily match each ordered primary point to the closest unclaimed epipolar candidate.

    A candidate is accepted only within ``gate`` (mm) of the epipolar line.
    When the two best candidates are within ``ambiguity_ratio`` of each other
    the match is flagged and a warning emitted.
    """
    P = np.asarray(primary_ordered, dtype=float).reshape(-1, 2)
    S = np.asarray(secondary, dtype=float).reshape(-1, 2)
    free = np.ones(S.shape[0], dtype=bool)
    pairs, unmatched, ambiguous = [], [], []
    for i, p in enumerate(P):
        if not free.any():
            unmatched.append(i)
            continue
        d = np.where(free, epipolar_distance(S, p, geom, primary), np.inf)
        order = np.argsort(d)
        j = int(order[0])
        if d[j] > gate:
            unmatched.append(i)
            continue
        if order.size > 1 and np.isfinite(d[order[1]]) and d[order[1]] <= gate:
            if d[order[1]] - d[j] <= ambiguity_ratio * max(d[order[1]], 1e-12):
                ambiguous.append(i)
        pairs.append((i, j))
        free[j] = False
    if ambiguous and warn:
        warnings.warn(f"{len(ambiguous)} ambiguous epipolar match(es) at primary indices {ambiguous}",
                      AmbiguousCorrespondenceWarning, stacklevel=2)
    return Correspondence(pairs, unmatched, list(np.flatnonzero(free)), ambiguous)


def correspond_sequence(primary_ordered, secondary, geom: BiplaneGeometry, design, primary: str = "front",
                        noise: float = 0.5, gate: float = 1.5, tip=None, base=None,
                        lookback: int = 5, max_extra: int = 4, skip_cost: float = 9.0,
                        missing_cost: float = 4.0, gap_scale: float = 1.0) -> Correspondence:
    """Match the ordered primary chain to secondary points by dynamic programming.

    Every admissible pair (epipolar distance within ``gate``) triangulates to
    a candidate world point. The chosen matches minimize the squared epipolar
    distances plus the misfit of consecutive 3D gaps to multiples of the
    design spacing, so markers at nearly equal epipolar offsets are resolved
    by continuity along the catheter. Unmatched primary points cost
    ``skip_cost``; a gap spanning markers absent from the primary view costs
    ``missing_cost`` per absent marker. ``tip``/``base`` (world points)
    anchor the two ends of the chain when given.
    """
    P = np.asarray(primary_ordered, dtype=float).reshape(-1, 2)
    S = np.asarray(secondary, dtype=float).reshape(-1, 2)
    kp, ks = P.shape[0], S.shape[0]
    if kp == 0 or ks == 0:
        return Correspondence([], list(range(kp)), list(range(ks)))
    E = np.stack([epipolar_distance(S, p, geom, primary) for p in P])
    allowed = E <= gate
    Pb = np.repeat(P[:, None], ks, axis=1)
    Sb = np.repeat(S[None], kp, axis=0)
    X = triangulate(Pb, Sb, geom) if primary == "front" else triangulate(Sb, Pb, geom)

    ref = design.straight_positions()
    gaps = np.linalg.norm(np.diff(ref[2:-1], axis=0), axis=1)
    d = float(gaps.mean()) if gaps.size else float(design.length)
    sig = max(0.7 * noise, 0.02 * d)
    # bending alone stretches or shrinks surface gaps by up to ~15 %
    gsig = gap_scale * max(sig, 0.1 * d)
    emit = np.where(allowed, (E / sig) ** 2, np.inf)
    ks_extra = np.arange(max_extra + 1)

    def gap_cost(g, delta):
        k = delta + ks_extra
        c = ((g[..., None] - k * d) / gsig) ** 2 + ks_extra * missing_cost
        return c.min(axis=-1)

    def anchor_cost(i, point, rows, end_ref):
        # expected straight distance from an end band to the first/last few markers
        if point is None:
            return np.zeros(ks)
        exp = np.linalg.norm(rows - end_ref, axis=1)
        g = np.linalg.norm(X[i] - np.asarray(point, dtype=float), axis=1)
        c = ((g[:, None] - exp[None]) / gsig) ** 2 + np.arange(exp.size) * missing_cost
        return c.min(axis=1)

    tip_rows = ref[2:-1][::-1][: max_extra + 1]
    base_rows = ref[2:-1][: max_extra + 1]
    cost = np.full((kp, ks), np.inf)
    back = np.full((kp, ks, 2), -1, dtype=int)
    for i in range(kp):
        best = skip_cost * i + anchor_cost(i, tip, tip_rows, ref[-1])
        arg = np.full((ks, 2), -1, dtype=int)
        for ip in range(max(0, i - lookback), i):
            if not np.isfinite(cost[ip]).any():
                continue
            G = np.linalg.norm(X[i][None, :] - X[ip][:, None], axis=-1)
            tot = cost[ip][:, None] + gap_cost(G, i - ip) + skip_cost * (i - ip - 1)
            np.fill_diagonal(tot, np.inf)
            jp = np.argmin(tot, axis=0)
            val = tot[jp, np.arange(ks)]
            better = val < best
            best = np.where(better, val, best)
            arg[better] = np.stack([np.full(better.sum(), ip), jp[better]], axis=1)
        cost[i] = best + emit[i]
        back[i] = arg
    final = np.full((kp, ks), np.inf)
    for i in range(kp):
        final[i] = cost[i] + skip_cost * (kp - 1 - i) + anchor_cost(i, base, base_rows, ref[1])
    if not np.isfinite(final).any():
        return Correspondence([], list(range(kp)), list(range(ks)))
    i, j = np.unravel_index(np.argmin(final), final.shape)
    chain = []
    while i >= 0:
        chain.append((int(i), int(j)))
        i, j = back[i, j]
    chain.reverse()
    used: dict = {}
    for i, j in chain:
        if j not in used or E[i, j] < E[used[j], j]:
            used[j] = i
    pairs = sorted((i, j) for j, i in used.items())
    matched_p = {i for i, _ in pairs}
    matched_s = {j for _, j in pairs}
    return Correspondence(pairs, [i for i in range(kp) if i not in matched_p],
                          [j for j in range(ks) if j not in matched_s])


def _segment_lengths(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a - b, axis=-1)


def detect_missing(candidates, design, base, tip, tolerance: float = 0.35) -> np.ndarray:
    """Assign base-to-tip ordered intermediate candidates to design slots.

    Consecutive observed gaps (anchored at the base and tip bands) are aligned
    with the straight-design gaps by dynamic programming, so a gap of about
    ``k * d`` implies ``k - 1`` skipped slots. Returns the presence mask over
    the ``n`` intermediate slots.

    Raises:
        MarkerAssignmentError: more candidates than slots, or the best
            alignment's RMS relative gap error exceeds ``tolerance``.
    """
    mask, rms = align_to_design(candidates, design, base, tip)
    if rms > tolerance:
        raise MarkerAssignmentError(f"no alignment within tolerance (RMS relative gap error {rms:.2f})")
    return mask


def align_to_design(candidates, design, base, tip) -> tuple[np.ndarray, float]:
    """Best slot alignment of ordered candidates and its RMS relative gap error."""
    Q = np.asarray(candidates, dtype=float).reshape(-1, 3)
    n, k = design.n, Q.shape[0]
    if k > n:
        raise MarkerAssignmentError(f"{k} candidates for {n} design slots")
    if k == 0:
        return np.zeros(n, dtype=bool), 0.0
    ref = design.straight_positions()[1:]  # slot 0 = base band, 1..n markers, n+1 = tip
    G = _segment_lengths(ref[:, None], ref[None])
    obs = np.vstack([np.asarray(base, dtype=float), Q, np.asarray(tip, dtype=float)])
    g_obs = _segment_lengths(obs[1:], obs[:-1])

    def rel_err(g, slots_a, slots_b):
        e = G[slots_a, slots_b]
        return ((g - e) / e) ** 2

    slots = np.arange(1, n + 1)
    # cost[j]: best accumulated squared relative error with the current candidate at slot j
    cost = np.full(n + 2, np.inf)
    cost[slots] = rel_err(g_obs[0], 0, slots)
    back = np.zeros((k, n + 2), dtype=int)
    for t in range(1, k):
        new = np.full(n + 2, np.inf)
        for j in range(t + 1, n + 1):
            prev = np.arange(t, j)
            c = cost[prev] + rel_err(g_obs[t], prev, j)
            b = int(np.argmin(c))
            new[j] = c[b]
            back[t, j] = prev[b]
        cost = new
    total = cost[slots] + rel_err(g_obs[k], slots, n + 1)
    j = int(slots[np.argmin(total)])
    best = float(np.min(total))
    rms = float(np.sqrt(best / (k + 1)))
    assigned = [j]
    for t in range(k - 1, 0, -1):
        j = back[t, j]
        assigned.append(j)
    mask = np.zeros(n, dtype=bool)
    mask[np.array(assigned) - 1] = True
    return mask, rms


def choose_primary(front_points, side_points) -> str:
    """Plane whose detections span the larger bounding box; ties go to front."""
    def area(pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 2:
            return 0.0
        ext = pts.max(axis=0) - pts.min(axis=0)
        return float(ext[0] * ext[1])

    return "side" if area(side_points) > area(front_points) else "front"


def chain_order_3d(points, tip) -> np.ndarray:
    """Nearest-neighbour chain of 3D points starting next to ``tip``."""
    return sort_primary(points, tip)


@dataclass
class PlanarMarkers:
    """Labelled planar observations from one image plane (mm)."""

    base_prime: np.ndarray
    base: np.ndarray
    tip: np.ndarray
    intermediates: np.ndarray

    def all_points(self) -> np.ndarray:
        return np.vstack([self.base_prime, self.base, self.intermediates.reshape(-1, 2), self.tip])


@dataclass
class Reconstruction:
    markers: OrderedMarkerSet
    primary: str
    correspondence: Correspondence
    alignment_error: float = 0.0


def reconstruct_markers(front: PlanarMarkers, side: PlanarMarkers, geom: BiplaneGeometry, design,
                        noise: float = 0.5, gate: float | None = None, tolerance: float = 0.35,
                        method: str = "sequence", warn: bool = True, strict: bool = True,
                        rechain: bool = True) -> Reconstruction:
    """Planar observations in both views to the ordered world marker set.

    The primary plane orders its intermediates from the tip; epipolar matching
    pairs them with the secondary view; matched pairs are triangulated,
    re-chained in 3D from the tip, and aligned with the design slots.

    ``method`` selects :func:`correspond_sequence` (default) or the plain
    greedy :func:`correspond`. ``gate`` defaults to ``3 * noise``. With
    ``strict=False`` a slot alignment worse than ``tolerance`` is kept
    (``alignment_error`` reports it) instead of raising.
    """
    if gate is None:
        gate = 3.0 * noise if noise > 0 else 1e-6
    views = {"front": front, "side": side}
    primary = choose_primary(front.all_points(), side.all_points())
    secondary = "side" if primary == "front" else "front"
    pv, sv = views[primary], views[secondary]
    P_int = np.asarray(pv.intermediates, dtype=float).reshape(-1, 2)
    S_int = np.asarray(sv.intermediates, dtype=float).reshape(-1, 2)
    order = sort_primary(P_int, pv.tip)

    def tri(p_pt, s_pt):
        f, s = (p_pt, s_pt) if primary == "front" else (s_pt, p_pt)
        return triangulate(f, s, geom)

    bp = tri(np.asarray(pv.base_prime, float), np.asarray(sv.base_prime, float))
    b = tri(np.asarray(pv.base, float), np.asarray(sv.base, float))
    e = tri(np.asarray(pv.tip, float), np.asarray(sv.tip, float))
    if np.linalg.norm(b - bp) < 1e-12:
        raise ValueError("base bands coincide; base tangent undefined")
    if method == "sequence":
        corr = correspond_sequence(P_int[order], S_int, geom, design, primary, noise=noise, gate=gate,
                                   tip=e, base=b)
    elif method == "greedy":
        corr = correspond(P_int[order], S_int, geom, primary, gate=gate, warn=warn)
    else:
        raise ValueError(f"unknown correspondence method {method!r}")
    if corr.pairs:
        pi = np.array([order[i] for i, _ in corr.pairs])
        si = np.array([j for _, j in corr.pairs])
        world = tri(P_int[pi], S_int[si])
        if rechain:
            world = world[chain_order_3d(world, e)]
        world = world[::-1]
    else:
        world = np.zeros((0, 3))
    mask, rms = align_to_design(world, design, b, e)
    if strict and rms > tolerance:
        raise MarkerAssignmentError(f"no alignment within tolerance (RMS relative gap error {rms:.2f})")
    positions = np.full((design.n + 3, 3), np.nan)
    positions[0], positions[1], positions[-1] = bp, b, e
    positions[2:-1][mask] = world
    present = np.concatenate([[True, True], mask, [True]])
    return Reconstruction(OrderedMarkerSet(positions, present), primary, corr, rms)
