"""Monte-Carlo design studies: marker spacing, slenderness and dropped markers."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .biplane import BiplaneGeometry
from .design import build_helical_design, helix_for_angle, helix_for_turns, marker_spacing, spacing_factor
from .estimator import EstimatorConfig, estimate
from .kinematics import BackbonePath, ModalCoefficients, chebyshev_basis, propagate
from .reconstruction import reconstruct_markers
from .simulation import default_base_pose, simulate_scene

logger = logging.getLogger(__name__)

STUDY_KINDS = ("spacing", "slenderness", "dropped")


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorkspaceBounds:
    """Random-configuration limits: total bend angle along the segment (rad)."""

    max_bend: float = math.pi
    length: float = 25.0


def total_bend(c, length: float, samples: int = 201) -> float:
    """Integrated bending angle, the arc-length integral of ``|u(s)|``."""
    c = np.asarray(c, dtype=float)
    m = c.size // 2
    x = np.linspace(-1.0, 1.0, samples)
    phi = chebyshev_basis(x, m)
    k = np.hypot(phi @ c[:m], phi @ c[m:])
    return float(np.trapezoid(k, x) * 0.5 * length)


def sample_configuration(rng: np.random.Generator, bounds: WorkspaceBounds, m: int,
                         max_tries: int = 10_000):
    """Random ``(c, roll)``: uniform coefficients, rejected until the total bend fits.

    Every coefficient is bounded by ``max_bend / length``, the constant
    curvature reaching the bend limit on its own.
    """
    limit = bounds.max_bend / bounds.length
    if limit == 0:
        return ModalCoefficients.zeros(m), float(rng.uniform(-math.pi, math.pi))
    for _ in range(max_tries):
        c = rng.uniform(-limit, limit, 2 * m)
        if total_bend(c, bounds.length) <= bounds.max_bend:
            roll = float(rng.uniform(-math.pi, math.pi))
            return ModalCoefficients.from_vector(c), roll
    raise SamplingError(f"no configuration within bounds after {max_tries} tries")


def shape_error(estimated: BackbonePath, truth: BackbonePath) -> float:
    """RMS distance between corresponding backbone samples (mm)."""
    if len(estimated) != len(truth):
        raise ValueError("backbone paths have different sample counts")
    d = estimated.positions - truth.positions
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def twist_angles(estimated: BackbonePath, truth: BackbonePath) -> np.ndarray:
    """Per-sample rotation about the local tangent separating the two frame fields (rad)."""
    if len(estimated) != len(truth):
        raise ValueError("backbone paths have different sample counts")
    Rrel = np.einsum("kji,kjl->kil", truth.rotations, estimated.rotations)
    tr = np.trace(Rrel, axis1=1, axis2=2)
    return 2.0 * np.arctan2(Rrel[:, 1, 0] - Rrel[:, 0, 1], 1.0 + tr)


def roll_error(estimated: BackbonePath, truth: BackbonePath) -> float:
    """RMS twist between estimated and true material frames (degrees)."""
    t = twist_angles(estimated, truth)
    t = np.mod(t + np.pi, 2 * np.pi) - np.pi
    return float(np.degrees(np.sqrt(np.mean(t * t))))


@dataclass
class StudyConfig:
    """Settings for one design study.

    ``designs`` depends on ``kind``: marker counts for ``spacing``, radii for
    ``slenderness``; ``dropped`` uses the single base design.
    """

    kind: str = "dropped"
    configurations: int = 25
    noise: float = 0.5
    seed: int = 0
    orders: tuple = (3,)
    truth_order: int = 3
    max_bend: float = math.pi
    length: float = 25.0
    radius: float = 1.0
    markers: int = 19
    turns: float = 2.0
    angular_spacing: float | None = 0.67
    base_offset: float = 3.0
    designs: tuple = ()
    gate_factor: float = 3.0
    spacing_tolerance: float = 0.35
    tip_weight: float = 10.0
    max_drop_fraction: float = 0.5
    strict_alignment: bool = False
    correspondence: str = "sequence"
    rechain: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"kind must be one of {STUDY_KINDS}")
        if self.configurations < 1:
            raise ValueError("configurations must be >= 1")
        if self.kind != "dropped" and not self.designs:
            object.__setattr__(self, "designs", default_grid(self.kind))
        self.orders = tuple(int(o) for o in self.orders)
        self.designs = tuple(self.designs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["orders"] = list(self.orders)
        d["designs"] = list(self.designs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        for key in ("orders", "designs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def default_grid(kind: str) -> tuple:
    if kind == "spacing":
        # 15 layouts, log-like in n; with the default 0.67 rad step at N = 0.5 mm
        # n = 9, 17, 32, 71 give kappa ~ 5, 3, 2, 1.5
        return (1, 2, 3, 5, 7, 9, 12, 17, 23, 32, 40, 48, 56, 64, 71)
    if kind == "slenderness":
        return tuple(float(v) for v in np.geomspace(0.2, 4.0, 20))
    return ()


def _kappa(d: float, noise: float) -> float:
    return spacing_factor(d, noise) if noise > 0 else math.inf


def study_designs(cfg: StudyConfig):
    """``(x, design)`` pairs; x is the spacing factor or the slenderness L/r."""
    kw = dict(base_offset=cfg.base_offset)
    if cfg.kind == "spacing":
        out = []
        for n in cfg.designs:
            if cfg.angular_spacing is None:
                helix = helix_for_turns(cfg.length, int(n), cfg.turns)
            else:
                helix = helix_for_angle(cfg.length, int(n), cfg.angular_spacing)
            design = build_helical_design(cfg.length, cfg.radius, int(n), helix, **kw)
            out.append((_kappa(marker_spacing(cfg.radius, helix), cfg.noise), design))
        return out
    if cfg.kind == "slenderness":
        helix = helix_for_turns(cfg.length, cfg.markers, cfg.turns)
        return [(cfg.length / r, build_helical_design(cfg.length, r, cfg.markers, helix, **kw))
                for r in cfg.designs]
    helix = helix_for_turns(cfg.length, cfg.markers, cfg.turns)
    design = build_helical_design(cfg.length, cfg.radius, cfg.markers, helix, **kw)
    return [(_kappa(marker_spacing(cfg.radius, helix), cfg.noise), design)]


@dataclass
class TrialResult:
    design_index: int
    config_index: int
    x: float
    order: int
    case: str
    ok: bool
    shape_error: float = float("nan")
    roll_error: float = float("nan")
    converged: bool = False
    outer_iterations: int = 0
    n_dropped: int = 0
    alignment_error: float = float("nan")
    error: str = ""


@dataclass
class StudyPoint:
    x: float
    order: int
    case: str
    shape_mean: float
    shape_sd: float
    roll_mean: float
    roll_sd: float
    shape_rms: float
    roll_rms: float
    trials: int
    failures: int
    flagged: bool


@dataclass
class StudyResult:
    config: StudyConfig
    points: list
    trials: list
    table: list = field(default_factory=list)

    def point(self, order: int | None = None, case: str = "control"):
        return [p for p in self.points if (order is None or p.order == order) and p.case == case]

    def summary(self) -> dict:
        return {"config": self.config.to_dict(), "table": self.table,
                "points": [_finite(asdict(p)) for p in self.points],
                "flagged": [p.x for p in self.points if p.flagged]}

    def trial_rows(self) -> tuple:
        names = [f.name for f in TrialResult.__dataclass_fields__.values()]
        return names, [[getattr(t, n) for n in names] for t in self.trials]

    def plot_rows(self) -> tuple:
        """Curve data per (order, case): x, mean and SD of both metrics."""
        header = ["order", "case", "x", "shape_mean", "shape_sd", "shape_rms", "roll_mean", "roll_sd", "roll_rms"]
        return header, [[p.order, p.case, p.x, p.shape_mean, p.shape_sd, p.shape_rms, p.roll_mean, p.roll_sd,
                         p.roll_rms] for p in self.points]

    def values(self, design_index: int, order: int, case: str = "control", metric: str = "shape_error"):
        return np.array([getattr(t, metric) for t in self.trials
                         if t.design_index == design_index and t.order == order and t.case == case and t.ok])


def _finite(d: dict) -> dict:
    # JSON has no NaN/inf
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _seed(cfg: StudyConfig, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, *key])


def _trial_jobs(cfg: StudyConfig):
    return [(cfg, di, ci) for di in range(len(study_designs(cfg))) for ci in range(cfg.configurations)]


def run_trial(args) -> list:
    """All cases and orders of one (design, configuration) pair."""
    cfg, di, ci = args
    x, design = study_designs(cfg)[di]
    bounds = WorkspaceBounds(cfg.max_bend, design.length)
    config_rng = np.random.default_rng(_seed(cfg, 0, ci))
    c_true, roll_true = sample_configuration(config_rng, bounds, cfg.truth_order)
    base = default_base_pose()
    truth = propagate(c_true, base, design.length).rolled(roll_true)
    geom = BiplaneGeometry.canonical()
    cases = [("control", None)]
    if cfg.kind == "dropped":
        drop_rng = np.random.default_rng(_seed(cfg, 2, di, ci))
        k_max = max(1, int(math.floor(cfg.max_drop_fraction * design.n)))
        k = int(drop_rng.integers(1, k_max + 1))
        plane = ("front", "side")[int(drop_rng.integers(0, 2))]
        cases.append(("dropped", {plane: drop_rng.choice(np.arange(1, design.n + 1), k, replace=False)}))
    out = []
    gate = cfg.gate_factor * cfg.noise if cfg.noise > 0 else 1e-6
    for case, dropped in cases:
        scene = simulate_scene(design, c_true, roll_true, geom, (cfg.noise, cfg.noise),
                               np.random.default_rng(_seed(cfg, 1, di, ci)), base, dropped)
        n_drop = 0 if dropped is None else len(next(iter(dropped.values())))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rec = reconstruct_markers(scene.views["front"], scene.views["side"], geom, design,
                                          noise=cfg.noise, gate=gate, tolerance=cfg.spacing_tolerance,
                                          strict=cfg.strict_alignment, method=cfg.correspondence,
                                          rechain=cfg.rechain)
        except (ValueError, np.linalg.LinAlgError) as exc:
            for m in cfg.orders:
                out.append(TrialResult(di, ci, x, m, case, False, n_dropped=n_drop, error=f"reconstruct: {exc}"))
            continue
        for m in cfg.orders:
            try:
                est = estimate(rec.markers, design, EstimatorConfig(order=m, tip_weight=cfg.tip_weight))
            except (ValueError, np.linalg.LinAlgError) as exc:
                out.append(TrialResult(di, ci, x, m, case, False, n_dropped=n_drop, error=f"estimate: {exc}"))
                continue
            eb = est.material_frames()
            out.append(TrialResult(di, ci, x, m, case, True,
                                   100.0 * shape_error(eb, truth) / design.length,
                                   roll_error(eb, truth), est.converged, est.outer_iterations, n_drop,
                                   rec.alignment_error))
    return out


def _summarize(cfg: StudyConfig, trials: list) -> list:
    points = []
    keys = sorted({(t.design_index, t.order, t.case) for t in trials}, key=lambda k: (k[0], k[1], k[2] != "control"))
    for di, m, case in keys:
        ts = [t for t in trials if t.design_index == di and t.order == m and t.case == case]
        ok = [t for t in ts if t.ok]
        sh = np.array([t.shape_error for t in ok])
        ro = np.array([t.roll_error for t in ok])

        def stats(v):
            if v.size == 0:
                return (float("nan"),) * 3
            return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, float(np.sqrt(np.mean(v * v)))

        s_mean, s_sd, s_rms = stats(sh)
        r_mean, r_sd, r_rms = stats(ro)
        fails = len(ts) - len(ok)
        points.append(StudyPoint(ts[0].x, m, case, s_mean, s_sd, r_mean, r_sd, s_rms, r_rms, len(ts), fails,
                                 fails > 0.2 * len(ts)))
    return points


def run_study(cfg: StudyConfig, jobs: int | None = None) -> StudyResult:
    """Run every (design, configuration) trial and reduce in key order.

    Results are independent of ``jobs``: each trial derives its random
    streams from the master seed and its own key.
    """
    jobs = cfg.jobs if jobs is None else jobs
    work = _trial_jobs(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(run_trial, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        chunks = [run_trial(w) for w in work]
    trials = [t for chunk in chunks for t in chunk]
    trials.sort(key=lambda t: (t.design_index, t.config_index, t.order, t.case))
    points = _summarize(cfg, trials)
    table = []
    if cfg.kind == "dropped":
        for m in cfg.orders:
            ctrl = next(p for p in points if p.order == m and p.case == "control")
            drop = next(p for p in points if p.order == m and p.case == "dropped")
            table.append({"order": m, "shape_control": ctrl.shape_rms, "shape_dropped": drop.shape_rms,
                          "roll_control": ctrl.roll_rms, "roll_dropped": drop.roll_rms})
    return StudyResult(cfg, points, trials, table)
