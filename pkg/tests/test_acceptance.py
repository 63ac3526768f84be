"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line in the summary.

Runtime is dominated by the three design studies (about 8 minutes on one core).
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from cathtrack.biplane import BiplaneGeometry, NoiseModel, perturb, project_point, triangulate
from cathtrack.design import build_helical_design, helix_for_turns, marker_spacing, spacing_factor
from cathtrack.estimator import EstimatorConfig, cost_gradient, estimate, residuals
from cathtrack.imaging import Blob, ImageParams, render, segment
from cathtrack.kinematics import ModalCoefficients, marker_world_positions, propagate
from cathtrack.reconstruction import OrderedMarkerSet, reconstruct_markers
from cathtrack.simulation import default_base_pose, simulate_scene
from cathtrack.studies import StudyConfig, WorkspaceBounds, roll_error, run_study, sample_configuration, shape_error

L = 25.0
GEOM = BiplaneGeometry.canonical()
DESIGN = build_helical_design(L, 1.0, 19, helix_for_turns(L, 19, 2.0))


def report(log, k, ok, detail):
    log.append((k, bool(ok), detail))
    assert ok, detail


@pytest.fixture(scope="module")
def noiseless_runs():
    """100 seeded configurations through simulate, reconstruct and cold-start estimate."""
    t0 = time.perf_counter()
    out = []
    for seed in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([2024, seed]))
        c, roll = sample_configuration(rng, WorkspaceBounds(math.pi, L), 3)
        scene = simulate_scene(DESIGN, c, roll, GEOM, (0.0, 0.0), rng)
        rec = reconstruct_markers(scene.views["front"], scene.views["side"], GEOM, DESIGN, noise=0.0)
        est = estimate(rec.markers, DESIGN, EstimatorConfig(order=3))
        truth = propagate(c, default_base_pose(), L).rolled(roll)
        out.append((100 * shape_error(est.material_frames(), truth) / L, roll_error(est.material_frames(), truth),
                    est.cost_history, int(rec.markers.present[2:-1].sum())))
    return out, time.perf_counter() - t0


def test_criterion_1_noiseless_roundtrip(noiseless_runs, acceptance_report):
    runs, seconds = noiseless_runs
    ep = max(r[0] for r in runs)
    er = max(r[1] for r in runs)
    full = sum(r[3] == DESIGN.n for r in runs)
    kappa = spacing_factor(marker_spacing(1.0, helix_for_turns(L, 19, 2.0)), 0.5)
    ok = ep < 0.01 and er < 0.1 and seconds < 60
    report(acceptance_report, 1, ok,
           f"max e_p {ep:.2e} %L, max e_r {er:.2e} deg, {seconds:.1f} s for 100 runs "
           f"(design kappa {kappa:.2f} at N=0.5, all markers recovered in {full}/100)")


def _grid_triangulate(pf, ps, half=40.0, levels=9, pts=9):
    k = pf.shape[0]
    centre = np.zeros((k, 3))
    offs = np.linspace(-1.0, 1.0, pts)
    G = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1).reshape(-1, 3)
    h = 2 * half / (pts - 1)
    for _ in range(levels):
        cand = centre[:, None] + G[None] * (h * (pts - 1) / 2)
        err = (np.sum((project_point(cand, "front", GEOM) - pf[:, None]) ** 2, axis=-1)
               + np.sum((project_point(cand, "side", GEOM) - ps[:, None]) ** 2, axis=-1))
        centre = cand[np.arange(k), np.argmin(err, axis=1)]
        h /= 4
    return centre, 4 * h


def test_criterion_2_triangulation_oracle(acceptance_report):
    rng = np.random.default_rng(99)
    X = rng.uniform(-30, 30, (10_000, 3))
    pf0, ps0 = project_point(X, "front", GEOM), project_point(X, "side", GEOM)
    exact = np.max(np.abs(triangulate(pf0, ps0, GEOM) - X))
    noise = NoiseModel(0.5, 0.5, seed=99)
    pf, ps = perturb(pf0, noise, "front"), perturb(ps0, noise, "side")
    Y = triangulate(pf, ps, GEOM)
    worst, res = 0.0, None
    for chunk in np.array_split(np.arange(X.shape[0]), 20):
        G, res = _grid_triangulate(pf[chunk], ps[chunk])
        worst = max(worst, float(np.max(np.abs(Y[chunk] - G))))
    ok = exact < 1e-9 and worst <= res
    report(acceptance_report, 2, ok,
           f"noiseless max error {exact:.1e} mm; max |pinv - grid| {worst:.1e} mm vs grid step {res:.1e} mm")


def test_criterion_3_dropped_marker_table(acceptance_report):
    t0 = time.perf_counter()
    res = run_study(StudyConfig(kind="dropped", orders=(2, 3, 4), configurations=25, noise=0.5))
    seconds = time.perf_counter() - t0
    rows = {r["order"]: r for r in res.table}
    order_ok = all(r["shape_dropped"] >= r["shape_control"] and r["roll_dropped"] >= r["roll_control"]
                   for r in rows.values())
    m3 = rows[3]
    b_ok = 0.7 <= m3["shape_control"] <= 2.8 and 4 <= m3["roll_control"] <= 16
    c_ok = 2 <= m3["shape_dropped"] <= 8 and 10 <= m3["roll_dropped"] <= 42
    fails = sum(not t.ok for t in res.trials)
    table = "; ".join(f"m={m}: {r['shape_control']:.2f}/{r['shape_dropped']:.2f} %L, "
                      f"{r['roll_control']:.1f}/{r['roll_dropped']:.1f} deg" for m, r in sorted(rows.items()))
    report(acceptance_report, 3, order_ok and b_ok and c_ok and seconds < 600,
           f"control/dropped RMS {table}; ordering {order_ok}, m=3 control in range {b_ok}, "
           f"m=3 dropped in range {c_ok}; {fails} failed trials; {seconds:.0f} s")


def _nearest(points, x):
    return min(range(len(points)), key=lambda i: abs(points[i].x - x))


def test_criterion_4_spacing_sweep(acceptance_report):
    res = run_study(StudyConfig(kind="spacing", orders=(3,), configurations=25, noise=0.5))
    pts = res.point(3)
    i15, i3 = _nearest(pts, 1.5), _nearest(pts, 3.0)
    a = res.values(i15, 3, metric="shape_error")
    b = res.values(i3, 3, metric="shape_error")
    ratio = a.mean() / b.mean()
    p = stats.ttest_ind(a, b, equal_var=False, alternative="greater").pvalue
    lo, hi = _nearest(pts, 2.0), _nearest(pts, 5.0)
    band = sorted(pts[min(lo, hi):max(lo, hi) + 1], key=lambda q: q.x)
    rises = [(q.x, r.x, r.shape_mean - q.shape_mean, q.shape_sd) for q, r in zip(band, band[1:])
             if r.shape_mean - q.shape_mean > q.shape_sd]
    ok = ratio >= 2 and p < 0.01 and not rises
    curve = ", ".join(f"{q.x:.2f}:{q.shape_mean:.2f}" for q in sorted(pts, key=lambda q: q.x))
    report(acceptance_report, 4, ok,
           f"kappa {pts[i15].x:.2f} vs {pts[i3].x:.2f}: mean e_p {a.mean():.2f} vs {b.mean():.2f} %L "
           f"(ratio {ratio:.2f}, Welch p {p:.1e}); rises beyond 1 SD over kappa 2..5: {rises or 'none'}; "
           f"curve kappa:e_p {curve}")


def test_criterion_5_slenderness_sweep(acceptance_report):
    res = run_study(StudyConfig(kind="slenderness", orders=(3,), configurations=25, noise=0.5))
    pts = res.point(3)
    i6, i40, i100 = _nearest(pts, 6.0), _nearest(pts, 40.0), _nearest(pts, 100.0)
    sp6, sp40 = res.values(i6, 3, metric="shape_error"), res.values(i40, 3, metric="shape_error")
    r100, r40 = res.values(i100, 3, metric="roll_error"), res.values(i40, 3, metric="roll_error")
    p_shape = stats.ttest_ind(sp6, sp40, equal_var=False, alternative="greater").pvalue
    p_roll = stats.ttest_ind(r100, r40, equal_var=False, alternative="greater").pvalue
    ok = sp6.mean() > sp40.mean() and r100.mean() > r40.mean()
    report(acceptance_report, 5, ok,
           f"e_p at L/r {pts[i6].x:.1f} vs {pts[i40].x:.1f}: {sp6.mean():.2f} vs {sp40.mean():.2f} %L "
           f"(Welch p {p_shape:.1e}); e_r at L/r {pts[i100].x:.1f} vs {pts[i40].x:.1f}: "
           f"{r100.mean():.1f} vs {r40.mean():.1f} deg (Welch p {p_roll:.1e})")


def _frame(rng, scale, diameter=1.0, count=10, gap_px=3.0):
    half = 0.5 * 512 * scale - diameter
    centres = []
    while len(centres) < count:
        c = rng.uniform(-half, half, 2)
        if all(np.linalg.norm(c - q) > diameter + gap_px * scale for q in centres):
            centres.append(c)
    return np.array(centres)


def test_criterion_6_segmentation(acceptance_report):
    rng = np.random.default_rng(6)
    scale = 0.1
    found = total = 0
    sq_err, times = [], []
    for k in range(50):
        centres = _frame(rng, scale)
        img = render([Blob(tuple(c), 1.0) for c in centres], ImageParams(512, 512, noise_sigma=4.0, seed=k), scale)
        t0 = time.perf_counter()
        det = segment(img)
        times.append(time.perf_counter() - t0)
        d = np.linalg.norm(centres[:, None] - det.centroids[None], axis=-1)
        hit = d.min(axis=1) < 5 * scale if det.centroids.size else np.zeros(len(centres), bool)
        found += int(hit.sum())
        total += len(centres)
        sq_err.extend(d.min(axis=1)[hit] ** 2)
    recall = found / total
    rms = math.sqrt(np.mean(sq_err))
    per_frame = 1e3 * float(np.mean(times))
    ok = recall == 1.0 and rms < 0.5 * scale and per_frame < 25
    report(acceptance_report, 6, ok,
           f"recall {recall:.3f}, centroid RMS {rms / scale:.3f} px, {per_frame:.1f} ms/frame mean "
           f"({1e3 * max(times):.1f} ms max) on 50 noisy 512x512 frames")


def test_criterion_7_estimator_numerics(noiseless_runs, acceptance_report):
    rng = np.random.default_rng(7)
    c_true = ModalCoefficients([0.05, -0.02, 0.01], [0.03, 0.02, -0.015])
    X = marker_world_positions(DESIGN, c_true, 0.6, default_base_pose())
    X[2:-1] += rng.uniform(-0.2, 0.2, X[2:-1].shape)
    markers = OrderedMarkerSet.from_array(X)
    worst = 0.0
    for _ in range(20):
        cfg = EstimatorConfig(shape_damping=float(rng.uniform(0.1, 10)), roll_damping=float(rng.uniform(0.1, 10)),
                              prior_coefficients=tuple(rng.uniform(-0.05, 0.05, 6)),
                              prior_roll=float(rng.uniform(-3, 3)))
        x = np.append(rng.uniform(-0.06, 0.06, 6), rng.uniform(-3, 3))
        g = cost_gradient(x[:6], x[6], markers, DESIGN, cfg)
        fd = np.zeros(7)
        for k in range(7):
            h = 1e-6 * np.eye(7)[k]
            fd[k] = (residuals(x[:6] + h[:6], x[6] + h[6], markers, DESIGN, cfg)[1]
                     - residuals(x[:6] - h[:6], x[6] - h[6], markers, DESIGN, cfg)[1]) / 2e-6
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    runs, _ = noiseless_runs
    steps = [(a, b) for r in runs for a, b in zip(r[2], r[2][1:])]
    increases = sum(b > a * (1 + 1e-12) + 1e-300 for a, b in steps)
    ok = worst < 1e-4 and increases == 0
    report(acceptance_report, 7, ok,
           f"max relative gradient error {worst:.1e} over 20 damped points; "
           f"{increases} cost increases over {len(steps)} half-steps in 100 runs")


def test_criterion_8_kinematics_invariants(acceptance_report):
    rng = np.random.default_rng(8)
    drift = 0.0
    for _ in range(5):
        path = propagate(rng.uniform(-0.1, 0.1, 6), length=L, step=L / 10_000)
        RtR = np.einsum("kji,kjl->kil", path.rotations, path.rotations)
        drift = max(drift, float(np.max(np.abs(RtR - np.eye(3)))))
    chord_err = 0.0
    for k in np.linspace(0.005, 0.4, 80):
        phi = rng.uniform(0, 2 * math.pi)
        path = propagate([k * math.cos(phi), 0, 0, k * math.sin(phi), 0, 0], length=L)
        for j in range(1, len(path), 10):
            s = path.s[j]
            chord = np.linalg.norm(path.positions[j] - path.positions[0])
            chord_err = max(chord_err, abs(chord - 2 * abs(math.sin(k * s / 2)) / k))
    ok = drift < 1e-9 and chord_err < 1e-6 * L
    report(acceptance_report, 8, ok,
           f"orthonormality drift {drift:.1e} after 10^4 steps; max chord error {chord_err / L:.1e} L "
           f"for curvature 0.005..0.4 /mm")
