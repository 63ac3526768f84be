"""Command-line entry point: ``cathtrack <command> [options]``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 I/O error.
Failures print one JSON object (``error``, ``message``, ``stage``, ``exit_code``) on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .biplane import DegenerateGeometryError
from .config import ENV_PREFIX, ConfigError, RunConfig, load_config
from .estimator import IdentifiabilityError, estimate
from .imaging import GrayImage, ImageBoundsError, LabelingError, classify, detections_to_planar, render_biplane, segment
from .io import (read_planar_csv, read_reconstruction_csv, write_backbone_csv, write_csv, write_detections_csv,
                 write_json, write_manifest, write_planar_csv, write_reconstruction_csv)
from .kinematics import ModalCoefficients, propagate
from .reconstruction import MarkerAssignmentError, reconstruct_markers
from .simulation import default_base_pose, simulate_scene
from .studies import SamplingError, WorkspaceBounds, run_study, sample_configuration

log = logging.getLogger("cathtrack")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
NUMERIC_ERRORS = (MarkerAssignmentError, LabelingError, IdentifiabilityError, DegenerateGeometryError,
                  SamplingError, ImageBoundsError, np.linalg.LinAlgError, FloatingPointError)


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(str(exc))
        self.stage, self.exc = stage, exc


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=_env("CONFIG"), help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--out", default=_env("OUT", "out"), help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cathtrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cathtrack {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward-simulate planar markers and ground truth")
    _common(p)
    p.add_argument("--images", action="store_true", help="also render front/side PGM frames")

    p = sub.add_parser("segment", help="detect and label markers in a PGM frame")
    _common(p)
    p.add_argument("image", help="input PGM")
    p.add_argument("--name", default=None, help="output stem (default: image stem)")

    p = sub.add_parser("reconstruct", help="planar markers of both views to ordered world markers")
    _common(p)
    p.add_argument("--planar", help="planar-marker CSV holding both planes")
    p.add_argument("--front", help="front detections CSV")
    p.add_argument("--side", help="side detections CSV")

    p = sub.add_parser("estimate", help="fit shape and roll to reconstructed markers")
    _common(p)
    p.add_argument("markers", help="reconstruction CSV")
    p.add_argument("--order", type=int, nargs="+", default=None, help="modal order(s)")

    p = sub.add_parser("study", help="run a design study")
    _common(p)
    p.add_argument("--kind", choices=("spacing", "slenderness", "dropped"), default=None)
    p.add_argument("--configurations", type=int, default=None)

    p = sub.add_parser("pipeline", help="segment, reconstruct and estimate from a PGM pair")
    _common(p)
    p.add_argument("--front-image", required=True)
    p.add_argument("--side-image", required=True)
    p.add_argument("--order", type=int, nargs="+", default=None, help="modal order(s)")
    return parser


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = _env("JOBS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (OSError, ValueError, TypeError, KeyError, *NUMERIC_ERRORS) as exc:
        raise StageError(name, exc) from exc


def _truth(cfg: RunConfig):
    pose = cfg.pose
    if pose.random:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, 0]))
        c, roll = sample_configuration(rng, WorkspaceBounds(pose.max_bend, cfg.design.length), pose.order)
        return c, roll
    return ModalCoefficients(np.array(pose.cx), np.array(pose.cy)), float(pose.roll)


def cmd_simulate(args, cfg: RunConfig, out: Path) -> dict:
    c, roll = _stage("pose", _truth, cfg)
    design, geom = cfg.design, cfg.geometry
    base = default_base_pose()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, 0]))
    scene = _stage("simulate", simulate_scene, design, c, roll, geom, (cfg.noise.front, cfg.noise.side), rng, base)
    write_planar_csv(out / "planar.csv", scene.views)
    path = propagate(c, base, design.length, cfg.estimator.step).rolled(roll)
    write_backbone_csv(out / "backbone_truth.csv", path)
    write_json(out / "truth.json", {
        "cx": c.cx.tolist(), "cy": c.cy.tolist(), "sigma": float(roll), "base_pose": base.tolist(),
        "world_markers": scene.world.tolist(),
        "ids": {pl: ids.tolist() for pl, ids in scene.ids.items()},
    })
    if args.images:
        tangents = (path.tangents[0], path.tangents[-1])
        imgs = _stage("render", render_biplane, scene.world, design, geom,
                      replace(cfg.imaging, seed=cfg.seed), None, tangents)
        for pl, img in imgs.items():
            img.write_pgm(out / f"{pl}.pgm")
    return {"sigma": float(roll)}


def _segment_image(path, cfg: RunConfig):
    img = GrayImage.read_pgm(path)
    det = segment(img, cfg.segmentation)
    return img, classify(det, cfg.design, pixel_scale=img.pixel_scale)


def cmd_segment(args, cfg: RunConfig, out: Path) -> dict:
    _, det = _stage("segment", _segment_image, args.image, cfg)
    stem = args.name or Path(args.image).stem
    write_detections_csv(out / f"{stem}_detections.csv", det)
    return {"detections": len(det)}


def _reconstruct(views, cfg: RunConfig, strict: bool = True, floor: float = 0.0):
    # image centroids carry at least pixel-level error whatever the configured noise
    noise = max(cfg.noise.front, cfg.noise.side, floor)
    return reconstruct_markers(views["front"], views["side"], cfg.geometry, cfg.design, noise=noise,
                               strict=strict, warn=False)


def cmd_reconstruct(args, cfg: RunConfig, out: Path) -> dict:
    if args.planar:
        views = _stage("read", read_planar_csv, args.planar)
    elif args.front and args.side:
        views = {"front": _stage("read", read_planar_csv, args.front, "front")["front"],
                 "side": _stage("read", read_planar_csv, args.side, "side")["side"]}
    else:
        raise StageError("arguments", ConfigError("--planar", "give --planar or both --front and --side"))
    if set(views) != {"front", "side"}:
        raise StageError("read", ConfigError("planar", f"need front and side planes, got {sorted(views)}"))
    rec = _stage("reconstruct", _reconstruct, views, cfg)
    write_reconstruction_csv(out / "reconstruction.csv", rec.markers)
    return {"primary": rec.primary, "present": int(rec.markers.present[2:-1].sum()),
            "alignment_error": rec.alignment_error}


def _estimate_orders(markers, cfg: RunConfig, orders, out: Path) -> dict:
    report = {}
    for m in orders:
        ecfg = replace(cfg.estimator, order=int(m))
        t0 = time.perf_counter()
        est = _stage(f"estimate[m={m}]", estimate, markers, cfg.design, ecfg)
        d = est.to_dict()
        d["seconds"] = time.perf_counter() - t0
        write_json(out / f"estimate_m{m}.json", d)
        write_backbone_csv(out / f"backbone_m{m}.csv", est.material_frames())
        report[str(m)] = {"final_cost": d["final_cost"], "converged": d["converged"], "seconds": d["seconds"],
                          "sigma": d["sigma"]}
    return report


def cmd_estimate(args, cfg: RunConfig, out: Path) -> dict:
    markers = _stage("read", read_reconstruction_csv, args.markers)
    if markers.n != cfg.design.n:
        raise StageError("read", ConfigError("design", f"markers have {markers.n} slots, design has {cfg.design.n}"))
    return _estimate_orders(markers, cfg, args.order or [cfg.estimator.order], out)


def cmd_study(args, cfg: RunConfig, out: Path) -> dict:
    study = cfg.study
    if args.kind:
        study = replace(study, kind=args.kind, designs=())
    if args.configurations:
        study = replace(study, configurations=args.configurations)
    study = replace(study, seed=cfg.seed)
    res = _stage("study", run_study, study, _jobs(args))
    write_json(out / "summary.json", res.summary())
    write_csv(out / "trials.csv", *res.trial_rows())
    write_csv(out / "plot_data.csv", *res.plot_rows())
    return {"kind": study.kind, "trials": len(res.trials), "failures": sum(not t.ok for t in res.trials)}


def cmd_pipeline(args, cfg: RunConfig, out: Path) -> dict:
    timings, report = {}, {}
    views = {}
    for pl, path in (("front", args.front_image), ("side", args.side_image)):
        if not Path(path).is_file():
            raise StageError("read", FileNotFoundError(f"missing {pl} image: {path}"))
        t0 = time.perf_counter()
        _, det = _stage(f"segment[{pl}]", _segment_image, path, cfg)
        timings[f"segment_{pl}"] = time.perf_counter() - t0
        write_detections_csv(out / f"{pl}_detections.csv", det)
        views[pl] = _stage(f"label[{pl}]", detections_to_planar, det)
    t0 = time.perf_counter()
    rec = _stage("reconstruct", _reconstruct, views, cfg, False, cfg.geometry.pixel_scale)
    timings["reconstruct"] = time.perf_counter() - t0
    write_reconstruction_csv(out / "reconstruction.csv", rec.markers)
    report["reconstruction"] = {"primary": rec.primary, "present": int(rec.markers.present[2:-1].sum()),
                                "alignment_error": rec.alignment_error}
    t0 = time.perf_counter()
    report["estimates"] = _estimate_orders(rec.markers, cfg, args.order or [cfg.estimator.order], out)
    timings["estimate"] = time.perf_counter() - t0
    report["timings"] = timings
    write_json(out / "report.json", report)
    return report


COMMANDS = {"simulate": cmd_simulate, "segment": cmd_segment, "reconstruct": cmd_reconstruct,
            "estimate": cmd_estimate, "study": cmd_study, "pipeline": cmd_pipeline}


def _fail(code: int, exc: BaseException, stage: str | None) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "stage": stage, "exit_code": code}
    if isinstance(exc, ConfigError):
        err["field"] = exc.field
    print(json.dumps(err), file=sys.stderr)
    return code


def _code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NUMERIC_ERRORS):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = datetime.now(timezone.utc)
    out = Path(args.out)
    cfg, code, extra = None, EXIT_OK, {}
    try:
        cfg = _stage("config", load_config, args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out.mkdir(parents=True, exist_ok=True)
        extra = {"status": "ok", "result": COMMANDS[args.command](args, cfg, out)}
    except StageError as exc:
        # unreadable or malformed input files count as I/O failures
        io_stage = exc.stage == "read" and not isinstance(exc.exc, ConfigError)
        code = _fail(EXIT_IO if io_stage else _code(exc.exc), exc.exc, exc.stage)
        extra = {"status": "failed", "failed_stage": exc.stage, "error": str(exc.exc)}
    except OSError as exc:
        code = _fail(EXIT_IO, exc, "io")
        extra = {"status": "failed", "failed_stage": "io", "error": str(exc)}
    if out.is_dir():
        # written on failure too, so partial outputs stay inventoried
        try:
            write_manifest(out, args.command, cfg.hash() if cfg else None, cfg.seed if cfg else args.seed,
                           started, extra)
        except OSError as exc:
            if code == EXIT_OK:
                code = _fail(EXIT_IO, exc, "manifest")
    return code


if __name__ == "__main__":
    sys.exit(main())
