"""CSV/JSON file formats and run manifests.

Planar markers      id, plane, x_mm, y_mm      ids: base_prime, base, tip, i<k> (unordered)
Detections          label, x_mm, y_mm, area_px2
Reconstruction      index, present, X, Y, Z    index 0 = b', 1 = b, 2..n+1 markers, n+2 = e
Backbone            s, x, y, z, r00 .. r22     material frames, row-major rotation
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .imaging import MarkerDetections
from .reconstruction import OrderedMarkerSet, PlanarMarkers

MANIFEST = "manifest.json"


def write_planar_csv(path, markers: dict) -> None:
    """``markers`` maps plane name to :class:`PlanarMarkers`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "plane", "x_mm", "y_mm"])
        for plane, pm in markers.items():
            rows = [("base_prime", pm.base_prime), ("base", pm.base)]
            rows += [(f"i{k}", p) for k, p in enumerate(np.asarray(pm.intermediates).reshape(-1, 2))]
            rows.append(("tip", pm.tip))
            for ident, p in rows:
                w.writerow([ident, plane, repr(float(p[0])), repr(float(p[1]))])


def _rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def read_planar_csv(path, plane: str | None = None) -> dict:
    """Planar markers per plane from a planar-marker or labelled-detection CSV.

    Detection files carry no plane column; ``plane`` names it.
    """
    rows = _rows(path)
    if not rows:
        raise ValueError(f"{os.fspath(path)}: no rows")
    out: dict = {}
    if "label" in rows[0]:
        if plane is None:
            raise ValueError("plane is required for a detections file")
        grouped = {plane: [(r["label"], r) for r in rows]}
    else:
        grouped = {}
        for r in rows:
            grouped.setdefault(r["plane"], []).append((r["id"], r))
    for pl, items in grouped.items():
        bands, ints = {}, []
        for ident, r in items:
            p = np.array([float(r["x_mm"]), float(r["y_mm"])])
            if ident in ("base_prime", "base", "tip"):
                if ident in bands:
                    raise ValueError(f"{os.fspath(path)}: duplicate {ident} in plane {pl}")
                bands[ident] = p
            elif ident == "unknown":
                continue
            else:
                ints.append(p)
        missing = [k for k in ("base_prime", "base", "tip") if k not in bands]
        if missing:
            raise ValueError(f"{os.fspath(path)}: plane {pl} lacks {', '.join(missing)}")
        out[pl] = PlanarMarkers(bands["base_prime"], bands["base"], bands["tip"],
                                np.array(ints).reshape(-1, 2))
    return out


def write_detections_csv(path, det: MarkerDetections) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "x_mm", "y_mm", "area_px2"])
        for lab, c, a in zip(det.labels, det.centroids, det.areas):
            w.writerow([lab, repr(float(c[0])), repr(float(c[1])), repr(float(a))])


def read_detections_csv(path) -> MarkerDetections:
    rows = _rows(path)
    return MarkerDetections([[float(r["x_mm"]), float(r["y_mm"])] for r in rows],
                            [float(r["area_px2"]) for r in rows], [r["label"] for r in rows])


def write_reconstruction_csv(path, markers: OrderedMarkerSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "present", "X", "Y", "Z"])
        for i, (p, ok) in enumerate(zip(markers.positions, markers.present)):
            vals = [repr(float(v)) for v in p] if ok else ["", "", ""]
            w.writerow([i, int(ok), *vals])


def read_reconstruction_csv(path) -> OrderedMarkerSet:
    rows = _rows(path)
    rows.sort(key=lambda r: int(r["index"]))
    if [int(r["index"]) for r in rows] != list(range(len(rows))):
        raise ValueError(f"{os.fspath(path)}: indices must run 0..{len(rows) - 1}")
    X = np.full((len(rows), 3), np.nan)
    present = np.zeros(len(rows), dtype=bool)
    for i, r in enumerate(rows):
        present[i] = r["present"].strip() in ("1", "true", "True")
        if present[i]:
            X[i] = [float(r["X"]), float(r["Y"]), float(r["Z"])]
    return OrderedMarkerSet(X, present)


def write_backbone_csv(path, path_obj) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "x", "y", "z"] + [f"r{i}{j}" for i in range(3) for j in range(3)])
        for s, R, p in zip(path_obj.s, path_obj.rotations, path_obj.positions):
            w.writerow([repr(float(s)), *(repr(float(v)) for v in p), *(repr(float(v)) for v in R.ravel())])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config_hash: str, seed, started: datetime, extra: dict | None = None) -> dict:
    """Record tool version, config hash, seed, timestamps and every other file in ``out_dir``."""
    out = Path(out_dir)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    manifest = {
        "tool": "cathtrack",
        "version": __version__,
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": [{"path": str(p.relative_to(out)), "bytes": p.stat().st_size, "sha256": file_digest(p)}
                    for p in files],
    }
    if extra:
        manifest.update(extra)
    write_json(out / MANIFEST, manifest)
    return manifest
