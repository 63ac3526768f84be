import json

import numpy as np
import pytest

from cathtrack.io import (
    read_detections_csv, read_planar_csv, read_reconstruction_csv, write_backbone_csv, write_detections_csv,
    write_json, write_manifest, write_planar_csv, write_reconstruction_csv,
)
from cathtrack.imaging import MarkerDetections
from cathtrack.kinematics import ModalCoefficients, propagate
from cathtrack.reconstruction import OrderedMarkerSet, PlanarMarkers


def _planar(k):
    rng = np.random.default_rng(k)
    return PlanarMarkers(rng.normal(size=2), rng.normal(size=2), rng.normal(size=2), rng.normal(size=(k, 2)))


def test_planar_roundtrip(tmp_path):
    views = {"front": _planar(4), "side": _planar(3)}
    write_planar_csv(tmp_path / "p.csv", views)
    back = read_planar_csv(tmp_path / "p.csv")
    for pl in views:
        for f in ("base_prime", "base", "tip", "intermediates"):
            np.testing.assert_array_equal(getattr(back[pl], f), getattr(views[pl], f))


def test_planar_missing_band(tmp_path):
    (tmp_path / "p.csv").write_text("id,plane,x_mm,y_mm\nbase,front,0,0\ntip,front,0,1\n")
    with pytest.raises(ValueError, match="base_prime"):
        read_planar_csv(tmp_path / "p.csv")
    (tmp_path / "e.csv").write_text("id,plane,x_mm,y_mm\n")
    with pytest.raises(ValueError):
        read_planar_csv(tmp_path / "e.csv")


def test_detections_roundtrip(tmp_path):
    det = MarkerDetections([[0, 0], [0, -3], [0, 9], [0.5, 4], [1, 1]], [200, 200, 200, 80, 160],
                           ["base", "base_prime", "tip", "intermediate", "unknown"])
    write_detections_csv(tmp_path / "d.csv", det)
    back = read_detections_csv(tmp_path / "d.csv")
    assert back.labels == det.labels
    np.testing.assert_array_equal(back.centroids, det.centroids)
    pm = read_planar_csv(tmp_path / "d.csv", plane="front")["front"]
    np.testing.assert_array_equal(pm.intermediates, [[0.5, 4]])  # unknown regions dropped
    with pytest.raises(ValueError):
        read_planar_csv(tmp_path / "d.csv")


def test_reconstruction_roundtrip(tmp_path):
    X = np.array([[0, 0, -3], [0, 0, 0], [np.nan] * 3, [1, 0, 5], [0, 0, 10.0]])
    m = OrderedMarkerSet.from_array(X)
    write_reconstruction_csv(tmp_path / "r.csv", m)
    back = read_reconstruction_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.present, m.present)
    np.testing.assert_array_equal(back.positions[m.present], m.positions[m.present])


def test_backbone_csv(tmp_path):
    path = propagate(ModalCoefficients([0.02], [0.01]), length=10.0)
    write_backbone_csv(tmp_path / "b.csv", path)
    A = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    assert A.shape == (len(path), 13)
    np.testing.assert_array_equal(A[:, 1:4], path.positions)
    np.testing.assert_array_equal(A[:, 4:].reshape(-1, 3, 3), path.rotations)


def test_manifest_lists_outputs(tmp_path):
    from datetime import datetime, timezone

    write_json(tmp_path / "a.json", {"x": np.float64(1.5), "v": np.arange(3)})
    m = write_manifest(tmp_path, "simulate", "abc", 3, datetime.now(timezone.utc), {"status": "ok"})
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == m
    assert [o["path"] for o in m["outputs"]] == ["a.json"]
    assert len(m["outputs"][0]["sha256"]) == 64 and m["seed"] == 3 and m["status"] == "ok"
