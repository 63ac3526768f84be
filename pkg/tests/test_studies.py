import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cathtrack.kinematics import BackbonePath, ModalCoefficients, propagate, tip_bend_angle
from cathtrack.studies import (
    StudyConfig, WorkspaceBounds, roll_error, run_study, sample_configuration, shape_error, study_designs,
    total_bend, twist_angles,
)


def test_sampling_is_deterministic():
    a = sample_configuration(np.random.default_rng(4), WorkspaceBounds(), 3)
    b = sample_configuration(np.random.default_rng(4), WorkspaceBounds(), 3)
    assert a[0] == b[0] and a[1] == b[1]


def test_zero_bound_gives_straight():
    c, roll = sample_configuration(np.random.default_rng(0), WorkspaceBounds(max_bend=0.0), 3)
    assert np.all(c.vector == 0) and -math.pi <= roll <= math.pi


def test_samples_respect_bend_limit():
    rng = np.random.default_rng(1)
    limit = math.pi / 2
    for _ in range(1000):
        c, _ = sample_configuration(rng, WorkspaceBounds(max_bend=limit), 3)
        assert total_bend(c.vector, 25.0) <= limit
    # tangent turning never exceeds the integrated bend
    path = propagate(c, length=25.0)
    assert tip_bend_angle(path) <= total_bend(c.vector, 25.0) + 1e-3


def test_total_bend_constant_curvature():
    assert total_bend([0.1, 0, 0, 0, 0, 0], 25.0) == pytest.approx(2.5)
    assert total_bend([0.0, 0, 0, 0.1, 0, 0], 10.0) == pytest.approx(1.0)


def test_shape_error_examples():
    path = propagate(ModalCoefficients.zeros(3), length=25.0)
    shifted = BackbonePath(path.s, path.rotations, path.positions + [1.0, 0.0, 0.0])
    assert shape_error(path, path) == 0.0
    assert shape_error(shifted, path) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        shape_error(propagate(ModalCoefficients.zeros(3), length=25.0, step=1.0), path)


def test_roll_error_examples():
    path = propagate(ModalCoefficients([0.05, 0.01, 0.0], [0.02, 0.0, -0.01]), length=25.0)
    assert roll_error(path, path) == pytest.approx(0.0, abs=1e-12)
    assert roll_error(path.rolled(math.radians(10)), path) == pytest.approx(10.0)
    assert roll_error(path.rolled(math.radians(-170)), path) == pytest.approx(170.0)


def test_twist_matches_quaternion_swing_twist():
    Ra = Rotation.random(200, random_state=7).as_matrix()
    Rb = Rotation.random(200, random_state=8).as_matrix()
    a = BackbonePath(np.arange(200.0), Ra, np.zeros((200, 3)))
    b = BackbonePath(np.arange(200.0), Rb, np.zeros((200, 3)))
    q = Rotation.from_matrix(np.einsum("kji,kjl->kil", Rb, Ra)).as_quat()  # x, y, z, w
    ref = 2 * np.arctan2(q[:, 2], q[:, 3])
    wrap = lambda v: np.mod(v + np.pi, 2 * np.pi) - np.pi
    got = twist_angles(a, b)
    np.testing.assert_allclose(np.cos(got - ref), 1.0, atol=1e-12)
    assert np.all(np.abs(wrap(got)) <= np.pi)


def test_study_designs_spacing_endpoints():
    cfg = StudyConfig(kind="spacing")
    xs = [x for x, _ in study_designs(cfg)]
    assert len(xs) == 15
    assert all(a > b for a, b in zip(xs, xs[1:]))
    assert xs[-1] == pytest.approx(1.5, abs=0.05)
    cfg = StudyConfig(kind="slenderness")
    xs = [x for x, _ in study_designs(cfg)]
    assert min(xs) == pytest.approx(6.25) and max(xs) == pytest.approx(125.0)


def test_config_validation():
    with pytest.raises(ValueError):
        StudyConfig(kind="bogus")
    with pytest.raises(ValueError):
        StudyConfig(configurations=0)
    cfg = StudyConfig(kind="spacing", designs=(5, 9))
    assert StudyConfig.from_dict(cfg.to_dict()) == cfg


def test_job_count_does_not_change_results():
    cfg = StudyConfig(kind="dropped", configurations=3, orders=(2, 3), markers=9, seed=5)
    a, b = run_study(cfg, jobs=1), run_study(cfg, jobs=2)
    assert a.trial_rows() == b.trial_rows()
    assert a.table == b.table


def test_noiseless_study_is_exact():
    cfg = StudyConfig(kind="dropped", configurations=4, noise=0.0, orders=(3,), seed=2)
    res = run_study(cfg)
    assert all(t.ok for t in res.trials)
    assert max(t.shape_error for t in res.trials) < 1e-3
    assert max(t.roll_error for t in res.trials) < 1e-2
    assert math.isinf(res.points[0].x)
    json.dumps(res.summary())  # inf and NaN are mapped to null


def test_dropped_case_counts():
    cfg = StudyConfig(kind="dropped", configurations=5, orders=(3,), seed=3)
    res = run_study(cfg)
    drops = [t.n_dropped for t in res.trials if t.case == "dropped"]
    assert len(drops) == 5 and all(1 <= k <= 9 for k in drops)
    header, rows = res.plot_rows()
    assert header[:3] == ["order", "case", "x"] and len(rows) == 2
