import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cathtrack import CatheterPoseEstimator, MarkerSegmenter
from cathtrack.imaging import Blob, ImageParams, render
from cathtrack.kinematics import ModalCoefficients, marker_world_positions
from cathtrack.reconstruction import OrderedMarkerSet
from cathtrack.simulation import default_base_pose
from cathtrack.validation import check_marker_frames, check_order, check_positive

C = ModalCoefficients([0.05, -0.02, 0.01], [0.03, 0.02, -0.015])


def frames(design, n=3, drop=()):
    out = []
    for k in range(n):
        c = ModalCoefficients.from_vector(C.vector * (1 + 0.05 * k))
        X = marker_world_positions(design, c, 0.5 + 0.02 * k, default_base_pose())
        X[[i + 1 for i in drop]] = np.nan
        out.append(X)
    return np.array(out)


def test_params_and_clone(design):
    est = CatheterPoseEstimator(design=design, order=2, warm_start=True)
    p = est.get_params()
    assert p["order"] == 2 and p["warm_start"] is True
    twin = clone(est)
    assert twin.get_params()["order"] == 2 and not hasattr(twin, "coef_")
    est.set_params(order=4)
    assert est.order == 4


def test_fit_predict_score(design):
    X = frames(design)
    est = CatheterPoseEstimator(design=design).fit(X)
    assert est.coef_.shape == (3, 6) and est.roll_.shape == (3,) and est.n_frames_ == 3
    np.testing.assert_allclose(est.coef_[0], C.vector, atol=1e-5)
    P = est.predict()
    assert P.shape == X.shape
    np.testing.assert_allclose(P, X, atol=1e-4)
    assert -1e-4 < est.score() <= 0
    Z = est.transform(X[:1])
    assert Z.shape == (1, 7)
    np.testing.assert_allclose(est.fit_transform(X)[:, -1], est.roll_)
    assert len(est.backbone(0)) == 101


def test_warm_start_tracks_sequence(design):
    X = frames(design, n=4)
    cold = CatheterPoseEstimator(design=design).fit(X)
    warm = CatheterPoseEstimator(design=design, warm_start=True, damping=1e-6).fit(X)
    np.testing.assert_allclose(warm.coef_, cold.coef_, atol=1e-3)
    assert len(warm.tracker_) == 4


def test_accepts_marker_sets_with_missing(design):
    X = frames(design, n=1, drop=(4, 5, 6))[0]
    est = CatheterPoseEstimator(design=design).fit(OrderedMarkerSet.from_array(X))
    assert est.n_frames_ == 1
    assert np.isfinite(est.score())


def test_not_fitted_and_bad_params(design):
    with pytest.raises(NotFittedError):
        CatheterPoseEstimator(design=design).predict()
    with pytest.raises(ValueError):
        CatheterPoseEstimator().fit(frames(design))
    with pytest.raises(ValueError):
        CatheterPoseEstimator(design=design, order=0).fit(frames(design))
    with pytest.raises(ValueError):
        CatheterPoseEstimator(design=design, tip_weight=-1.0).fit(frames(design))
    with pytest.raises(ValueError):
        CatheterPoseEstimator(design=design).fit(np.zeros((2, 5, 3)))


def test_validation_helpers(design):
    assert check_positive(2, "x") == 2.0
    with pytest.raises(ValueError):
        check_positive(0, "x")
    assert check_positive(0, "x", allow_zero=True) == 0.0
    with pytest.raises(ValueError):
        check_positive(float("nan"), "x")
    with pytest.raises(ValueError):
        check_order(True)
    assert len(check_marker_frames(frames(design, 2)[0])) == 1
    with pytest.raises(ValueError):
        check_marker_frames(np.zeros((3,)))


def test_segmenter(design):
    img = render([Blob((0.0, 0.0), 1.0), Blob((3.0, 1.0), 1.0)], ImageParams(96, 96), 0.1)
    seg = MarkerSegmenter().fit()
    out = seg.transform(img)
    assert len(out) == 1 and len(out[0]) == 2
    out = seg.transform([img.data, img.data])
    assert len(out) == 2
    with pytest.raises(NotFittedError):
        MarkerSegmenter().transform(img)
    assert clone(MarkerSegmenter(thresh=40)).get_params()["thresh"] == 40
