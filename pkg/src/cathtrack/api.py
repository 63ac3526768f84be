"""Estimator-style wrappers over the tracking pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .estimator import EstimatorConfig, PriorTracker, estimate
from .imaging import GrayImage, SegmentationParams, classify, segment
from .kinematics import marker_world_positions
from .validation import check_design, check_marker_frames, check_order, check_positive


class CatheterPoseEstimator(BaseEstimator):
    """Fit modal shape coefficients and roll to reconstructed marker frames.

    ``fit`` estimates every frame of ``X`` (see
    :func:`~cathtrack.validation.check_marker_frames` for accepted inputs).
    With ``warm_start=True`` each frame starts from the previous solution and
    is damped towards the moving average of the last ``window`` estimates.

    After fitting, ``coef_`` has shape (frames, 2 * order), ``roll_`` (frames,)
    and ``estimates_`` holds the full :class:`~cathtrack.estimator.PoseEstimate`
    objects.
    """

    def __init__(self, design=None, order: int = 3, tip_weight: float = 10.0,
                 intermediate_weight: float = 1.0, damping: float = 1e-3, warm_start: bool = False,
                 window: int = 5, max_outer_iter: int = 50, step: float | None = None):
        self.design = design
        self.order = order
        self.tip_weight = tip_weight
        self.intermediate_weight = intermediate_weight
        self.damping = damping
        self.warm_start = warm_start
        self.window = window
        self.max_outer_iter = max_outer_iter
        self.step = step

    def _config(self) -> EstimatorConfig:
        return EstimatorConfig(order=check_order(self.order), tip_weight=check_positive(self.tip_weight, "tip_weight"),
                               intermediate_weight=check_positive(self.intermediate_weight, "intermediate_weight"),
                               max_outer_iter=check_order(self.max_outer_iter), step=self.step)

    def _run(self, frames, design, cfg, tracker, last):
        out = []
        for f in frames:
            if self.warm_start and last is not None:
                fcfg = tracker.configure(cfg, check_positive(self.damping, "damping", allow_zero=True))
                est = estimate(f, design, fcfg, c0=last.coefficients, roll0=last.roll)
            else:
                est = estimate(f, design, cfg)
            tracker.update(est)
            last = est
            out.append(est)
        return out

    def fit(self, X, y=None):
        if self.design is None:
            raise ValueError("design is required")
        design = check_design(self.design)
        frames = check_marker_frames(X, design)
        cfg = self._config()
        self.tracker_ = PriorTracker(self.window)
        self.design_ = design
        self.frames_ = frames
        self.estimates_ = self._run(frames, design, cfg, self.tracker_, None)
        self.coef_ = np.array([e.coefficients.vector for e in self.estimates_])
        self.roll_ = np.array([e.roll for e in self.estimates_])
        self.n_frames_ = len(frames)
        return self

    def _check_fitted(self):
        if not hasattr(self, "estimates_"):
            raise NotFittedError("call fit before using this estimator")

    def _estimate_new(self, X) -> tuple:
        self._check_fitted()
        frames = check_marker_frames(X, self.design_)
        last = self.estimates_[-1] if self.estimates_ else None
        return frames, self._run(frames, self.design_, self._config(), self.tracker_, last)

    def transform(self, X) -> np.ndarray:
        """Estimate new frames; rows are ``[cx..., cy..., roll]``.

        With ``warm_start`` the first new frame continues from the last fitted one.
        """
        _, ests = self._estimate_new(X)
        return np.array([np.append(e.coefficients.vector, e.roll) for e in ests])

    def fit_transform(self, X, y=None) -> np.ndarray:
        self.fit(X)
        return np.column_stack([self.coef_, self.roll_])

    def _model(self, ests) -> np.ndarray:
        return np.array([marker_world_positions(self.design_, e.coefficients, e.roll, e.base_pose, self.step)
                         for e in ests])

    def predict(self, X=None) -> np.ndarray:
        """Model marker positions, (frames, n + 3, 3), for the fitted frames or for new ``X``."""
        self._check_fitted()
        ests = self.estimates_ if X is None else self._estimate_new(X)[1]
        return self._model(ests)

    def score(self, X=None, y=None) -> float:
        """Negative RMS distance between measured and modelled markers (higher is better)."""
        self._check_fitted()
        if X is None:
            frames, ests = self.frames_, self.estimates_
        else:
            frames, ests = self._estimate_new(X)
        d = np.concatenate([np.linalg.norm(f.positions[f.present] - p[f.present], axis=1)
                            for f, p in zip(frames, self._model(ests))])
        return -float(np.sqrt(np.mean(d * d)))

    def backbone(self, frame: int = -1, step: float | None = None):
        """Material frames (estimated roll applied) of one fitted frame."""
        self._check_fitted()
        return self.estimates_[frame].material_frames(step)


class MarkerSegmenter(BaseEstimator, TransformerMixin):
    """Images to labelled marker detections.

    ``transform`` takes a :class:`~cathtrack.imaging.GrayImage`, a 2-D uint8
    array or a list of either and returns a list of detections. Labelling
    runs only when ``design`` is set.
    """

    def __init__(self, thresh: float = 60.0, bg_intensity: float | None = None,
                 area_range: tuple = (20.0, 5000.0), stability_delta: float = 10.0,
                 max_variation: float = 0.5, pixel_scale: float = 0.1, design=None):
        self.thresh = thresh
        self.bg_intensity = bg_intensity
        self.area_range = area_range
        self.stability_delta = stability_delta
        self.max_variation = max_variation
        self.pixel_scale = pixel_scale
        self.design = design

    def fit(self, X=None, y=None):
        self.params_ = SegmentationParams(self.thresh, self.bg_intensity, tuple(self.area_range),
                                          self.stability_delta, self.max_variation)
        self.design_ = None if self.design is None else check_design(self.design)
        return self

    def transform(self, X) -> list:
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before transform")
        single = isinstance(X, GrayImage) or (isinstance(X, np.ndarray) and X.ndim == 2)
        items = [X] if single else list(X)
        out = []
        for im in items:
            img = im if isinstance(im, GrayImage) else GrayImage(np.asarray(im), self.pixel_scale)
            det = segment(img, self.params_)
            if self.design_ is not None:
                det = classify(det, self.design_, pixel_scale=img.pixel_scale)
            out.append(det)
        return out
