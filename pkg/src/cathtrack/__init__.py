"""Biplane fluoroscopy shape and roll tracking of marker-equipped catheters, in simulation."""

__version__ = "0.1.0"

from .api import CatheterPoseEstimator, MarkerSegmenter
from .biplane import BiplaneGeometry, NoiseModel, epipolar_distance, perturb, project_point, triangulate
from .design import CatheterDesign, HelixSpec, build_helical_design, helix_for_turns, marker_spacing, spacing_factor
from .estimator import EstimatorConfig, PoseEstimate, estimate, solve_roll, solve_shape
from .imaging import GrayImage, MarkerDetections, SegmentationParams, classify, render_biplane, segment
from .kinematics import BackbonePath, ModalCoefficients, chebyshev_basis, marker_world_positions, propagate
from .reconstruction import OrderedMarkerSet, PlanarMarkers, reconstruct_markers
from .simulation import simulate_scene
from .studies import StudyConfig, run_study

__all__ = [
    "BackbonePath", "BiplaneGeometry", "CatheterDesign", "CatheterPoseEstimator", "EstimatorConfig",
    "GrayImage", "HelixSpec", "MarkerDetections", "MarkerSegmenter", "ModalCoefficients", "NoiseModel",
    "OrderedMarkerSet", "PlanarMarkers", "PoseEstimate", "SegmentationParams", "StudyConfig",
    "build_helical_design", "chebyshev_basis", "classify", "epipolar_distance", "estimate", "helix_for_turns",
    "marker_spacing", "marker_world_positions", "perturb", "project_point", "propagate", "reconstruct_markers",
    "render_biplane", "run_study", "segment", "simulate_scene", "solve_roll", "solve_shape", "spacing_factor",
    "triangulate",
]
