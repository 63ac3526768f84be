"""Run configuration: one YAML document with a section per component.

Sections (all optional)::

    design:      length, radius, and either n + turns, n + helix {pitch, spacing, start},
                 or explicit arc_lengths + angles; base_offset, band_width, marker_diameter
    geometry:    preset: canonical | front_rotation + side_rotation; pixel_scale
    noise:       front, side (max planar uncertainty, mm)
    pose:        cx, cy, roll (radians) for a fixed configuration, or max_bend for a random one
    estimator:   EstimatorConfig fields
    imaging:     ImageParams fields
    segmentation: SegmentationParams fields
    study:       StudyConfig fields
    seed:        master seed

Environment variables ``CATHTRACK_<SECTION>__<FIELD>`` override file values;
``CATHTRACK_SEED`` overrides the seed. Values are parsed as YAML scalars.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import yaml

from .biplane import BiplaneGeometry, NoiseModel
from .design import CatheterDesign, HelixSpec, build_helical_design, helix_for_turns
from .estimator import EstimatorConfig
from .imaging import ImageParams, SegmentationParams
from .studies import StudyConfig

ENV_PREFIX = "CATHTRACK_"
SECTIONS = ("design", "geometry", "noise", "pose", "estimator", "imaging", "segmentation", "study")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def default_design() -> CatheterDesign:
    return build_helical_design(25.0, 1.0, 19, helix_for_turns(25.0, 19, 2.0))


def _design_from(d: dict) -> CatheterDesign:
    d = dict(d)
    if "turns" in d:
        if "n" not in d:
            raise ConfigError("design.n", "required with turns")
        length, n = float(d.pop("length", 25.0)), int(d.pop("n"))
        helix = helix_for_turns(length, n, float(d.pop("turns")), float(d.pop("start", 0.0)))
        return build_helical_design(length, float(d.pop("radius", 1.0)), n, helix, **d)
    if "helix" in d:
        h = d.pop("helix")
        return build_helical_design(float(d.pop("length", 25.0)), float(d.pop("radius", 1.0)),
                                    int(d.pop("n")), HelixSpec(**h), **d)
    return CatheterDesign(**d)


def _section(name: str, build, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(name, f"expected a mapping, got {type(data).__name__}")
    try:
        return build(data)
    except ConfigError:
        raise
    except TypeError as exc:
        # unknown or missing keyword from a dataclass constructor
        raise ConfigError(name, str(exc).split(") ", 1)[-1]) from exc
    except (ValueError, KeyError) as exc:
        raise ConfigError(name, str(exc)) from exc


@dataclass(frozen=True)
class Pose:
    """Fixed ``cx, cy, roll`` or, when ``cx`` is empty, a random draw bounded by ``max_bend``."""

    cx: tuple = ()
    cy: tuple = ()
    roll: float = 0.0
    max_bend: float = math.pi
    order: int = 3

    def __post_init__(self):
        if len(self.cx) != len(self.cy):
            raise ValueError("cx and cy must have equal length")
        if self.max_bend < 0:
            raise ValueError("max_bend must be non-negative")

    @property
    def random(self) -> bool:
        return len(self.cx) == 0


@dataclass
class RunConfig:
    design: CatheterDesign = field(default_factory=default_design)
    geometry: BiplaneGeometry = field(default_factory=BiplaneGeometry.canonical)
    noise: NoiseModel = field(default_factory=NoiseModel)
    pose: Pose = field(default_factory=Pose)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    imaging: ImageParams = field(default_factory=ImageParams)
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    study: StudyConfig = field(default_factory=StudyConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        seg = asdict(self.segmentation)
        seg["area_range"] = list(seg["area_range"])
        pose = asdict(self.pose)
        pose["cx"], pose["cy"] = list(pose["cx"]), list(pose["cy"])
        return {
            "seed": int(self.seed),
            "design": self.design.to_dict(),
            "geometry": self.geometry.to_dict(),
            "noise": {"front": float(self.noise.front), "side": float(self.noise.side)},
            "pose": pose,
            "estimator": self.estimator.to_dict(),
            "imaging": asdict(self.imaging),
            "segmentation": seg,
            "study": self.study.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        seed = d.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")

        def noise(x):
            return NoiseModel(float(x.get("front", 0.5)), float(x.get("side", 0.5)), seed)

        def pose(x):
            x = dict(x)
            for k in ("cx", "cy"):
                x[k] = tuple(float(v) for v in x.get(k, ()))
            return Pose(**x)

        def seg(x):
            x = dict(x)
            if "area_range" in x:
                x["area_range"] = tuple(float(v) for v in x["area_range"])
            return SegmentationParams(**x)

        return cls(
            design=_section("design", lambda x: _design_from(x) if x else default_design(), d.get("design")),
            geometry=_section("geometry", lambda x: BiplaneGeometry.from_dict(x) if x else BiplaneGeometry.canonical(),
                              d.get("geometry")),
            noise=_section("noise", noise, d.get("noise")),
            pose=_section("pose", pose, d.get("pose")),
            estimator=_section("estimator", EstimatorConfig.from_dict, d.get("estimator")),
            imaging=_section("imaging", lambda x: ImageParams(**x), d.get("imaging")),
            segmentation=_section("segmentation", seg, d.get("segmentation")),
            study=_section("study", StudyConfig.from_dict, d.get("study")),
            seed=seed,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed), noise=replace(self.noise, seed=int(seed)),
                       study=replace(self.study, seed=int(seed)))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"invalid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("<document>", "top level must be a mapping")
    return RunConfig.from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def env_overrides(environ=None) -> dict:
    """Nested dict of ``CATHTRACK_<SECTION>__<FIELD>`` overrides."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        value = yaml.safe_load(raw) if raw != "" else None
        if rest == "seed":
            out["seed"] = value
        elif "__" in rest:
            section, name = rest.split("__", 1)
            if section in SECTIONS:
                out.setdefault(section, {})[name] = value
    return out


def merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = merge(out.get(k) or {}, v) if isinstance(v, dict) else v
    return out


def load_config(path=None, environ=None) -> RunConfig:
    """File (if any) overlaid with environment overrides."""
    data: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<document>", f"invalid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("<document>", "top level must be a mapping")
    env = env_overrides(environ)
    if env:
        # env values refine the file's normalized form so partial overrides keep other fields
        data = merge(RunConfig.from_dict(data).to_dict(), env)
    return RunConfig.from_dict(data)
