"""Flat key-value configuration with dotted group names.

The on-disk dialect is one ``group.key = value`` assignment per line,
``#`` comments, blank lines ignored.  Values are parsed by the declared
field type; unknown keys are rejected.  ``serialize`` writes every key
back in canonical order with round-trip-exact number formatting, so
parse → serialize → parse is the identity.

A handful of defaults derive from other parameters (a negative sentinel
in the file means "derive"): the minimum significant basin area follows
the gravity radius, and the tracklet area bounds follow the basin area.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .basins import IntegratorConfig
from .errors import ConfigError, GravicellError
from .preprocess import ClaheParams, KuwaharaParams
from .segmentation import SegParams
from .tracking import TrackParams

_DERIVED = -1.0


@dataclass
class PreprocessConfig:
    log_gain: float = 10.0
    kuwahara_radius: int = 2
    kuwahara_sectors: int = 8
    kuwahara_sharpness: float = 8.0
    kuwahara_tensor_sigma: float = 2.0
    clahe_tile: int = 64
    clahe_clip: float = 0.01


@dataclass
class GravityConfig:
    radius: int = 20
    softening_eps: float = 0.5


@dataclass
class IntegratorGroupConfig:
    tol: float = 1e-3
    h_init: float = 0.5
    h_min: float = 1e-3
    h_max: float = 2.0
    max_steps: int = 10000


@dataclass
class BasinsConfig:
    min_area: float = _DERIVED  # derived: pi * (gravity.radius/2)^2
    stagnation_tol: float = 1e-6


@dataclass
class SegConfig:
    contrast_delta: float = 0.15
    cv_iterations: int = 50
    cv_smoothness_mu: float = 0.2
    h_maxima_h: float = 2.0
    min_seed_separation: float = 5.0


@dataclass
class TrackConfig:
    match_min_fraction: float = 0.2
    contrast_accept_ratio: float = 0.5
    area_lower: float = _DERIVED  # derived: basins.min_area / 4
    area_upper: float = _DERIVED  # derived: basins.min_area
    min_contrast: float = 0.05


@dataclass
class IoConfig:
    input: str = ""
    output: str = ""
    threads: int = 1


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    gravity: GravityConfig = field(default_factory=GravityConfig)
    integrator: IntegratorGroupConfig = field(default_factory=IntegratorGroupConfig)
    basins: BasinsConfig = field(default_factory=BasinsConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    io: IoConfig = field(default_factory=IoConfig)

    # ---- derived values -------------------------------------------------
    def basin_min_area(self) -> float:
        if self.basins.min_area >= 0:
            return self.basins.min_area
        return math.pi * (self.gravity.radius / 2.0) ** 2

    def track_area_lower(self) -> float:
        if self.track.area_lower >= 0:
            return self.track.area_lower
        return self.basin_min_area() / 4.0

    def track_area_upper(self) -> float:
        if self.track.area_upper >= 0:
            return self.track.area_upper
        return self.basin_min_area()

    # ---- typed parameter-object views ----------------------------------
    def kuwahara_params(self) -> KuwaharaParams:
        return KuwaharaParams(
            radius=self.preprocess.kuwahara_radius,
            sector_count=self.preprocess.kuwahara_sectors,
            sharpness_q=self.preprocess.kuwahara_sharpness,
            tensor_smoothing_sigma=self.preprocess.kuwahara_tensor_sigma,
        )

    def clahe_params(self) -> ClaheParams:
        return ClaheParams(
            tile_size=self.preprocess.clahe_tile, clip_limit=self.preprocess.clahe_clip
        )

    def integrator_config(self) -> IntegratorConfig:
        g = self.integrator
        return IntegratorConfig(
            tol=g.tol, h_init=g.h_init, h_min=g.h_min, h_max=g.h_max, max_steps=g.max_steps
        )

    def seg_params(self) -> SegParams:
        s = self.seg
        return SegParams(
            contrast_delta=s.contrast_delta,
            cv_iterations=s.cv_iterations,
            cv_smoothness_mu=s.cv_smoothness_mu,
            h_maxima_h=s.h_maxima_h,
            min_seed_separation=s.min_seed_separation,
        )

    def track_params(self) -> TrackParams:
        return TrackParams(
            match_min_fraction=self.track.match_min_fraction,
            contrast_accept_ratio=self.track.contrast_accept_ratio,
        )

    def validate(self) -> "PipelineConfig":
        """Build every derived parameter object once, to surface range errors."""
        try:
            self.kuwahara_params()
            self.clahe_params()
            self.integrator_config()
            self.seg_params()
            self.track_params()
            if self.preprocess.log_gain <= 0:
                raise ConfigError(f"preprocess.log_gain must be > 0, got {self.preprocess.log_gain}")
            if self.gravity.radius < 1:
                raise ConfigError(f"gravity.radius must be >= 1, got {self.gravity.radius}")
            if self.gravity.softening_eps <= 0:
                raise ConfigError(
                    f"gravity.softening_eps must be > 0, got {self.gravity.softening_eps}"
                )
            if self.basins.stagnation_tol <= 0:
                raise ConfigError(
                    f"basins.stagnation_tol must be > 0, got {self.basins.stagnation_tol}"
                )
            if self.track.min_contrast < 0:
                raise ConfigError(f"track.min_contrast must be >= 0, got {self.track.min_contrast}")
            if self.io.threads < 1:
                raise ConfigError(f"io.threads must be >= 1, got {self.io.threads}")
            if self.track_area_lower() > self.track_area_upper():
                raise ConfigError(
                    f"track.area_lower {self.track_area_lower()} exceeds "
                    f"track.area_upper {self.track_area_upper()}"
                )
        except ConfigError:
            raise
        except GravicellError as exc:
            raise ConfigError(str(exc)) from exc
        return self


_GROUPS = ("preprocess", "gravity", "integrator", "basins", "seg", "track", "io")


def _coerce(raw: str, typ: type, key: str):
    raw = raw.strip()
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} is not a {typ.__name__}") from exc
    raise ConfigError(f"unsupported config type for {key}")


def parse_config(text: str) -> PipelineConfig:
    cfg = PipelineConfig()
    known = {
        f"{group}.{f.name}": (group, f.name, f.type)
        for group in _GROUPS
        for f in fields(getattr(cfg, group))
    }
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        group, name, typ = known[key]
        if isinstance(typ, str):  # from __future__ annotations
            typ = {"int": int, "float": float, "str": str}[typ]
        setattr(getattr(cfg, group), name, _coerce(raw, typ, key))
    return cfg.validate()


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: PipelineConfig) -> str:
    lines = []
    for group in _GROUPS:
        for f in fields(getattr(cfg, group)):
            lines.append(f"{group}.{f.name} = {_format_value(getattr(getattr(cfg, group), f.name))}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
