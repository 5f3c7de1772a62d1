"""Synthetic fluorescence sequences with exact ground truth.

Gaussian blobs drift at constant velocity, bouncing off the frame
border; an optional mitosis event swaps one blob for two diverging
children.  Placement and velocities are rejection-sampled so blobs stay
well separated for the whole sequence, which keeps the ground truth
unambiguous.  Everything is deterministic in the seed.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .imaging import save_frame_u16, save_labels

_PLACEMENT_TRIES = 4000
_VELOCITY_TRIES = 500
_CHILD_RADIUS_FACTOR = 0.75
_CHILD_SPLIT_SPEED = 1.0


@dataclass(frozen=True)
class SynthSpec:
    frame_count: int = 20
    height: int = 256
    width: int = 256
    blob_count: int = 10
    radius_min: float = 14.0
    radius_max: float = 20.0
    speed_max: float = 2.0
    noise_sigma: float = 0.05
    peak: float = 0.8
    background: float = 0.05
    mitosis_frame: int = -1  # -1 disables; otherwise the frame the children appear
    mitosis_parent: int = 1  # GT label of the dividing blob
    seed: int = 0

    def __post_init__(self) -> None:
        if self.frame_count < 1:
            raise ParameterError(f"frame_count must be >= 1, got {self.frame_count}")
        if self.blob_count < 1:
            raise ParameterError(f"blob_count must be >= 1, got {self.blob_count}")
        if not 0 < self.radius_min <= self.radius_max:
            raise ParameterError(
                f"need 0 < radius_min <= radius_max, got {self.radius_min}, {self.radius_max}"
            )
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.mitosis_frame >= 0 and not 0 < self.mitosis_frame < self.frame_count:
            raise ParameterError(
                f"mitosis_frame must fall inside the sequence, got {self.mitosis_frame}"
            )
        if self.mitosis_frame >= 0 and not 1 <= self.mitosis_parent <= self.blob_count:
            raise ParameterError(f"mitosis_parent out of range: {self.mitosis_parent}")


@dataclass
class SynthResult:
    """Frames plus ground truth: label maps, track table, per-frame centers."""

    frames: list[np.ndarray]
    gt_masks: list[np.ndarray]
    tracks: list[tuple[int, int, int, int]]  # (label, begin, end, parent)
    centers: dict[int, dict[int, tuple[float, float]]] = field(default_factory=dict)
    radii: dict[int, float] = field(default_factory=dict)


def _reflect(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    pos += vel
    while pos < lo or pos > hi:
        if pos < lo:
            pos = 2.0 * lo - pos
        else:
            pos = 2.0 * hi - pos
        vel = -vel
    return pos, vel


class _Body:
    __slots__ = ("label", "radius", "x", "y", "vx", "vy", "begin", "end", "parent")

    def __init__(self, label, radius, x, y, vx, vy, begin, parent=0):
        self.label = label
        self.radius = radius
        self.x, self.y = x, y
        self.vx, self.vy = vx, vy
        self.begin = begin
        self.end = begin
        self.parent = parent


def _simulate(spec: SynthSpec, pos0, vel, radii, child_dir):
    """Run the bouncing-blob dynamics; returns per-frame body snapshots.

    ``child_dir`` is the unit direction along which mitosis children
    separate.  Returns None if any two concurrently live bodies come
    closer than 1.5x the sum of their radii (the ground truth would
    stop being unambiguous), signaling the caller to resample.
    """
    bodies: list[_Body] = [
        _Body(i + 1, radii[i], pos0[i, 0], pos0[i, 1], vel[i, 0], vel[i, 1], 0)
        for i in range(spec.blob_count)
    ]
    next_label = spec.blob_count + 1
    retired: list[_Body] = []
    snapshots: list[list[tuple[int, float, float, float]]] = []
    for t in range(spec.frame_count):
        if t > 0:
            for b in bodies:
                lo_x, hi_x = b.radius + 2.0, spec.width - b.radius - 3.0
                lo_y, hi_y = b.radius + 2.0, spec.height - b.radius - 3.0
                b.x, b.vx = _reflect(b.x, b.vx, lo_x, hi_x)
                b.y, b.vy = _reflect(b.y, b.vy, lo_y, hi_y)
        if t == spec.mitosis_frame:
            parent = next(b for b in bodies if b.label == spec.mitosis_parent)
            bodies.remove(parent)
            retired.append(parent)
            r_child = parent.radius * _CHILD_RADIUS_FACTOR
            dx, dy = child_dir
            for sign in (1.0, -1.0):
                child = _Body(
                    next_label,
                    r_child,
                    parent.x + sign * dx * r_child,
                    parent.y + sign * dy * r_child,
                    parent.vx + sign * dx * _CHILD_SPLIT_SPEED,
                    parent.vy + sign * dy * _CHILD_SPLIT_SPEED,
                    t,
                    parent=parent.label,
                )
                bodies.append(child)
                next_label += 1
        for b in bodies:
            b.end = t
        for i, a in enumerate(bodies):
            for b in bodies[i + 1 :]:
                if a.parent == b.parent and a.parent != 0:
                    continue  # siblings start overlapping by construction
                if np.hypot(a.x - b.x, a.y - b.y) < 1.5 * (a.radius + b.radius):
                    return None, None
        snapshots.append([(b.label, b.x, b.y, b.radius) for b in bodies])
    track_rows = {}
    for b in bodies + retired:
        track_rows[b.label] = (b.label, b.begin, b.end, b.parent)
    return snapshots, track_rows


def generate(spec: SynthSpec) -> SynthResult:
    """Build the full sequence for ``spec`` (see module docstring)."""
    rng = np.random.default_rng(spec.seed)
    radii = rng.uniform(spec.radius_min, spec.radius_max, spec.blob_count)
    min_sep = 3.0 * spec.radius_max

    pos0 = np.empty((spec.blob_count, 2))
    placed = 0
    for _ in range(_PLACEMENT_TRIES):
        if placed == spec.blob_count:
            break
        r = radii[placed]
        cand = np.array(
            [
                rng.uniform(r + 2.0, spec.width - r - 3.0),
                rng.uniform(r + 2.0, spec.height - r - 3.0),
            ]
        )
        if placed == 0 or np.hypot(*(pos0[:placed] - cand).T).min() >= min_sep:
            pos0[placed] = cand
            placed += 1
    if placed < spec.blob_count:
        raise DataError(
            f"could not place {spec.blob_count} blobs with separation {min_sep:.0f} "
            f"in a {spec.width}x{spec.height} frame"
        )

    snapshots = track_rows = None
    for _ in range(_VELOCITY_TRIES):
        vel = rng.uniform(-spec.speed_max, spec.speed_max, (spec.blob_count, 2))
        ang = rng.uniform(0.0, 2.0 * np.pi)
        snapshots, track_rows = _simulate(
            spec, pos0, vel, radii, (np.cos(ang), np.sin(ang))
        )
        if snapshots is not None:
            break
    if snapshots is None:
        raise DataError("could not find non-colliding trajectories; slow the blobs down")

    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    frames: list[np.ndarray] = []
    gt_masks: list[np.ndarray] = []
    centers: dict[int, dict[int, tuple[float, float]]] = {}
    radii_out: dict[int, float] = {}
    for t, snap in enumerate(snapshots):
        img = np.full((spec.height, spec.width), spec.background)
        labmap = np.zeros((spec.height, spec.width), dtype=np.uint16)
        for label, x, y, r in snap:
            d2 = (xx - x) ** 2 + (yy - y) ** 2
            sigma = r / 2.0
            img += spec.peak * np.exp(-d2 / (2.0 * sigma * sigma))
            labmap[d2 <= r * r] = label
            centers.setdefault(label, {})[t] = (x, y)
            radii_out[label] = r
        if spec.noise_sigma > 0:
            img += rng.normal(0.0, spec.noise_sigma, img.shape)
        frames.append(np.clip(img, 0.0, 1.0))
        gt_masks.append(labmap)

    tracks = [track_rows[lab] for lab in sorted(track_rows)]
    return SynthResult(
        frames=frames, gt_masks=gt_masks, tracks=tracks, centers=centers, radii=radii_out
    )


def write_sequence(result: SynthResult, out_dir: str) -> None:
    """Materialize a generated sequence as TIFFs plus a track table.

    Frames land directly in ``out_dir`` (so it can be fed to the run
    command as-is); ground truth goes to an ``out_dir/gt`` subdirectory
    (the eval command's --gt argument).
    """
    gt_dir = os.path.join(out_dir, "gt")
    os.makedirs(gt_dir, exist_ok=True)
    for t, frame in enumerate(result.frames):
        save_frame_u16(os.path.join(out_dir, f"frame{t:03d}.tif"), frame)
        save_labels(os.path.join(gt_dir, f"gt_mask{t:03d}.tif"), result.gt_masks[t])
    with open(os.path.join(gt_dir, "gt_track.txt"), "w", encoding="ascii") as fh:
        for label, begin, end, parent in result.tracks:
            fh.write(f"{label} {begin} {end} {parent}\n")
