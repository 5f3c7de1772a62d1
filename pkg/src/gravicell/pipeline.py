"""End-to-end sequence processing: frames in, tracked masks out.

Per frame: brighten and smooth, compute the attraction field, extract
basins and significant minima, grow/refine/split masks.  Then the
tracking passes link instances over time, the hysteresis filter prunes
weak tracklets, and results land atomically in the output directory.
"""
from __future__ import annotations

import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basins import BasinExtraction, extract_basins, find_critical_points, significant_minima
from .config import PipelineConfig
from .errors import DataError, GravicellError
from .evaluate import EvalReport
from .gravity import ForceField, build_kernels, force_field, potential_field
from .imaging import (
    atomic_write_dir,
    find_frames,
    load_frame,
    normalize,
    save_frame_u16,
    save_labels,
    save_rgb,
)
from .preprocess import kuwahara_anisotropic, log_brighten
from .segmentation import CellMaskSet, segment_frame
from .tracking import (
    TrackGraph,
    filter_tracklets,
    merge_basins,
    track_sequence,
    tracklet_label_map,
    write_track_file,
)

log = logging.getLogger(__name__)


@dataclass
class FrameResult:
    """Everything the tracking stage needs for one frame."""

    log_frame: np.ndarray
    minima_xy: np.ndarray
    extraction: BasinExtraction
    cells: CellMaskSet
    inst_basins: np.ndarray


@dataclass
class StageTimer:
    totals: dict[str, float] = field(default_factory=dict)

    def add(self, stage: str, seconds: float) -> None:
        self.totals[stage] = self.totals.get(stage, 0.0) + seconds


class StageFailure(GravicellError):
    """A pipeline stage failed; carries stage name and frame index."""

    def __init__(self, stage: str, frame_index: int, cause: BaseException):
        super().__init__(f"stage {stage!r} failed on frame {frame_index}: {cause}")
        self.stage = stage
        self.frame_index = frame_index
        self.cause = cause


def detect_frame(
    norm: np.ndarray, cfg: PipelineConfig, timer: StageTimer | None = None
) -> tuple[np.ndarray, np.ndarray, BasinExtraction]:
    """Detection chain for one normalized frame.

    Returns ``(log_frame, minima_xy, extraction)`` — the brightened
    frame (reused by segmentation and tracking), the significant cell
    centers, and the basin map they came from.
    """
    t0 = time.perf_counter()
    log_frame = log_brighten(norm, cfg.preprocess.log_gain)
    smooth = kuwahara_anisotropic(log_frame, cfg.kuwahara_params())
    t1 = time.perf_counter()
    kernels = build_kernels(cfg.gravity.radius, cfg.gravity.softening_eps)
    force = force_field(smooth, kernels)
    points = find_critical_points(force)
    extraction = extract_basins(
        force, points, cfg.integrator_config(), stagnation_tol=cfg.basins.stagnation_tol
    )
    keep = significant_minima(extraction, cfg.basin_min_area())
    minima_xy = (
        extraction.minima[np.asarray(keep, dtype=np.int64) - 1]
        if keep
        else np.empty((0, 2))
    )
    t2 = time.perf_counter()
    if timer is not None:
        timer.add("preprocess", t1 - t0)
        timer.add("detection", t2 - t1)
    return log_frame, minima_xy, extraction


def process_frame(
    norm: np.ndarray, cfg: PipelineConfig, timer: StageTimer | None = None
) -> FrameResult:
    """Detection plus segmentation for one frame."""
    log_frame, minima_xy, extraction = detect_frame(norm, cfg, timer)
    t0 = time.perf_counter()
    cells = segment_frame(log_frame, minima_xy, cfg.seg_params(), cfg.clahe_params())
    inst = merge_basins(extraction, cells)
    t1 = time.perf_counter()
    if timer is not None:
        timer.add("segmentation", t1 - t0)
    return FrameResult(
        log_frame=log_frame,
        minima_xy=minima_xy,
        extraction=extraction,
        cells=cells,
        inst_basins=inst,
    )


def track_frames(
    results: list[FrameResult], cfg: PipelineConfig, timer: StageTimer | None = None
) -> TrackGraph:
    """Run the tracking passes and the hysteresis filter."""
    t0 = time.perf_counter()
    graph = track_sequence(
        [r.cells for r in results],
        [r.inst_basins for r in results],
        [r.log_frame for r in results],
        cfg.seg_params(),
        cfg.track_params(),
    )
    graph = filter_tracklets(
        graph, cfg.track_area_lower(), cfg.track_area_upper(), cfg.track.min_contrast
    )
    if timer is not None:
        timer.add("tracking", time.perf_counter() - t0)
    return graph


def _overlay_image(norm: np.ndarray, label_map: np.ndarray) -> np.ndarray:
    """Gray frame with green instance contours (8-bit RGB)."""
    base = np.clip(norm * 255.0, 0, 255).astype(np.uint8)
    rgb = np.stack([base, base, base], axis=-1)
    edges = np.zeros(label_map.shape, dtype=bool)
    edges[:-1, :] |= label_map[:-1, :] != label_map[1:, :]
    edges[:, :-1] |= label_map[:, :-1] != label_map[:, 1:]
    edges &= label_map > 0
    rgb[edges] = (0, 255, 0)
    return rgb


def run_pipeline(
    input_dir: str | Path,
    output_dir: str | Path,
    cfg: PipelineConfig,
    threads: int = 1,
    overlay: bool = False,
) -> EvalReport:
    """Process a frame directory into tracked masks plus a track table.

    Output (written atomically: a temp directory renamed into place on
    success): ``maskNNN.tif`` per frame with tracklet labels,
    ``res_track.txt``, and optional ``overlayNNN.png``.  The returned
    report carries only the timing section; quality metrics need ground
    truth (see the eval command).
    """
    timer = StageTimer()
    meta = find_frames(input_dir)
    t0 = time.perf_counter()
    norms = []
    for i, path in enumerate(meta.paths):
        try:
            norms.append(normalize(load_frame(path)))
        except GravicellError as exc:
            raise StageFailure("load", i, exc) from exc
    timer.add("io", time.perf_counter() - t0)

    results: list[FrameResult | None] = [None] * len(norms)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(process_frame, norm, cfg): i for i, norm in enumerate(norms)
            }
            for fut, i in futures.items():
                try:
                    results[i] = fut.result()
                except GravicellError as exc:
                    raise StageFailure("detect/segment", i, exc) from exc
        # Sequential timing of parallel work is meaningless; mark it.
        timer.add("detection (parallel)", 0.0)
    else:
        for i, norm in enumerate(norms):
            try:
                results[i] = process_frame(norm, cfg, timer)
            except GravicellError as exc:
                raise StageFailure("detect/segment", i, exc) from exc

    graph = track_frames(results, cfg, timer)

    t0 = time.perf_counter()
    output_dir = Path(output_dir)
    output_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".gravicell-", dir=output_dir.parent)
    try:
        for t, res in enumerate(results):
            labels = tracklet_label_map(graph, res.cells, t)
            save_labels(os.path.join(tmp, f"mask{t:03d}.tif"), labels)
            if overlay:
                save_rgb(
                    os.path.join(tmp, f"overlay{t:03d}.png"),
                    _overlay_image(norms[t], labels),
                )
        write_track_file(graph, os.path.join(tmp, "res_track.txt"))
        atomic_write_dir(tmp, output_dir)
    except BaseException:
        import shutil

        shutil.rmtree(tmp, ignore_errors=True)
        raise
    timer.add("io", time.perf_counter() - t0)

    return EvalReport(
        precision=float("nan"),
        recall=float("nan"),
        f1=float("nan"),
        purity=float("nan"),
        switches=0,
        mitosis_detected=0,
        mitosis_expected=0,
        n_pred=sum(len(r.cells.ids) for r in results),
        n_gt=0,
        timings=dict(timer.totals),
    )


def dump_field(
    input_dir: str | Path, output_dir: str | Path, cfg: PipelineConfig
) -> None:
    """Debug export: potential, force magnitude, and basin labels per frame."""
    meta = find_frames(input_dir)
    output_dir = Path(output_dir)
    output_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".gravicell-", dir=output_dir.parent)
    try:
        kernels = build_kernels(cfg.gravity.radius, cfg.gravity.softening_eps)
        for t, path in enumerate(meta.paths):
            norm = normalize(load_frame(path))
            smooth = kuwahara_anisotropic(
                log_brighten(norm, cfg.preprocess.log_gain), cfg.kuwahara_params()
            )
            force = force_field(smooth, kernels)
            phi = potential_field(smooth, kernels)
            points = find_critical_points(force)
            extraction = extract_basins(
                force, points, cfg.integrator_config(), stagnation_tol=cfg.basins.stagnation_tol
            )
            save_frame_u16(os.path.join(tmp, f"phi{t:03d}.tif"), normalize(phi))
            save_frame_u16(
                os.path.join(tmp, f"force{t:03d}.tif"), normalize(force.magnitude())
            )
            save_labels(os.path.join(tmp, f"basins{t:03d}.tif"), extraction.labels)
        atomic_write_dir(tmp, output_dir)
    except BaseException:
        import shutil

        shutil.rmtree(tmp, ignore_errors=True)
        raise
