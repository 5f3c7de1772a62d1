"""Frame-to-frame association and tracklet construction.

Cells are linked across frames by pixel votes: every pixel of a mask in
frame t looks up which instance's attraction basin it falls into in the
neighboring frame, and the majority wins.  A forward sweep patches holes
in the detections (level-set recovery, one-frame gap interpolation); the
final linking sweep runs backward in time so that two cells merging into
one — viewed forward: one cell dividing — becomes a mitosis event with
parent/child bookkeeping.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .basins import BasinExtraction
from .errors import ParameterError
from .segmentation import CellMaskSet, SegParams, _rim_structure, chan_vese_refine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackParams:
    match_min_fraction: float = 0.2
    contrast_accept_ratio: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.match_min_fraction <= 1.0:
            raise ParameterError(
                f"match_min_fraction must be in (0,1], got {self.match_min_fraction}"
            )
        if self.contrast_accept_ratio < 0:
            raise ParameterError(
                f"contrast_accept_ratio must be >= 0, got {self.contrast_accept_ratio}"
            )


@dataclass
class FrameMatching:
    """Vote tallies from one frame's masks into a neighbor's basins."""

    entries: list[tuple[int, int, float]] = field(default_factory=list)
    best: dict[int, int] = field(default_factory=dict)


@dataclass
class Tracklet:
    label: int = 0
    begin: int = 0
    end: int = 0
    parent: int = 0
    cells: dict[int, int] = field(default_factory=dict)  # frame -> instance id
    areas: dict[int, int] = field(default_factory=dict)
    contrasts: dict[int, float] = field(default_factory=dict)


@dataclass
class TrackGraph:
    tracklets: list[Tracklet] = field(default_factory=list)
    n_frames: int = 0


def merge_basins(basins: BasinExtraction, cells: CellMaskSet) -> np.ndarray:
    """Relabel basins by the cell instance owning each basin's minimum.

    Basins whose minimum lies outside every mask become 0, and several
    basins inside one cell collapse to that cell's id — the map then
    answers "which cell attracts this pixel" in one lookup.
    """
    h, w = basins.labels.shape
    lut = np.zeros(len(basins.minima) + 1, dtype=np.int32)
    for i, (mx, my) in enumerate(np.asarray(basins.minima, dtype=np.float64)):
        py = int(np.clip(round(my), 0, h - 1))
        px = int(np.clip(round(mx), 0, w - 1))
        lut[i + 1] = cells.labels[py, px]
    return lut[basins.labels]


def associate(
    cells_t: CellMaskSet, inst_basins_t2: np.ndarray, min_fraction: float
) -> FrameMatching:
    """Match each cell of frame t into the instance basins of a neighbor.

    Vote fraction = (mask pixels landing in the target's basin) / mask
    area.  The match is the highest-fraction target at or above
    ``min_fraction``; ties take the lower target id; no qualifying
    target means unmatched.
    """
    out = FrameMatching()
    for cell_id in cells_t.ids:
        votes = np.bincount(inst_basins_t2[cells_t.mask(cell_id)])
        area = cells_t.areas[cell_id]
        best_target, best_frac = 0, 0.0
        for target in np.nonzero(votes)[0]:
            if target == 0:
                continue
            frac = votes[target] / area
            out.entries.append((cell_id, int(target), float(frac)))
            if frac > best_frac + 1e-12:
                best_target, best_frac = int(target), float(frac)
        if best_frac >= min_fraction:
            out.best[cell_id] = best_target
    return out


def mask_contrast(image: np.ndarray, mask: np.ndarray) -> float:
    """Interior mean minus the mean of a 2-px ring around the mask."""
    if not mask.any():
        return 0.0
    ring = ndimage.binary_dilation(mask, structure=_rim_structure()) & ~mask
    if not ring.any():
        return 0.0
    return float(image[mask].mean() - image[ring].mean())


def recover_missing(
    prev_mask: np.ndarray,
    frame: np.ndarray,
    ref_contrast: float,
    p: SegParams,
    tp: TrackParams,
) -> np.ndarray | None:
    """Re-find a cell the detector missed, starting from its last mask.

    The level set evolves from the previous mask on the current frame;
    the candidate survives only if its local contrast holds up against
    the reference (``contrast_accept_ratio`` of the last known value) —
    an indistinct boundary means the cell is genuinely gone.
    """
    if ref_contrast <= 0.0:
        log.debug("recover_missing with non-positive reference contrast %g", ref_contrast)
    candidate, collapsed = chan_vese_refine(frame, prev_mask, p)
    if collapsed or not candidate.any():
        return None
    if mask_contrast(frame, candidate) >= tp.contrast_accept_ratio * ref_contrast:
        return candidate
    return None


def _signed_distance(mask: np.ndarray) -> np.ndarray:
    return ndimage.distance_transform_edt(mask) - ndimage.distance_transform_edt(~mask)


def _bbox(mask: np.ndarray):
    return ndimage.find_objects(mask.astype(np.int8), max_label=1)[0]


def interpolate_gap(mask_before: np.ndarray, mask_after: np.ndarray) -> np.ndarray:
    """Synthesize the in-between mask for a one-frame detection gap.

    Averaging the two signed distance fields and thresholding at zero
    gives a smooth morphological in-between (identical inputs come back
    unchanged).  If the masks are so far apart their boxes don't even
    touch, the smaller shape is stamped at the mean centroid instead.
    """
    mask_before = np.asarray(mask_before, dtype=bool)
    mask_after = np.asarray(mask_after, dtype=bool)
    if not mask_before.any() or not mask_after.any():
        return np.zeros_like(mask_before)
    b1, b2 = _bbox(mask_before), _bbox(mask_after)
    overlap = all(
        s1.start < s2.stop and s2.start < s1.stop for s1, s2 in zip(b1, b2)
    )
    if overlap:
        avg = 0.5 * (_signed_distance(mask_before) + _signed_distance(mask_after))
        return avg >= 0.0
    small, large = (
        (mask_before, mask_after)
        if mask_before.sum() <= mask_after.sum()
        else (mask_after, mask_before)
    )
    cy_s, cx_s = ndimage.center_of_mass(small)
    cy_l, cx_l = ndimage.center_of_mass(large)
    ty = int(round(0.5 * (cy_s + cy_l) - cy_s))
    tx = int(round(0.5 * (cx_s + cx_l) - cx_s))
    out = np.zeros_like(mask_before)
    ys, xs = np.nonzero(small)
    ys = ys + ty
    xs = xs + tx
    keep = (ys >= 0) & (ys < out.shape[0]) & (xs >= 0) & (xs < out.shape[1])
    out[ys[keep], xs[keep]] = True
    return out


# ---------------------------------------------------------------------------
# Sequence-level passes


def _cross_match(
    mask: np.ndarray, inst_far: np.ndarray, min_fraction: float
) -> int:
    """Best instance two frames away for gap detection (0 if none holds)."""
    votes = np.bincount(inst_far[mask])
    area = max(int(mask.sum()), 1)
    best_target, best_frac = 0, 0.0
    for target in np.nonzero(votes)[0]:
        if target == 0:
            continue
        frac = votes[target] / area
        if frac > best_frac + 1e-12:
            best_target, best_frac = int(target), frac
    return best_target if best_frac >= min_fraction else 0


def track_sequence(
    cells: list[CellMaskSet],
    inst_basins: list[np.ndarray],
    frames: list[np.ndarray],
    seg_p: SegParams,
    track_p: TrackParams,
) -> TrackGraph:
    """Link per-frame cell instances into a tracklet graph.

    Backward pass: match every cell into the previous frame's basins.
    Forward pass: match into the next frame; a cell with no successor
    first tries gap interpolation (successor visible two frames ahead),
    then level-set recovery; accepted masks join the next frame's
    instance set and basin map.  Linking pass (reverse time): chains of
    single back-matches extend one tracklet; two cells back-matching to
    the same predecessor close as siblings with that cell as parent
    (children start one frame after the parent ends).
    """
    n = len(cells)
    if n == 0:
        return TrackGraph()
    if not (len(inst_basins) == len(frames) == n):
        raise ParameterError("cells, inst_basins and frames must align per frame")

    match_back: dict[int, dict[int, int]] = {}
    for t in range(1, n):
        match_back[t] = associate(cells[t], inst_basins[t - 1], track_p.match_min_fraction).best

    dirty: set[int] = set()
    for t in range(n - 1):
        fwd = associate(cells[t], inst_basins[t + 1], track_p.match_min_fraction)
        for cell_id in cells[t].ids:
            if fwd.best.get(cell_id, 0):
                continue
            mask_t = cells[t].mask(cell_id)
            new_mask = None
            if t + 2 < n:
                far = _cross_match(mask_t, inst_basins[t + 2], track_p.match_min_fraction)
                if far:
                    new_mask = interpolate_gap(mask_t, cells[t + 2].mask(far))
            if new_mask is None or not new_mask.any():
                new_mask = recover_missing(
                    mask_t, frames[t + 1], cells[t].contrast(cell_id), seg_p, track_p
                )
            if new_mask is None or not new_mask.any():
                continue
            new_id = cells[t + 1].add_instance(new_mask, frames[t + 1])
            if new_id:
                inst_basins[t + 1][cells[t + 1].labels == new_id] = new_id
                dirty.add(t + 1)

    for t in sorted(dirty):
        match_back[t] = associate(cells[t], inst_basins[t - 1], track_p.match_min_fraction).best
        if t + 1 < n:
            match_back[t + 1] = associate(
                cells[t + 1], inst_basins[t], track_p.match_min_fraction
            ).best

    tracklets: list[Tracklet] = []
    open_map: dict[int, int] = {}
    pending: dict[int, list[int]] = {}
    parent_of: list[int] = []

    for t in range(n - 1, -1, -1):
        for cell_id in cells[t].ids:
            if cell_id not in open_map:
                tracklets.append(Tracklet(begin=t, end=t))
                parent_of.append(-1)
                open_map[cell_id] = len(tracklets) - 1
            tr = tracklets[open_map[cell_id]]
            tr.begin = t
            tr.cells[t] = cell_id
            tr.areas[t] = cells[t].areas[cell_id]
            tr.contrasts[t] = cells[t].contrast(cell_id)
        for parent_cell, child_idxs in pending.items():
            pid = open_map[parent_cell]
            for ci in child_idxs:
                parent_of[ci] = pid
        pending = {}
        if t == 0:
            break
        groups: dict[int, list[int]] = {}
        for cell_id in cells[t].ids:
            target = match_back.get(t, {}).get(cell_id, 0)
            if target:
                groups.setdefault(target, []).append(cell_id)
        next_open: dict[int, int] = {}
        for target in sorted(groups):
            children = groups[target]
            if len(children) == 1:
                next_open[target] = open_map[children[0]]
            else:
                pending[target] = [open_map[c] for c in children]
        open_map = next_open

    order = sorted(
        range(len(tracklets)),
        key=lambda i: (tracklets[i].begin, tracklets[i].end, tracklets[i].cells[tracklets[i].begin]),
    )
    final_label = [0] * len(tracklets)
    for rank, i in enumerate(order):
        final_label[i] = rank + 1
    for i, tr in enumerate(tracklets):
        tr.label = final_label[i]
        tr.parent = final_label[parent_of[i]] if parent_of[i] >= 0 else 0
    return TrackGraph(tracklets=sorted(tracklets, key=lambda tr: tr.label), n_frames=n)


def filter_tracklets(
    g: TrackGraph, lower: float, upper: float, min_contrast: float
) -> TrackGraph:
    """Hysteresis cull of weak tracklets.

    A tracklet survives only if none of its masks is smaller than
    ``lower``, at least one reaches ``upper``, and the median local
    contrast clears ``min_contrast``.  Children of a removed parent
    become roots; surviving labels renumber contiguously.
    """
    if lower > upper:
        raise ParameterError(f"lower bound {lower} exceeds upper bound {upper}")
    kept: list[Tracklet] = []
    for tr in g.tracklets:
        areas = [tr.areas[t] for t in range(tr.begin, tr.end + 1)]
        contrasts = [tr.contrasts[t] for t in range(tr.begin, tr.end + 1)]
        if min(areas) >= lower and max(areas) >= upper and float(np.median(contrasts)) >= min_contrast:
            kept.append(tr)
    kept_labels = {tr.label for tr in kept}
    relabel = {tr.label: i + 1 for i, tr in enumerate(sorted(kept, key=lambda tr: tr.label))}
    out: list[Tracklet] = []
    for tr in sorted(kept, key=lambda tr: tr.label):
        new = Tracklet(
            label=relabel[tr.label],
            begin=tr.begin,
            end=tr.end,
            parent=relabel[tr.parent] if tr.parent in kept_labels else 0,
            cells=dict(tr.cells),
            areas=dict(tr.areas),
            contrasts=dict(tr.contrasts),
        )
        out.append(new)
    return TrackGraph(tracklets=out, n_frames=g.n_frames)


def tracklet_label_map(g: TrackGraph, cells_t: CellMaskSet, t: int) -> np.ndarray:
    """Per-frame label image where each pixel carries its tracklet label."""
    lut = np.zeros(max(cells_t.areas, default=0) + 1, dtype=np.uint16)
    for tr in g.tracklets:
        inst = tr.cells.get(t)
        if inst is not None:
            lut[inst] = tr.label
    return lut[cells_t.labels]


def write_track_file(g: TrackGraph, path: str) -> None:
    """CTC-style summary: one "label begin end parent" line per tracklet."""
    with open(path, "w", encoding="ascii") as fh:
        for tr in sorted(g.tracklets, key=lambda tr: tr.label):
            fh.write(f"{tr.label} {tr.begin} {tr.end} {tr.parent}\n")
