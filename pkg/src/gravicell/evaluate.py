"""Desk-scale quality metrics for predicted masks and tracks.

Detection is scored by mutual centroid containment (a prediction and a
ground-truth cell each land inside the other's mask) resolved one-to-one
greedily by IoU; tracking by purity (ground-truth tracks covered by a
single predicted tracklet) and identity switches.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    purity: float
    switches: int
    mitosis_detected: int
    mitosis_expected: int
    n_pred: int
    n_gt: int
    degenerate_precision: bool = False
    timings: dict[str, float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [
            f"detection  precision {self.precision:.4f}  recall {self.recall:.4f}  f1 {self.f1:.4f}",
            f"tracking   purity {self.purity:.4f}  switches {self.switches}",
            f"mitosis    detected {self.mitosis_detected}  expected {self.mitosis_expected}",
            f"instances  predicted {self.n_pred}  ground-truth {self.n_gt}",
        ]
        if self.degenerate_precision:
            out.append("warning    zero predictions; precision is 1.0 by convention")
        for name, secs in self.timings.items():
            out.append(f"timing     {name} {secs:.3f} s")
        return out


def _label_stats(labmap: np.ndarray):
    """Areas and centroids for each positive label (dict keyed by label)."""
    labmap = np.asarray(labmap)
    ids = np.unique(labmap)
    ids = ids[ids > 0]
    if len(ids) == 0:
        return {}, {}
    flat = labmap.ravel()
    yy, xx = np.mgrid[0 : labmap.shape[0], 0 : labmap.shape[1]]
    counts = np.bincount(flat)
    sy = np.bincount(flat, weights=yy.ravel())
    sx = np.bincount(flat, weights=xx.ravel())
    areas = {int(i): int(counts[i]) for i in ids}
    cents = {int(i): (sy[i] / counts[i], sx[i] / counts[i]) for i in ids}
    return areas, cents


def match_frame(pred: np.ndarray, gt: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one (pred label, gt label) matches for a single frame.

    A pair qualifies when each cell's centroid falls inside the other's
    mask; among qualifying pairs, highest IoU claims first.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DataError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p_areas, p_cents = _label_stats(pred)
    g_areas, g_cents = _label_stats(gt)
    candidates = []
    for p, (cy, cx) in p_cents.items():
        g = int(gt[int(round(cy)), int(round(cx))])
        if g == 0:
            continue
        gcy, gcx = g_cents[g]
        if int(pred[int(round(gcy)), int(round(gcx))]) != p:
            continue
        inter = int(((pred == p) & (gt == g)).sum())
        union = p_areas[p] + g_areas[g] - inter
        iou = inter / union if union else 0.0
        candidates.append((iou, p, g))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    matches = []
    for _, p, g in candidates:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        matches.append((p, g))
    return matches


def _count_mitosis(tracks: list[tuple[int, int, int, int]]) -> int:
    children: dict[int, int] = {}
    for _, _, _, parent in tracks:
        if parent:
            children[parent] = children.get(parent, 0) + 1
    return sum(1 for n in children.values() if n >= 2)


def evaluate_sequences(
    pred_masks: list[np.ndarray],
    pred_tracks: list[tuple[int, int, int, int]],
    gt_masks: list[np.ndarray],
    gt_tracks: list[tuple[int, int, int, int]],
    timings: dict[str, float] | None = None,
) -> EvalReport:
    """Score a predicted sequence against ground truth.

    Mask label maps must carry track labels (one instance per track per
    frame).  Purity: a ground-truth track counts as pure when every
    frame of its span is matched and always to the same predicted
    tracklet.  Switches: adjacent-frame pairs where the matched
    predicted label changes.
    """
    if len(pred_masks) != len(gt_masks):
        raise DataError(
            f"frame count mismatch: {len(pred_masks)} predicted vs {len(gt_masks)} ground truth"
        )
    tp = fp = fn = 0
    n_pred_total = n_gt_total = 0
    gt_match: dict[int, dict[int, int]] = {}  # gt label -> frame -> pred label
    for t, (pred, gt) in enumerate(zip(pred_masks, gt_masks)):
        matches = match_frame(pred, gt)
        n_p = len(np.setdiff1d(np.unique(pred), [0]))
        n_g = len(np.setdiff1d(np.unique(gt), [0]))
        n_pred_total += n_p
        n_gt_total += n_g
        tp += len(matches)
        fp += n_p - len(matches)
        fn += n_g - len(matches)
        for p, g in matches:
            gt_match.setdefault(g, {})[t] = p

    degenerate = n_pred_total == 0
    precision = 1.0 if degenerate else tp / (tp + fp)
    recall = 1.0 if n_gt_total == 0 else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)

    spans = {label: (begin, end) for label, begin, end, _ in gt_tracks}
    pure = 0
    switches = 0
    for g, (begin, end) in spans.items():
        per_frame = gt_match.get(g, {})
        seq = [per_frame.get(t) for t in range(begin, end + 1)]
        if all(s is not None for s in seq) and len(set(seq)) == 1:
            pure += 1
        for a, b in zip(seq, seq[1:]):
            if a is not None and b is not None and a != b:
                switches += 1
    purity = pure / len(spans) if spans else 1.0

    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        purity=purity,
        switches=switches,
        mitosis_detected=_count_mitosis(pred_tracks),
        mitosis_expected=_count_mitosis(gt_tracks),
        n_pred=n_pred_total,
        n_gt=n_gt_total,
        degenerate_precision=degenerate,
        timings=dict(timings or {}),
    )


def read_track_file(path: str) -> list[tuple[int, int, int, int]]:
    """Parse a "label begin end parent" table (one tracklet per line)."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            rows.append(tuple(int(v) for v in parts))
    return rows
