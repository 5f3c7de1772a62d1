"""Cell mask construction: seeded growing, level-set refinement, splitting.

Masks start as greedy brightest-first regions grown from detected cell
centers on the contrast-enhanced frame, get their boundaries refined with
a distributional Chan-Vese level set, and finally pass through an
h-maxima/watershed splitter that separates touching cells.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import h_maxima
from skimage.segmentation import watershed

from .errors import ParameterError
from .preprocess import ClaheParams, clahe, fill_dark_spots

_CV_BAND = 3.0
_CV_DELTA_EPS = 1.5
_CV_WINDOW_MARGIN = 10
_CV_REINIT_EVERY = 10
_CV_VAR_FLOOR = 1e-6
_RIM_RADIUS = 2


@dataclass(frozen=True)
class SegParams:
    contrast_delta: float = 0.15
    cv_iterations: int = 50
    cv_smoothness_mu: float = 0.2
    h_maxima_h: float = 2.0
    min_seed_separation: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 < self.contrast_delta < 1.0:
            raise ParameterError(f"contrast_delta must be in (0,1), got {self.contrast_delta}")
        if self.cv_iterations < 1:
            raise ParameterError(f"cv_iterations must be >= 1, got {self.cv_iterations}")
        if self.h_maxima_h <= 0:
            raise ParameterError(f"h_maxima_h must be > 0, got {self.h_maxima_h}")
        if self.min_seed_separation < 0:
            raise ParameterError(
                f"min_seed_separation must be >= 0, got {self.min_seed_separation}"
            )


def _rim_structure() -> np.ndarray:
    dy, dx = np.mgrid[-_RIM_RADIUS : _RIM_RADIUS + 1, -_RIM_RADIUS : _RIM_RADIUS + 1]
    return dx * dx + dy * dy <= _RIM_RADIUS * _RIM_RADIUS


@dataclass
class CellMaskSet:
    """Instance label map for one frame plus per-instance statistics.

    Statistics are measured on whatever image the set was built against:
    ``area`` in pixels, the mean intensity inside the mask, and the mean
    intensity of a 2-px ring around it (excluding every cell's pixels),
    whose difference is the cell's local contrast.
    """

    labels: np.ndarray = field(repr=False)
    areas: dict[int, int] = field(default_factory=dict)
    interior_means: dict[int, float] = field(default_factory=dict)
    rim_means: dict[int, float] = field(default_factory=dict)
    recovered: set[int] = field(default_factory=set)

    @property
    def ids(self) -> list[int]:
        return sorted(self.areas)

    def mask(self, cell_id: int) -> np.ndarray:
        return self.labels == cell_id

    def contrast(self, cell_id: int) -> float:
        return self.interior_means[cell_id] - self.rim_means[cell_id]

    @classmethod
    def from_labels(
        cls, labels: np.ndarray, image: np.ndarray, recovered: set[int] | None = None
    ) -> "CellMaskSet":
        labels = np.asarray(labels, dtype=np.int32)
        out = cls(labels=labels, recovered=set(recovered or ()))
        for cell_id in np.unique(labels):
            if cell_id > 0:
                out._measure(int(cell_id), image)
        return out

    def _measure(self, cell_id: int, image: np.ndarray) -> None:
        mask = self.labels == cell_id
        area = int(mask.sum())
        self.areas[cell_id] = area
        self.interior_means[cell_id] = float(image[mask].mean()) if area else 0.0
        self.rim_means[cell_id] = self._rim_mean(mask, image)

    def _rim_mean(self, mask: np.ndarray, image: np.ndarray) -> float:
        sl = ndimage.find_objects(mask.astype(np.int8), max_label=1)[0]
        if sl is None:
            return 0.0
        pad = _RIM_RADIUS + 1
        ys = slice(max(sl[0].start - pad, 0), min(sl[0].stop + pad, mask.shape[0]))
        xs = slice(max(sl[1].start - pad, 0), min(sl[1].stop + pad, mask.shape[1]))
        ring = ndimage.binary_dilation(mask[ys, xs], structure=_rim_structure())
        ring &= self.labels[ys, xs] == 0
        if not ring.any():
            return self.interior_means.get(0, 0.0)
        return float(image[ys, xs][ring].mean())

    def add_instance(self, mask: np.ndarray, image: np.ndarray, recovered: bool = True) -> int:
        """Stamp a new instance onto free pixels; returns its id (0 if empty)."""
        free = mask & (self.labels == 0)
        if not free.any():
            return 0
        cell_id = max(self.areas, default=0) + 1
        self.labels[free] = cell_id
        self._measure(cell_id, image)
        if recovered:
            self.recovered.add(cell_id)
        return cell_id


# ---------------------------------------------------------------------------
# Seeded region growing


def region_grow(enhanced: np.ndarray, seeds: np.ndarray, p: SegParams) -> CellMaskSet:
    """Grow one mask per seed, brightest pixel first, until walls close in.

    All seeds share one max-heap; the globally brightest frontier pixel
    is processed next, so contested pixels go to whichever mask reaches
    them first at the higher intensity (ties row-major, then seed
    order).  A popped pixel darker than its claimant's running mean by
    more than ``contrast_delta`` becomes a wall: never claimed, never
    crossed.
    """
    enhanced = np.asarray(enhanced, dtype=np.float64)
    h, w = enhanced.shape
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    labels = np.zeros((h, w), dtype=np.int32)
    if len(seeds) == 0:
        return CellMaskSet.from_labels(labels, enhanced)

    wall = np.zeros((h, w), dtype=bool)
    count = np.zeros(len(seeds) + 1, dtype=np.int64)
    total = np.zeros(len(seeds) + 1, dtype=np.float64)
    heap: list[tuple[float, int, int, int]] = []
    pushed: set[tuple[int, int, int]] = set()

    def _push_neighbors(y: int, x: int, c: int) -> None:
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and not labels[ny, nx] and not wall[ny, nx]:
                key = (ny, nx, c)
                if key not in pushed:
                    pushed.add(key)
                    heapq.heappush(heap, (-enhanced[ny, nx], ny, nx, c))

    # Seeds own their pixel outright (always admitted, never contested).
    for i, (sx, sy) in enumerate(seeds):
        py = int(np.clip(round(sy), 0, h - 1))
        px = int(np.clip(round(sx), 0, w - 1))
        if labels[py, px]:
            continue
        labels[py, px] = i + 1
        count[i + 1] = 1
        total[i + 1] = enhanced[py, px]
    for i, (sx, sy) in enumerate(seeds):
        py = int(np.clip(round(sy), 0, h - 1))
        px = int(np.clip(round(sx), 0, w - 1))
        if labels[py, px] == i + 1:
            _push_neighbors(py, px, i + 1)

    while heap:
        neg_v, y, x, c = heapq.heappop(heap)
        if labels[y, x] or wall[y, x]:
            continue
        v = -neg_v
        if count[c] > 0 and v < total[c] / count[c] - p.contrast_delta:
            wall[y, x] = True
            continue
        labels[y, x] = c
        count[c] += 1
        total[c] += v
        _push_neighbors(y, x, c)

    return CellMaskSet.from_labels(labels, enhanced)


# ---------------------------------------------------------------------------
# Distributional Chan-Vese refinement


def _gaussian_loglik(img: np.ndarray, region: np.ndarray) -> np.ndarray:
    vals = img[region]
    mean = float(vals.mean())
    var = max(float(vals.var()), _CV_VAR_FLOOR)
    return -0.5 * np.log(2.0 * np.pi * var) - (img - mean) ** 2 / (2.0 * var)


def _curvature(phi: np.ndarray) -> np.ndarray:
    py, px = np.gradient(phi)
    mag = np.sqrt(px * px + py * py) + 1e-12
    ny_y, _ = np.gradient(py / mag)
    _, nx_x = np.gradient(px / mag)
    return nx_x + ny_y


def _signed_distance(mask: np.ndarray) -> np.ndarray:
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    return inside - outside


def chan_vese_refine(
    img: np.ndarray, mask: np.ndarray, p: SegParams
) -> tuple[np.ndarray, bool]:
    """Evolve the mask boundary toward the intensity-distribution optimum.

    Region interiors/exteriors are modeled as Gaussians re-estimated
    every sweep; the level set moves where the inside model explains a
    pixel better than the outside one, damped by a curvature
    (perimeter) penalty ``cv_smoothness_mu``.  Runs on a narrow band in
    a window around the mask.  Returns ``(refined, collapsed)``; on
    collapse the input comes back unchanged with the flag set.
    """
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return mask.copy(), True
    sl = ndimage.find_objects(mask.astype(np.int8), max_label=1)[0]
    m = _CV_WINDOW_MARGIN
    ys = slice(max(sl[0].start - m, 0), min(sl[0].stop + m, img.shape[0]))
    xs = slice(max(sl[1].start - m, 0), min(sl[1].stop + m, img.shape[1]))
    win = img[ys, xs]
    phi = _signed_distance(mask[ys, xs])

    for it in range(p.cv_iterations):
        inside = phi > 0
        if not inside.any() or inside.all():
            return mask.copy(), True
        speed = _gaussian_loglik(win, inside) - _gaussian_loglik(win, ~inside)
        force = speed + p.cv_smoothness_mu * _curvature(phi)
        band = np.abs(phi) <= _CV_BAND
        delta = _CV_DELTA_EPS / (np.pi * (_CV_DELTA_EPS**2 + phi**2))
        update = np.where(band, delta * force, 0.0)
        peak = np.abs(update).max()
        if peak < 1e-15:
            break
        phi += (0.45 / peak) * update
        if (it + 1) % _CV_REINIT_EVERY == 0:
            phi = _signed_distance(phi > 0)

    out_win = phi > 0
    if not out_win.any():
        return mask.copy(), True
    comp, n = ndimage.label(out_win)
    overlap = np.bincount(comp[mask[ys, xs]], minlength=n + 1)
    overlap[0] = 0
    if overlap.max() == 0:
        return mask.copy(), True
    best = int(overlap.argmax())
    refined = np.zeros_like(mask)
    refined[ys, xs] = comp == best
    return refined, False


# ---------------------------------------------------------------------------
# Watershed splitting


def _merge_close_seeds(centroids: np.ndarray, min_sep: float) -> np.ndarray:
    """Union-find clustering of peak centroids closer than ``min_sep``."""
    n = len(centroids)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.hypot(*(centroids[i] - centroids[j])) < min_sep:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = [find(i) for i in range(n)]
    _, cluster = np.unique(roots, return_inverse=True)
    return cluster


def split_mask(mask: np.ndarray, p: SegParams) -> list[np.ndarray]:
    """Cut a mask at distance-transform valleys between its thick cores.

    Cores are the h-maxima of the interior Euclidean distance transform
    (shallow bumps below ``h_maxima_h`` don't count); cores closer than
    ``min_seed_separation`` merge into one seed.  With two or more seeds
    a marker watershed on the negated distance transform partitions the
    mask; otherwise it comes back whole.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    dist = ndimage.distance_transform_edt(mask)
    peaks = h_maxima(dist, p.h_maxima_h) & mask
    peak_lab, n_peaks = ndimage.label(peaks, structure=np.ones((3, 3), bool))
    if n_peaks <= 1:
        return [mask.copy()]
    centroids = np.array(ndimage.center_of_mass(peaks, peak_lab, range(1, n_peaks + 1)))
    cluster = _merge_close_seeds(centroids, p.min_seed_separation)
    n_seeds = cluster.max() + 1
    if n_seeds <= 1:
        return [mask.copy()]
    markers = np.zeros(mask.shape, dtype=np.int32)
    for peak_id in range(1, n_peaks + 1):
        markers[peak_lab == peak_id] = cluster[peak_id - 1] + 1
    pieces_lab = watershed(-dist, markers, mask=mask)
    leftover = mask & (pieces_lab == 0)
    if leftover.any():
        # Unreachable pixels (possible only in degenerate geometries):
        # hand them to the nearest seed pixel.
        _, (iy, ix) = ndimage.distance_transform_edt(markers == 0, return_indices=True)
        pieces_lab[leftover] = markers[iy[leftover], ix[leftover]]
    return [pieces_lab == k for k in range(1, n_seeds + 1)]


# ---------------------------------------------------------------------------
# Full-frame composition


def segment_frame(
    frame: np.ndarray,
    minima: np.ndarray,
    p: SegParams,
    clahe_params: ClaheParams | None = None,
) -> CellMaskSet:
    """Segment one frame from its detected cell centers.

    ``frame`` is the brightened (pre-smoothing) intensity image; the
    enhancement chain (CLAHE, then dark-spot filling) runs here, masks
    grow and refine on the enhanced image, touching cells split, and the
    surviving instances are renumbered 1..K.  Per-instance statistics
    are measured on ``frame`` itself so they stay comparable across
    frames regardless of local equalization.
    """
    frame = np.asarray(frame, dtype=np.float64)
    minima = np.asarray(minima, dtype=np.float64).reshape(-1, 2)
    if len(minima) == 0:
        return CellMaskSet.from_labels(np.zeros(frame.shape, np.int32), frame)

    enhanced = fill_dark_spots(clahe(frame, clahe_params))
    grown = region_grow(enhanced, minima, p)

    refined = np.zeros(frame.shape, dtype=np.int32)
    claims: list[tuple[int, np.ndarray]] = []
    for cell_id in grown.ids:
        r_mask, collapsed = chan_vese_refine(enhanced, grown.mask(cell_id), p)
        claims.append((cell_id, r_mask))
    for cell_id, r_mask in claims:
        target = r_mask & (refined == 0)
        refined[target] = cell_id
    # Contested pixels go to the cell with the nearest seed.
    for cell_id, r_mask in claims:
        contested = r_mask & (refined != cell_id) & (refined != 0)
        if not contested.any():
            continue
        yy, xx = np.nonzero(contested)
        d_own = np.hypot(xx - minima[cell_id - 1, 0], yy - minima[cell_id - 1, 1])
        holder = refined[yy, xx]
        d_holder = np.hypot(
            xx - minima[holder - 1, 0], yy - minima[holder - 1, 1]
        )
        take = d_own < d_holder
        refined[yy[take], xx[take]] = cell_id

    final = np.zeros(frame.shape, dtype=np.int32)
    next_id = 0
    for cell_id in grown.ids:
        cell_mask = refined == cell_id
        if not cell_mask.any():
            continue
        for piece in split_mask(cell_mask, p):
            next_id += 1
            final[piece] = next_id
    return CellMaskSet.from_labels(final, frame)
