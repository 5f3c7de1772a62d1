"""Critical points of the force field and the basins they organize.

The force field is treated as a continuous vector field via bilinear
interpolation.  Cell centers show up as attracting fixed points (minima
of the underlying potential), ridges between cells pass through saddles,
and the watershed regions of the flow — one per attracting point — are
the detection output.  Basin boundaries are traced by integrating the
flow uphill out of each saddle with an embedded Runge-Kutta pair; pixels
the traced ridges fail to separate cleanly fall back to direct descent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ParameterError
from .gravity import ForceField
from .imaging import bilinear

log = logging.getLogger(__name__)

# Embedded Runge-Kutta pair: three stages, third-order solution with an
# embedded second-order one for the error estimate.
TABLEAU_C = (0.0, 1.0, 0.5)
TABLEAU_A = ((), (1.0,), (0.25, 0.25))
TABLEAU_B_HIGH = (1.0 / 6.0, 1.0 / 6.0, 4.0 / 6.0)
TABLEAU_B_LOW = (0.5, 0.5, 0.0)

#: |Jacobian determinant| below this is treated as degenerate.
_DEGENERATE_TOL = 1e-9

#: Distance below which two critical points are considered duplicates.
_DEDUP_RADIUS = 0.5

#: Offset along the unstable eigenvector used to seed separatrix traces.
_SEED_OFFSET = 0.5

#: Descent is considered captured by a minimum within this distance.
_CAPTURE_RADIUS = 0.5
_ARC_BUDGET_FACTOR = 2.0
_PROGRESS_CHECK_EVERY = 500
_PROGRESS_MIN_PX = 0.75


@dataclass(frozen=True)
class IntegratorConfig:
    """Adaptive step-size control for streamline integration."""

    tol: float = 1e-3
    h_init: float = 0.5
    h_min: float = 1e-3
    h_max: float = 2.0
    max_steps: int = 10000

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ParameterError(f"tol must be > 0, got {self.tol}")
        if not 0 < self.h_min <= self.h_init <= self.h_max:
            raise ParameterError(
                f"need 0 < h_min <= h_init <= h_max, got "
                f"{self.h_min}, {self.h_init}, {self.h_max}"
            )
        if self.max_steps < 1:
            raise ParameterError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass(frozen=True)
class CriticalPoint:
    """A zero of the interpolated force field, with local linearization."""

    x: float
    y: float
    kind: str  # minimum | maximum | saddle | spiral-sink | spiral-source | degenerate
    eigenvalues: tuple[complex, complex]
    jacobian: np.ndarray = field(repr=False)

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def attracting(self) -> bool:
        """True for the kinds that collect flow: sinks, spiral or straight."""
        return self.kind in ("minimum", "spiral-sink")


@dataclass(frozen=True)
class BasinExtraction:
    """Labeled basin map plus the attracting points the labels refer to."""

    labels: np.ndarray = field(repr=False)
    minima: np.ndarray = field(repr=False)  # (K, 2) positions; row i <-> label i+1
    n_fallback_pixels: int = 0
    n_truncated_traces: int = 0


# ---------------------------------------------------------------------------
# Embedded Runge-Kutta step and step-size control


def integrate_step(f, y, h, direction: str = "descent"):
    """One embedded RK step of the flow y' = ±f(y).

    ``y`` may be a single state (shape ``(d,)``) or a batch ``(n, d)``;
    ``h`` is a scalar or per-state array.  ``direction="ascent"`` negates
    the field, integrating against the flow.  Returns the higher-order
    solution and the per-state error estimate (euclidean gap between the
    embedded solutions).
    """
    if direction not in ("descent", "ascent"):
        raise ParameterError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    y = np.asarray(y, dtype=np.float64)
    sign = -1.0 if direction == "ascent" else 1.0
    hh = np.asarray(h, dtype=np.float64)
    if y.ndim > 0:
        hh = hh[..., None] if hh.ndim == y.ndim - 1 else hh
    k1 = sign * np.asarray(f(y), dtype=np.float64)
    k2 = sign * np.asarray(f(y + hh * TABLEAU_A[1][0] * k1), dtype=np.float64)
    k3 = sign * np.asarray(
        f(y + hh * (TABLEAU_A[2][0] * k1 + TABLEAU_A[2][1] * k2)), dtype=np.float64
    )
    y_high = y + hh * (TABLEAU_B_HIGH[0] * k1 + TABLEAU_B_HIGH[1] * k2 + TABLEAU_B_HIGH[2] * k3)
    y_low = y + hh * (TABLEAU_B_LOW[0] * k1 + TABLEAU_B_LOW[1] * k2)
    diff = y_high - y_low
    if y.ndim == 0:
        err = np.abs(diff)
    else:
        err = np.sqrt(np.sum(diff * diff, axis=-1))
    return y_high, err


def adapt_step(error, h, cfg: IntegratorConfig):
    """Accept/reject a step and propose the next size.

    The classic controller for an order-2 error estimate: grow or shrink
    by (tol/err)^(1/3) with a 0.9 safety factor, clamped to [h_min, h_max].
    A step already at h_min is always accepted so integration cannot stall.
    """
    error = np.asarray(error, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    accept = (error <= cfg.tol) | (h <= cfg.h_min * (1.0 + 1e-12))
    factor = 0.9 * (cfg.tol / np.maximum(error, 1e-12)) ** (1.0 / 3.0)
    h_next = np.clip(h * factor, cfg.h_min, cfg.h_max)
    if accept.ndim == 0:
        return bool(accept), float(h_next)
    return accept, h_next


# ---------------------------------------------------------------------------
# Critical points of the bilinearly interpolated field


def _candidate_cells(comp: np.ndarray) -> np.ndarray:
    """Unit cells whose four corners allow a zero of one component.

    A sign change (or an exact zero next to a nonzero corner) is necessary
    for a root; four identical zeros mean the component vanishes on the
    whole cell, which has no isolated root and is excluded.
    """
    c00 = comp[:-1, :-1]
    c10 = comp[:-1, 1:]
    c01 = comp[1:, :-1]
    c11 = comp[1:, 1:]
    lo = np.minimum(np.minimum(c00, c10), np.minimum(c01, c11))
    hi = np.maximum(np.maximum(c00, c10), np.maximum(c01, c11))
    return (lo <= 0.0) & (hi >= 0.0) & ((lo < 0.0) | (hi > 0.0))


def _bilinear_coeffs(comp: np.ndarray, jj: np.ndarray, ii: np.ndarray):
    """Coefficients of f(u,v) = a + b u + c v + d u v on cells (jj, ii)."""
    a = comp[jj, ii]
    b = comp[jj, ii + 1] - a
    c = comp[jj + 1, ii] - a
    d = comp[jj + 1, ii + 1] - comp[jj, ii + 1] - comp[jj + 1, ii] + a
    return a, b, c, d


def classify_jacobian(jac: np.ndarray):
    """Classify a 2x2 force Jacobian at a zero of the field.

    Returns (kind, eigenvalues).  Near-singular Jacobians are degenerate;
    real spectra split into saddle (det < 0) and straight sink/source by
    the trace sign; complex spectra are spirals, again by trace sign.
    """
    tr = float(jac[0, 0] + jac[1, 1])
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    if abs(det) < _DEGENERATE_TOL:
        half = tr / 2.0
        return "degenerate", (complex(half), complex(half))
    disc = tr * tr / 4.0 - det
    if disc >= 0.0:
        root = float(np.sqrt(disc))
        lams = (complex(tr / 2.0 + root), complex(tr / 2.0 - root))
        if det < 0.0:
            return "saddle", lams
        return ("minimum", lams) if tr < 0.0 else ("maximum", lams)
    root = float(np.sqrt(-disc))
    lams = (complex(tr / 2.0, root), complex(tr / 2.0, -root))
    if abs(tr) < _DEGENERATE_TOL:
        return "degenerate", lams
    return ("spiral-sink", lams) if tr < 0.0 else ("spiral-source", lams)


def _real_eigenvector(jac: np.ndarray, lam: float) -> np.ndarray:
    """Unit eigenvector of a 2x2 matrix for a real eigenvalue."""
    v1 = np.array([jac[0, 1], lam - jac[0, 0]])
    v2 = np.array([lam - jac[1, 1], jac[1, 0]])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    n = np.linalg.norm(v)
    if n < 1e-14:  # Jacobian is lam * I; any direction works
        return np.array([1.0, 0.0])
    return v / n


def _newton_in_cell(fx: np.ndarray, fy: np.ndarray, jj: int, ii: int,
                    max_iter: int = 50):
    """Damped 2-D Newton for a root of both components inside one cell."""
    ax, bx, cx, dx = (float(t) for t in _bilinear_coeffs(fx, jj, ii))
    ay, by, cy, dy = (float(t) for t in _bilinear_coeffs(fy, jj, ii))
    u, v = 0.5, 0.5
    for _ in range(max_iter):
        gx = ax + bx * u + cx * v + dx * u * v
        gy = ay + by * u + cy * v + dy * u * v
        if abs(gx) < 1e-12 and abs(gy) < 1e-12:
            if -1e-9 <= u <= 1.0 + 1e-9 and -1e-9 <= v <= 1.0 + 1e-9:
                return u, v
            return None
        jac = np.array([[bx + dx * v, cx + dx * u], [by + dy * v, cy + dy * u]])
        if abs(np.linalg.det(jac)) < 1e-14:
            return None
        du, dv = np.linalg.solve(jac, [-gx, -gy])
        u = float(np.clip(u + du, -0.25, 1.25))
        v = float(np.clip(v + dv, -0.25, 1.25))
    return None


@njit(cache=True)
def _dedup_mask(px, py, w, h, r2):
    """Sequential dedup: keep each point unless a kept one is within r.

    Kept points are chained into per-pixel buckets; a candidate within
    sqrt(r2) <= 1 of a kept point shares its 3x3 bucket neighborhood, so
    the scan is local while matching the all-pairs rule exactly.
    """
    n = px.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    head = np.full(h * w, -1, dtype=np.int64)
    nxt = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        x = px[k]
        y = py[k]
        cx = int(np.floor(x))
        cy = int(np.floor(y))
        if cx < 0:
            cx = 0
        elif cx > w - 1:
            cx = w - 1
        if cy < 0:
            cy = 0
        elif cy > h - 1:
            cy = h - 1
        dup = False
        for ny in range(cy - 1, cy + 2):
            if ny < 0 or ny >= h:
                continue
            for nx in range(cx - 1, cx + 2):
                if nx < 0 or nx >= w:
                    continue
                j = head[ny * w + nx]
                while j >= 0:
                    ddx = px[j] - x
                    ddy = py[j] - y
                    if ddx * ddx + ddy * ddy < r2:
                        dup = True
                        break
                    j = nxt[j]
                if dup:
                    break
            if dup:
                break
        if not dup:
            keep[k] = True
            nxt[k] = head[cy * w + cx]
            head[cy * w + cx] = k
    return keep


def find_critical_points(force: ForceField) -> list[CriticalPoint]:
    """Locate and classify all zeros of the interpolated force field.

    Works cell by cell: candidate unit cells are those where both
    components change sign; within a cell the two bilinear forms reduce to
    a quadratic in one variable, solved in closed form.  Cells where the
    closed form degenerates get a Newton fallback; non-convergent cells
    are dropped and counted in a debug log line.  Points closer than half
    a pixel are merged (first found wins), and each survivor is classified
    by the Jacobian of the interpolant at its location.
    """
    fx = np.asarray(force.fx, dtype=np.float64)
    fy = np.asarray(force.fy, dtype=np.float64)
    cand = _candidate_cells(fx) & _candidate_cells(fy)
    jj, ii = np.nonzero(cand)
    if jj.size == 0:
        return []

    ax, bx, cx, dx = _bilinear_coeffs(fx, jj, ii)
    ay, by, cy, dy = _bilinear_coeffs(fy, jj, ii)

    # Roots of fx = fy = 0: eliminate u to get a quadratic in v.
    qa = cy * dx - dy * cx
    qb = ay * dx - by * cx + cy * bx - dy * ax
    qc = ay * bx - by * ax

    pts_x: list[np.ndarray] = []
    pts_y: list[np.ndarray] = []

    is_quad = np.abs(qa) > 1e-14
    disc = qb * qb - 4.0 * qa * qc
    ok_quad = is_quad & (disc >= 0.0)
    sq = np.sqrt(np.where(ok_quad, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        v_quad_1 = np.where(ok_quad, (-qb + sq) / (2.0 * qa), np.nan)
        v_quad_2 = np.where(ok_quad, (-qb - sq) / (2.0 * qa), np.nan)
        v_lin = np.where(~is_quad & (np.abs(qb) > 1e-14), -qc / qb, np.nan)

    for v_root in (v_quad_1, v_quad_2, v_lin):
        in_v = np.isfinite(v_root) & (v_root >= -1e-9) & (v_root <= 1.0 + 1e-9)
        den_x = bx + dx * v_root
        den_y = by + dy * v_root
        with np.errstate(divide="ignore", invalid="ignore"):
            u_from_x = -(ax + cx * v_root) / den_x
            u_from_y = -(ay + cy * v_root) / den_y
        u_root = np.where(np.abs(den_x) > 1e-12, u_from_x, u_from_y)
        usable = in_v & (np.maximum(np.abs(den_x), np.abs(den_y)) > 1e-12)
        in_u = usable & np.isfinite(u_root) & (u_root >= -1e-9) & (u_root <= 1.0 + 1e-9)
        pts_x.append(ii[in_u] + np.clip(u_root[in_u], 0.0, 1.0))
        pts_y.append(jj[in_u] + np.clip(v_root[in_u], 0.0, 1.0))

    # Cells the closed form could not decide: both-degenerate denominators
    # or a vanishing quadratic with vanishing linear part.
    needs_newton = (~is_quad & (np.abs(qb) <= 1e-14)) | (
        (np.abs(bx) <= 1e-12) & (np.abs(dx) <= 1e-12)
        & (np.abs(by) <= 1e-12) & (np.abs(dy) <= 1e-12)
    )
    n_failed = 0
    for k in np.nonzero(needs_newton)[0]:
        got = _newton_in_cell(fx, fy, int(jj[k]), int(ii[k]))
        if got is None:
            n_failed += 1
            continue
        u, v = got
        pts_x.append(np.array([ii[k] + u]))
        pts_y.append(np.array([jj[k] + v]))
    if n_failed:
        log.debug("critical-point search dropped %d non-convergent cells", n_failed)

    px = np.concatenate(pts_x) if pts_x else np.empty(0)
    py = np.concatenate(pts_y) if pts_y else np.empty(0)
    if px.size == 0:
        return []

    # Deterministic dedup: row-major order, keep the first of any cluster.
    order = np.lexsort((px, py))
    px, py = px[order], py[order]
    h_img, w_img = fx.shape
    keep = _dedup_mask(px, py, w_img, h_img, _DEDUP_RADIUS**2)
    kx, ky = px[keep], py[keep]
    if kx.size == 0:
        return []

    # Classify every survivor at once; same branch precedence as
    # classify_jacobian, which stays the single-point reference.
    ci = np.clip(np.floor(kx).astype(np.int64), 0, w_img - 2)
    cj = np.clip(np.floor(ky).astype(np.int64), 0, h_img - 2)
    u = kx - ci
    v = ky - cj
    _, b1, c1, d1 = _bilinear_coeffs(fx, cj, ci)
    _, b2, c2, d2 = _bilinear_coeffs(fy, cj, ci)
    j11 = b1 + d1 * v
    j12 = c1 + d1 * u
    j21 = b2 + d2 * v
    j22 = c2 + d2 * u
    tr = j11 + j22
    det = j11 * j22 - j12 * j21
    disc = tr * tr / 4.0 - det
    near_sing = np.abs(det) < _DEGENERATE_TOL
    real = disc >= 0.0
    code = np.full(kx.size, 5, dtype=np.int8)
    code[real & (tr < 0.0)] = 2
    code[real & (tr >= 0.0)] = 3
    code[real & (det < 0.0)] = 1
    code[~real & (tr < 0.0)] = 4
    code[~real & (np.abs(tr) < _DEGENERATE_TOL)] = 0
    code[near_sing] = 0
    kinds = ("degenerate", "saddle", "minimum", "maximum",
             "spiral-sink", "spiral-source")
    half = tr / 2.0
    re_off = np.where(near_sing, 0.0, np.where(real, np.sqrt(np.maximum(disc, 0.0)), 0.0))
    im_off = np.where(near_sing, 0.0, np.where(real, 0.0, np.sqrt(np.maximum(-disc, 0.0))))
    jacs = np.empty((kx.size, 2, 2))
    jacs[:, 0, 0] = j11
    jacs[:, 0, 1] = j12
    jacs[:, 1, 0] = j21
    jacs[:, 1, 1] = j22
    return [
        CriticalPoint(
            x=float(kx[i]), y=float(ky[i]), kind=kinds[code[i]],
            eigenvalues=(complex(half[i] + re_off[i], im_off[i]),
                         complex(half[i] - re_off[i], -im_off[i])),
            jacobian=jacs[i],
        )
        for i in range(kx.size)
    ]


# ---------------------------------------------------------------------------
# Streamline engines (batched over many start points)


def _force_sampler(force: ForceField):
    fx, fy = force.fx, force.fy

    def sample(p: np.ndarray) -> np.ndarray:
        out = np.empty_like(p)
        out[..., 0] = bilinear(fx, p[..., 0], p[..., 1])
        out[..., 1] = bilinear(fy, p[..., 0], p[..., 1])
        return out

    return sample


def _unit_field_factory(sample, sign: float):
    """Unit-speed version of the flow: same streamlines, uniform pace.

    Normalizing the field decouples step size from field strength, so the
    adaptive controller resolves geometry (curvature) instead of crawling
    through weak-field regions.  Stagnation is still detected on the raw
    magnitude by the callers.
    """

    def unit(p: np.ndarray) -> np.ndarray:
        f = sample(p)
        mag = np.sqrt(np.sum(f * f, axis=-1, keepdims=True))
        return sign * f / np.maximum(mag, 1e-300)

    return unit


@njit(cache=True, inline="always")
def _bilin_scalar(field, x, y):
    h, w = field.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1.0:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1.0:
        y = h - 1.0
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    top = field[y0, x0] * (1.0 - wx) + field[y0, x1] * wx
    bot = field[y1, x0] * (1.0 - wx) + field[y1, x1] * wx
    return top * (1.0 - wy) + bot * wy


@njit(cache=True, inline="always")
def _nearest_capture(x, y, tgt_xy, cand_data, cand_ptr, w):
    """Nearest capture/stop target to (x, y) among same-cell candidates.

    The candidate lists cover every target within the capture radius of
    any point in the cell, so a miss here is a true miss.  Candidates are
    stored in ascending index order and compared strictly, which pins
    tie-breaking to the lowest index.
    """
    c = int(np.floor(y)) * w + int(np.floor(x))
    best = -1
    best_d2 = 1e300
    for k in range(cand_ptr[c], cand_ptr[c + 1]):
        j = cand_data[k]
        dx = x - tgt_xy[j, 0]
        dy = y - tgt_xy[j, 1]
        d2 = dx * dx + dy * dy
        if d2 < best_d2:
            best_d2 = d2
            best = j
    return best, best_d2


@njit(cache=True, inline="always")
def _mark_segment(raster, x0, y0, x1, y1):
    """Mark the 8-connected pixel chain under one polyline segment."""
    h, w = raster.shape
    span = max(abs(x1 - x0), abs(y1 - y0))
    n = int(np.ceil(span / 0.45)) + 1
    if n < 2:
        n = 2
    for s in range(n):
        t = s / (n - 1)
        xi = int(np.rint(x0 + (x1 - x0) * t))
        yi = int(np.rint(y0 + (y1 - y0) * t))
        if xi < 0:
            xi = 0
        elif xi >= w:
            xi = w - 1
        if yi < 0:
            yi = 0
        elif yi >= h:
            yi = h - 1
        raster[yi, xi] = True


@njit(cache=True, inline="always")
def _nearest_label_target(x, y, tgt_xy, cand_data, cand_ptr, w, n_lab):
    """Like ``_nearest_capture`` but restricted to labelable targets."""
    c = int(np.floor(y)) * w + int(np.floor(x))
    best = -1
    best_d2 = 1e300
    for k in range(cand_ptr[c], cand_ptr[c + 1]):
        j = cand_data[k]
        if j >= n_lab:
            continue
        dx = x - tgt_xy[j, 0]
        dy = y - tgt_xy[j, 1]
        d2 = dx * dx + dy * dy
        if d2 < best_d2:
            best_d2 = d2
            best = j
    return best, best_d2


@njit(cache=True)
def _advance_kernel(fx, fy, pos, h, reason, target, sign, stag_tol,
                    tol, h_min, h_max, max_steps, tgt_xy, n_cap, cap_r,
                    cand_data, cand_ptr, arc_budget, border_exits,
                    raster, do_raster, review_every, review_min,
                    labels_grid, do_absorb, n_label):
    """Compiled per-trace streamline engine; see ``_run_streamlines``.

    Replicates the vectorized engine step for step: same samplers, same
    tableau arithmetic, same controller, same termination order within an
    attempt (stagnation, capture/stop at midpoint then endpoint, border,
    edge-pinning, arc budget, progress review).  The engines agree on
    every decision; positions may drift by rounding noise because the
    vectorized power in the step controller rounds its last bit
    differently than scalar pow on some inputs.  With ``do_raster`` each
    accepted segment and the closing hop to a capture/stop point are
    burned into ``raster`` pixel-chain style.

    With ``do_absorb`` traces are processed in array order and resolve a
    basin label: capture at target ``j < n_label`` means label j+1, any
    other ending labels 0, and stagnation within 1 px of a labelable
    target adopts it.  Every pixel an accepted step lands on inherits the
    trace's final label through ``labels_grid`` (0 undecided, -1 decided
    empty), and a trace reaching an already-decided pixel adopts its
    verdict on the spot — the decided pixel's own streamline continues
    from there, so walking it again would retrace known ground.  Reason
    code 6 marks such absorbed traces.
    """
    n = pos.shape[0]
    h_img, w_img = fx.shape
    b1h = 1.0 / 6.0
    b2h = 1.0 / 6.0
    b3h = 4.0 / 6.0
    accept_pad = h_min * (1.0 + 1e-12)
    cap_r2 = cap_r * cap_r
    path = np.empty(max_steps + 1, dtype=np.int64)
    for i in range(n):
        x = pos[i, 0]
        y = pos[i, 1]
        hi = h[i]
        arc = 0.0
        rev_x = x
        rev_y = y
        attempts = 0
        n_path = 0
        verdict = 0
        if do_absorb:
            start_pix = int(np.rint(y)) * w_img + int(np.rint(x))
            existing = labels_grid.flat[start_pix]
            if existing != 0:
                reason[i] = 6
                continue
            path[0] = start_pix
            n_path = 1
        while attempts < max_steps and reason[i] == 0:
            attempts += 1
            f0x = _bilin_scalar(fx, x, y)
            f0y = _bilin_scalar(fy, x, y)
            if np.hypot(f0x, f0y) < stag_tol:
                reason[i] = 2
                break
            # Three stages of the embedded pair on the unit-speed field;
            # the raw sample above doubles as stage one's field value.
            m1 = max(np.sqrt(f0x * f0x + f0y * f0y), 1e-300)
            k1x = sign * f0x / m1
            k1y = sign * f0y / m1
            p2x = x + hi * k1x
            p2y = y + hi * k1y
            f2x = _bilin_scalar(fx, p2x, p2y)
            f2y = _bilin_scalar(fy, p2x, p2y)
            m2 = max(np.sqrt(f2x * f2x + f2y * f2y), 1e-300)
            k2x = sign * f2x / m2
            k2y = sign * f2y / m2
            p3x = x + hi * (0.25 * k1x + 0.25 * k2x)
            p3y = y + hi * (0.25 * k1y + 0.25 * k2y)
            f3x = _bilin_scalar(fx, p3x, p3y)
            f3y = _bilin_scalar(fy, p3x, p3y)
            m3 = max(np.sqrt(f3x * f3x + f3y * f3y), 1e-300)
            k3x = sign * f3x / m3
            k3y = sign * f3y / m3
            yhx = x + hi * (b1h * k1x + b2h * k2x + b3h * k3x)
            yhy = y + hi * (b1h * k1y + b2h * k2y + b3h * k3y)
            ylx = x + hi * (0.5 * k1x + 0.5 * k2x)
            yly = y + hi * (0.5 * k1y + 0.5 * k2y)
            dx = yhx - ylx
            dy = yhy - yly
            err = np.sqrt(dx * dx + dy * dy)
            accepted = err <= tol or hi <= accept_pad
            factor = 0.9 * (tol / max(err, 1e-12)) ** (1.0 / 3.0)
            h_next = hi * factor
            if h_next < h_min:
                h_next = h_min
            elif h_next > h_max:
                h_next = h_max
            if accepted:
                out = yhx < 0.0 or yhx > w_img - 1.0 or yhy < 0.0 or yhy > h_img - 1.0
                mx = min(max(yhx, 0.0), w_img - 1.0)
                my = min(max(yhy, 0.0), h_img - 1.0)
                step_x = mx - x
                step_y = my - y
                pinned = step_x * step_x + step_y * step_y < 1e-18
                mid_x = 0.5 * (x + mx)
                mid_y = 0.5 * (y + my)
                if do_raster:
                    _mark_segment(raster, x, y, mx, my)
                x = mx
                y = my
                arc += hi
                if cand_ptr[cand_ptr.shape[0] - 1] > 0:
                    j, d2 = _nearest_capture(mid_x, mid_y, tgt_xy,
                                             cand_data, cand_ptr, w_img)
                    if j < 0 or d2 > cap_r2:
                        j, d2 = _nearest_capture(x, y, tgt_xy,
                                                 cand_data, cand_ptr, w_img)
                    if j >= 0 and d2 <= cap_r2:
                        if j < n_cap:
                            reason[i] = 3
                            target[i] = j
                            if do_absorb and j < n_label:
                                verdict = j + 1
                        else:
                            reason[i] = 5
                            target[i] = j - n_cap
                        if do_raster:
                            _mark_segment(raster, x, y,
                                          tgt_xy[j, 0], tgt_xy[j, 1])
                if reason[i] == 0 and do_absorb:
                    pix = int(np.rint(y)) * w_img + int(np.rint(x))
                    existing = labels_grid.flat[pix]
                    if existing != 0:
                        reason[i] = 6
                        verdict = existing
                    else:
                        path[n_path] = pix
                        n_path += 1
                if reason[i] == 0 and border_exits and out:
                    reason[i] = 1
                if reason[i] == 0 and pinned:
                    reason[i] = 2
                if reason[i] == 0 and arc > arc_budget:
                    reason[i] = 4
            hi = h_next
            if reason[i] == 0 and attempts % review_every == 0:
                if np.hypot(x - rev_x, y - rev_y) < review_min:
                    reason[i] = 4
                else:
                    rev_x = x
                    rev_y = y
        if reason[i] == 0:
            reason[i] = 4
        if do_absorb:
            # A stagnated trace parked right on top of a labelable target
            # (within 1 px) still counts as converged to it.
            if verdict == 0 and reason[i] == 2:
                j, d2 = _nearest_label_target(x, y, tgt_xy, cand_data,
                                              cand_ptr, w_img, n_label)
                if j >= 0 and d2 <= 1.0:
                    verdict = j + 1
            mark = verdict if verdict > 0 else -1
            for k in range(n_path):
                labels_grid.flat[path[k]] = mark
        pos[i, 0] = x
        pos[i, 1] = y
        h[i] = hi


def _capture_cells(all_targets: np.ndarray | None, shape):
    """CSR candidate lists: per pixel cell, targets capturable from it.

    A point in cell (ix, iy) can only lie within the capture radius of a
    target whose own cell is at Chebyshev distance <= 1, so every target
    is stamped into its 3x3 cell neighborhood.  Per-cell lists end up in
    ascending target order, fixing tie-breaks deterministically.
    """
    h, w = shape
    ptr = np.zeros(h * w + 1, dtype=np.int64)
    if all_targets is None or len(all_targets) == 0:
        return np.empty(0, dtype=np.int64), ptr
    ix = np.floor(all_targets[:, 0]).astype(np.int64)
    iy = np.floor(all_targets[:, 1]).astype(np.int64)
    cells = []
    owners = []
    idx = np.arange(len(all_targets), dtype=np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            jx = ix + dx
            jy = iy + dy
            ok = (jx >= 0) & (jx < w) & (jy >= 0) & (jy < h)
            cells.append(jy[ok] * w + jx[ok])
            owners.append(idx[ok])
    cell = np.concatenate(cells)
    owner = np.concatenate(owners)
    order = np.lexsort((owner, cell))
    cell = cell[order]
    data = owner[order]
    counts = np.bincount(cell, minlength=h * w)
    ptr[1:] = np.cumsum(counts)
    return data, ptr


def _fast_streamlines(
    force: ForceField,
    starts: np.ndarray,
    cfg: IntegratorConfig,
    stagnation_tol: float,
    direction: str,
    targets: np.ndarray | None = None,
    capture_radius: float = _CAPTURE_RADIUS,
    stop_targets: np.ndarray | None = None,
    raster: np.ndarray | None = None,
    labels_grid: np.ndarray | None = None,
    n_label: int = 0,
):
    """Compiled twin of ``_run_streamlines`` for ``collect=False`` runs.

    Returns ``(final_pos, reason, target_idx)``; with ``raster`` given,
    additionally burns every accepted ascent segment into that mask.
    With ``labels_grid`` the traces label as they go: each resolves to a
    basin verdict (capture at targets[j], j < n_label -> label j+1,
    otherwise no label), stamps it along its path, and absorbs into
    already-decided pixels instead of retracing them.
    """
    fx = np.ascontiguousarray(force.fx, dtype=np.float64)
    fy = np.ascontiguousarray(force.fy, dtype=np.float64)
    h_img, w_img = fx.shape
    sign = -1.0 if direction == "ascent" else 1.0

    pos = np.array(starts, dtype=np.float64, copy=True).reshape(-1, 2)
    np.clip(pos[:, 0], 0.0, w_img - 1.0, out=pos[:, 0])
    np.clip(pos[:, 1], 0.0, h_img - 1.0, out=pos[:, 1])
    n = pos.shape[0]
    h = np.full(n, cfg.h_init)
    reason = np.zeros(n, dtype=np.int8)
    target = np.full(n, -1, dtype=np.int64)

    n_cap = 0 if targets is None else len(targets)
    parts = [np.asarray(t, dtype=np.float64).reshape(-1, 2)
             for t in (targets, stop_targets) if t is not None and len(t)]
    all_targets = np.concatenate(parts) if parts else np.empty((0, 2))
    cand_data, cand_ptr = _capture_cells(
        all_targets if len(all_targets) else None, (h_img, w_img))

    do_raster = raster is not None
    raster_arr = raster if do_raster else np.zeros((1, 1), dtype=bool)
    do_absorb = labels_grid is not None
    grid_arr = labels_grid if do_absorb else np.zeros((1, 1), dtype=np.int32)
    _advance_kernel(
        fx, fy, pos, h, reason, target, sign, stagnation_tol,
        cfg.tol, cfg.h_min, cfg.h_max, cfg.max_steps,
        all_targets, n_cap, capture_radius, cand_data, cand_ptr,
        _ARC_BUDGET_FACTOR * (h_img + w_img), direction == "ascent",
        raster_arr, do_raster, _PROGRESS_CHECK_EVERY, _PROGRESS_MIN_PX,
        grid_arr, do_absorb, n_label,
    )
    return pos, reason, target


def _run_streamlines(
    force: ForceField,
    starts: np.ndarray,
    cfg: IntegratorConfig,
    stagnation_tol: float,
    direction: str,
    collect: bool,
    targets: np.ndarray | None = None,
    capture_radius: float = _CAPTURE_RADIUS,
    stop_targets: np.ndarray | None = None,
):
    """Advance many streamlines at once until each terminates.

    The integrated field is normalized to unit speed, which leaves the
    streamlines unchanged but lets the step controller resolve geometry
    instead of crawling through weak-field stretches; stagnation is still
    judged on the raw magnitude.  Per-trace termination: raw magnitude
    below ``stagnation_tol`` (stagnation), proximity to one of the
    ``targets`` (capture; tested at step end AND midpoint so a long step
    cannot fly over its target), proximity to a ``stop_targets`` point
    (stop: the trace parks there without claiming a capture — used for
    critical points the flow can only creep past at the minimum step
    size), leaving the frame (border; ascent only — descent is clamped
    to the frame and carries on), or running out of attempts or arc
    length (truncation; rejected steps count, so rejection cannot loop
    forever).  With ``collect`` the visited points are recorded.

    Returns ``(final_pos, reason, polylines, target_idx)`` with reason
    codes 1 border, 2 stagnation, 3 captured, 4 truncated, 5 stopped.
    For reason 5 ``target_idx`` indexes ``stop_targets``.
    """
    if not collect:
        pos, reason, target = _fast_streamlines(
            force, starts, cfg, stagnation_tol, direction,
            targets=targets, capture_radius=capture_radius,
            stop_targets=stop_targets,
        )
        return pos, reason, [], target
    sample = _force_sampler(force)
    sign = -1.0 if direction == "ascent" else 1.0
    unit = _unit_field_factory(sample, sign)
    h_img, w_img = force.shape
    border_exits = direction == "ascent"

    pos = np.array(starts, dtype=np.float64, copy=True)
    np.clip(pos[:, 0], 0.0, w_img - 1.0, out=pos[:, 0])
    np.clip(pos[:, 1], 0.0, h_img - 1.0, out=pos[:, 1])
    n = pos.shape[0]
    h = np.full(n, cfg.h_init)
    reason = np.zeros(n, dtype=np.int8)
    target = np.full(n, -1, dtype=np.int64)
    polylines: list[list[tuple[float, float]]] = (
        [[(float(p[0]), float(p[1]))] for p in pos] if collect else []
    )

    # Capture and stop targets share one tree; rows below n_cap capture
    # (reason 3), rows at or above it stop (reason 5).
    n_cap = 0 if targets is None else len(targets)
    parts = [np.asarray(t, dtype=np.float64).reshape(-1, 2)
             for t in (targets, stop_targets) if t is not None and len(t)]
    all_targets = np.concatenate(parts) if parts else None

    tree = None
    if all_targets is not None and len(all_targets) >= 16:
        tree = cKDTree(all_targets)

    def _capture_check(active_idx: np.ndarray, mid: np.ndarray, end: np.ndarray) -> None:
        if all_targets is None:
            return
        pts = np.concatenate([mid, end])
        if tree is not None:
            dist, near = tree.query(pts, k=1)
        else:
            d2 = np.sum((pts[:, None, :] - all_targets[None, :, :]) ** 2, axis=-1)
            near = np.argmin(d2, axis=1)
            dist = np.sqrt(d2[np.arange(len(pts)), near])
        m = len(active_idx)
        hit = dist <= capture_radius
        # The midpoint is passed first, so it wins when both samples hit.
        for half in (slice(0, m), slice(m, 2 * m)):
            sel = hit[half] & (reason[active_idx] == 0)
            idx = active_idx[sel]
            near_h = near[half][sel]
            is_cap = near_h < n_cap
            reason[idx] = np.where(is_cap, 3, 5).astype(np.int8)
            target[idx] = np.where(is_cap, near_h, near_h - n_cap)

    # A streamline that has traveled this far without terminating is
    # orbiting a cycle of the (slightly non-conservative, truncated)
    # field; give it up as truncated rather than burn the step budget.
    arc_budget = _ARC_BUDGET_FACTOR * (h_img + w_img)
    arc = np.zeros(n)
    # Traces pinned at the minimum step size can outlast the arc budget
    # by pure slowness; a trace whose position barely moves across a
    # whole review window is parked for good and is truncated too.
    last_review = pos.copy()

    for it in range(cfg.max_steps):
        active = np.nonzero(reason == 0)[0]
        if active.size == 0:
            break
        p_act = pos[active]
        f_raw = sample(p_act)
        mag = np.hypot(f_raw[:, 0], f_raw[:, 1])
        stagnant = mag < stagnation_tol
        if np.any(stagnant):
            reason[active[stagnant]] = 2
            active = active[~stagnant]
            if active.size == 0:
                continue
            p_act = pos[active]

        h_try = h[active]
        y_high, err = integrate_step(unit, p_act, h_try, direction="descent")
        accept, h_next = adapt_step(err, h_try, cfg)
        h[active] = h_next

        acc_idx = active[accept]
        if acc_idx.size:
            moved = y_high[accept]
            out = (
                (moved[:, 0] < 0.0) | (moved[:, 0] > w_img - 1.0)
                | (moved[:, 1] < 0.0) | (moved[:, 1] > h_img - 1.0)
            )
            moved[:, 0] = np.clip(moved[:, 0], 0.0, w_img - 1.0)
            moved[:, 1] = np.clip(moved[:, 1], 0.0, h_img - 1.0)
            # A clamped step that makes no progress means the flow is
            # pinned against the frame edge; stop it as stagnant.
            pinned = np.einsum("ij,ij->i", moved - pos[acc_idx], moved - pos[acc_idx]) < 1e-18
            mid = 0.5 * (pos[acc_idx] + moved)
            pos[acc_idx] = moved
            arc[acc_idx] += h_try[accept]
            if collect:
                for trace_i, p in zip(acc_idx, moved):
                    polylines[trace_i].append((float(p[0]), float(p[1])))
            _capture_check(acc_idx, mid, pos[acc_idx])
            if border_exits:
                hit_border = acc_idx[out & (reason[acc_idx] == 0)]
                reason[hit_border] = 1
            stuck = acc_idx[pinned & (reason[acc_idx] == 0)]
            reason[stuck] = 2
            over = acc_idx[(arc[acc_idx] > arc_budget) & (reason[acc_idx] == 0)]
            reason[over] = 4
        if (it + 1) % _PROGRESS_CHECK_EVERY == 0:
            live = np.nonzero(reason == 0)[0]
            if live.size:
                moved_px = np.hypot(pos[live, 0] - last_review[live, 0],
                                    pos[live, 1] - last_review[live, 1])
                reason[live[moved_px < _PROGRESS_MIN_PX]] = 4
                last_review[live] = pos[live]
    reason[reason == 0] = 4
    return pos, reason, polylines, target


def descend(
    force: ForceField,
    starts: np.ndarray,
    cfg: IntegratorConfig,
    minima: np.ndarray,
    stagnation_tol: float = 1e-6,
):
    """Adaptive descent from start points with capture at given minima.

    Returns ``(final_pos, minimum_index)`` where the index is -1 for
    descents that stagnated or ran out of steps away from every minimum.
    """
    final, reason, _, target = _run_streamlines(
        force, np.asarray(starts, dtype=np.float64), cfg, stagnation_tol,
        direction="descent", collect=False, targets=np.asarray(minima, dtype=np.float64),
    )
    return final, target


def trace_separatrix(
    saddle: CriticalPoint,
    force: ForceField,
    cfg: IntegratorConfig,
    stagnation_tol: float = 1e-6,
    repellers: np.ndarray | None = None,
    stops: np.ndarray | None = None,
):
    """Trace the two ridge branches leaving a saddle against the flow.

    Seeds sit half a pixel from the saddle along +/- the direction that
    expands under ascent (the eigenvector whose eigenvalue is negative
    for the plain flow), then follow the ascending flow until it reaches
    a repelling point of the descent flow (pass their positions as
    ``repellers``), a parking point (``stops``, typically other saddles),
    the image border, or stagnation.  Returns ``(branches, truncated)``
    where ``branches`` is a pair of (m, 2) polylines and ``truncated``
    flags step-budget exits.
    """
    if saddle.kind != "saddle":
        raise ParameterError(f"separatrix tracing needs a saddle, got {saddle.kind}")
    starts = _separatrix_seeds(np.array([saddle.jacobian]),
                               np.array([[saddle.x, saddle.y]]))
    _, reason, polylines, target = _run_streamlines(
        force, starts, cfg, stagnation_tol, direction="ascent", collect=True,
        targets=repellers, stop_targets=stops,
    )
    _close_captured(polylines, reason, target, repellers, stops)
    branches = tuple(np.array(p) for p in polylines)
    truncated = tuple(bool(r == 4) for r in reason)
    return branches, truncated


def _close_captured(polylines, reason, target, targets, stop_targets=None) -> None:
    """Extend captured or stopped traces to the exact terminating point."""
    for i, r in enumerate(reason):
        if r == 3 and targets is not None:
            t = targets[target[i]]
        elif r == 5 and stop_targets is not None:
            t = stop_targets[target[i]]
        else:
            continue
        polylines[i].append((float(t[0]), float(t[1])))


def _separatrix_seeds(jacobians: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Both seed points for each saddle: center +/- offset along the ridge."""
    seeds = np.empty((2 * len(centers), 2))
    for i, (jac, c) in enumerate(zip(jacobians, centers)):
        tr = jac[0, 0] + jac[1, 1]
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        disc = max(tr * tr / 4.0 - det, 0.0)
        lam_neg = tr / 2.0 - np.sqrt(disc)  # the contracting (descent) eigenvalue
        v = _real_eigenvector(jac, lam_neg)
        seeds[2 * i] = c + _SEED_OFFSET * v
        seeds[2 * i + 1] = c - _SEED_OFFSET * v
    return seeds


# ---------------------------------------------------------------------------
# Basin extraction


def _raster_polyline(mask: np.ndarray, pts: np.ndarray) -> None:
    """Mark an 8-connected chain of pixels along a polyline.

    Vertices are at most one integration step (a few pixels) apart, so
    subsampling each segment finely enough that consecutive samples sit
    under half a pixel apart guarantees the rounded chain stays
    8-connected.
    """
    if len(pts) == 0:
        return
    h, w = mask.shape
    if len(pts) == 1:
        seg = pts
    else:
        a = pts[:-1]
        b = pts[1:]
        span = np.abs(b - a).max()
        n_sub = max(int(np.ceil(span / 0.45)), 1) + 1
        t = np.linspace(0.0, 1.0, n_sub)
        seg = (a[:, None, :] + (b - a)[:, None, :] * t[None, :, None]).reshape(-1, 2)
    xs = np.clip(np.rint(seg[:, 0]).astype(np.int64), 0, w - 1)
    ys = np.clip(np.rint(seg[:, 1]).astype(np.int64), 0, h - 1)
    mask[ys, xs] = True


def _rasterize_boundary(shape, saddles, branch_pairs) -> np.ndarray:
    """Burn traced separatrices (joined through their saddles) into a mask."""
    boundary = np.zeros(shape, dtype=bool)
    for saddle, (br_a, br_b) in zip(saddles, branch_pairs):
        for br in (br_a, br_b):
            if len(br) == 0:
                continue
            chain = np.vstack([[[saddle.x, saddle.y]], br])
            _raster_polyline(boundary, chain)
    return boundary


def extract_basins(
    force: ForceField,
    points: list[CriticalPoint],
    cfg: IntegratorConfig,
    stagnation_tol: float = 1e-6,
) -> BasinExtraction:
    """Partition the frame into basins of the attracting critical points.

    Ridges traced out of every saddle are rasterized into a boundary mask;
    the 4-connected regions between them that contain exactly one
    attracting point take its label.  Boundary pixels, regions with zero
    or several attracting points, and anything else left ambiguous fall
    back to direct descent with capture at the nearest attracting point.
    Pixels where the raw field is below the stagnation tolerance stay
    unlabeled (0), as do descents that exhaust the step budget.

    Labels follow row-major order of the attracting points: 1..K.
    """
    h_img, w_img = force.shape
    mins = [p for p in points if p.attracting]
    order = np.lexsort(
        (np.array([p.x for p in mins]), np.array([p.y for p in mins]))
    ) if mins else np.empty(0, dtype=np.int64)
    mins = [mins[i] for i in order]
    minima_xy = np.array([[p.x, p.y] for p in mins]) if mins else np.empty((0, 2))
    labels = np.zeros((h_img, w_img), dtype=np.int32)
    if not mins:
        log.debug("basin extraction found no attracting points; empty map")
        return BasinExtraction(labels=labels, minima=minima_xy)

    saddles = [p for p in points if p.kind == "saddle"]
    repellers = np.array(
        [[p.x, p.y] for p in points if p.kind in ("maximum", "spiral-source")]
    )
    boundary = np.zeros((h_img, w_img), dtype=bool)
    n_trunc = 0
    if saddles:
        starts = _separatrix_seeds(
            np.array([s.jacobian for s in saddles]),
            np.array([[s.x, s.y] for s in saddles]),
        )
        # Saddles and degenerate points are where an ascending ridge can
        # only creep at the minimum step size; parking a trace there is
        # also topologically right — the ridge web continues through that
        # point's own branches, so the boundary stays sealed.
        hazards = np.array(
            [[p.x, p.y] for p in points if p.kind in ("saddle", "degenerate")]
        )
        _, reason, _ = _fast_streamlines(
            force, starts, cfg, stagnation_tol, direction="ascent",
            targets=repellers if repellers.size else None,
            stop_targets=hazards if hazards.size else None,
            raster=boundary,
        )
        n_trunc = int(np.sum(reason == 4))
        # The engine burns each branch from its seed on; the half-pixel
        # hop from the saddle itself to the seed still needs sealing.
        anchors = np.repeat(
            np.array([[s.x, s.y] for s in saddles]), 2, axis=0)
        for t in (0.0, 0.5, 1.0):
            seg = anchors + t * (starts - anchors)
            bx = np.clip(np.rint(seg[:, 0]).astype(np.int64), 0, w_img - 1)
            by = np.clip(np.rint(seg[:, 1]).astype(np.int64), 0, h_img - 1)
            boundary[by, bx] = True

    mag = force.magnitude()
    stagnant_px = mag < stagnation_tol

    # Stagnant pixels cannot belong to any basin, and they double as
    # barriers: a ridge trace that stops at the rim of a dead zone still
    # seals its boundary because the zone itself blocks the flood.
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    comp, n_comp = ndimage.label(~boundary & ~stagnant_px, structure=four)

    # Component -> contained attracting points.
    comp_owner = np.zeros(n_comp + 1, dtype=np.int64)  # 0 none, -1 contested
    min_px = np.clip(np.rint(minima_xy[:, 0]).astype(int), 0, w_img - 1)
    min_py = np.clip(np.rint(minima_xy[:, 1]).astype(int), 0, h_img - 1)
    claims: list[tuple[int, int]] = []
    for i, (mx, my) in enumerate(zip(min_px, min_py)):
        c = comp[my, mx]
        if c == 0:
            # The attracting point rounds onto a boundary pixel; its
            # basin is whichever region touches that pixel, so stake a
            # claim on the 4-neighbor components (contested like any).
            for ny, nx in ((my - 1, mx), (my + 1, mx), (my, mx - 1), (my, mx + 1)):
                if 0 <= ny < h_img and 0 <= nx < w_img and comp[ny, nx] != 0:
                    claims.append((comp[ny, nx], i))
            continue
        claims.append((c, i))
    for c, i in claims:
        if comp_owner[c] == 0:
            comp_owner[c] = i + 1
        elif comp_owner[c] != i + 1:
            comp_owner[c] = -1
    lut = np.where(comp_owner > 0, comp_owner, 0).astype(np.int32)
    labels = lut[comp]

    ambiguous = boundary | np.isin(comp, np.nonzero(comp_owner == -1)[0])
    ambiguous |= labels == 0
    ambiguous &= ~stagnant_px
    n_fallback = int(np.count_nonzero(ambiguous))
    if n_fallback:
        yy, xx = np.nonzero(ambiguous)
        starts = np.column_stack([xx, yy]).astype(np.float64)
        # Non-attracting critical points are stop-targets too: a descent
        # riding a ridge straight into a saddle would otherwise ping-pong
        # there at the minimum step size until the budget runs out.  The
        # engine labels in place: each trace stamps its verdict onto the
        # pixels it crossed, and later traces inherit a decided pixel's
        # verdict instead of retracing the same streamline.
        others = np.array([[p.x, p.y] for p in points if not p.attracting])
        stops = (
            np.vstack([minima_xy, others]) if others.size else minima_xy
        )
        labels[yy, xx] = 0
        _fast_streamlines(
            force, starts, cfg, stagnation_tol, direction="descent",
            targets=stops, labels_grid=labels, n_label=len(minima_xy),
        )
        np.maximum(labels, 0, out=labels)

    labels[stagnant_px] = 0
    return BasinExtraction(
        labels=labels,
        minima=minima_xy,
        n_fallback_pixels=n_fallback,
        n_truncated_traces=n_trunc,
    )


def significant_minima(extraction: BasinExtraction, min_area: float) -> list[int]:
    """Basin labels whose pixel count reaches ``min_area``, ascending."""
    if min_area < 0:
        raise ParameterError(f"min_area must be >= 0, got {min_area}")
    labels = extraction.labels
    counts = np.bincount(labels.ravel(), minlength=len(extraction.minima) + 1)
    return [int(l) for l in range(1, len(counts)) if counts[l] >= min_area]


# ---------------------------------------------------------------------------
# Independent per-pixel oracle


def drop_of_water_oracle(force: ForceField, stagnation_tol: float = 1e-6) -> np.ndarray:
    """Label basins by greedy pixel-to-pixel walks; slow but independent.

    From each pixel, step to the 8-neighbor best aligned with the local
    force (largest f . step direction); repeat until a pixel with no
    improving neighbor.  Pixels with force magnitude below
    ``stagnation_tol`` are plateau members and label 0 outright, matching
    the stagnation rule of the streamline route.  The two pixels
    straddling a converged point inevitably elect each other, so mutual
    pairs — and more generally each 8-connected clump of resting pixels —
    count as one joint terminus; walks entering any longer cycle
    (possible on contrived fields, where the drop finds no resting place)
    label 0.  Real termini become labels 1..K in row-major order.

    Walks are resolved by pointer doubling over the successor map, which
    memoizes whole paths instead of re-walking them pixel by pixel.
    """
    fx = np.asarray(force.fx, dtype=np.float64)
    fy = np.asarray(force.fy, dtype=np.float64)
    h, w = fx.shape
    n = h * w

    best_score = np.full((h, w), -np.inf)
    best_nb = np.arange(n, dtype=np.int64).reshape(h, w)  # default: self

    offsets = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
    for dx, dy in offsets:
        norm = float(np.hypot(dx, dy))
        ux, uy = dx / norm, dy / norm
        score = np.full((h, w), -np.inf)
        ys_src = slice(max(0, -dy), min(h, h - dy))
        xs_src = slice(max(0, -dx), min(w, w - dx))
        score[ys_src, xs_src] = fx[ys_src, xs_src] * ux + fy[ys_src, xs_src] * uy
        better = score > best_score
        if np.any(better):
            yy, xx = np.nonzero(better)
            best_score[yy, xx] = score[yy, xx]
            best_nb[yy, xx] = (yy + dy) * w + (xx + dx)

    succ = best_nb.ravel().copy()
    own = np.arange(n, dtype=np.int64)
    weak = (np.hypot(fx, fy) < stagnation_tol).ravel()
    terminus = (best_score <= 0.0).ravel() | weak
    succ[terminus] = own[terminus]

    # Collapse mutual pairs into joint termini anchored at the lower index.
    pair = (succ[succ] == own) & (succ != own)
    canon = np.minimum(own, succ)
    succ[pair] = canon[pair]
    terminus |= pair

    # Pointer doubling: after k squarings each pixel points 2^k steps
    # ahead (saturating at self-looping termini); longer cycles never
    # stabilize and are detected by where the walk lands.
    for _ in range(30):
        nxt = succ[succ]
        if np.array_equal(nxt, succ):
            break
        succ = nxt

    # Cluster the alive resting pixels into pools; weak termini stay
    # label 0, and so does everything landing on them or in a cycle.
    alive_term = (terminus & ~weak).reshape(h, w)
    pool, _ = ndimage.label(alive_term, structure=np.ones((3, 3), bool))
    pool = pool.ravel()
    labels = np.where(terminus[succ], pool[succ], 0)
    return labels.reshape(h, w).astype(np.int32)
