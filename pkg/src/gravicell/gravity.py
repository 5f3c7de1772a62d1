"""Force- and potential-field transforms of an intensity image.

Every pixel acts as a point mass proportional to its brightness and pulls
on every other pixel with an inverse-square law.  Influence is truncated
at a configurable radius (on the order of one cell diameter), which turns
the field into a correlation with a pair of fixed kernels; bright cell
centers become attracting wells of the resulting vector field.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .errors import ParameterError

#: Gravitational constant; kept explicit so the kernel formulas read like
#: the physics they mimic, even though it only scales the field globally.
G_CONSTANT = 1.0

#: Below this radius a direct sliding-window correlation beats the FFT.
_DIRECT_RADIUS_MAX = 15


@dataclass(frozen=True)
class GravityKernels:
    """Truncated inverse-square kernels for one radius/softening setting."""

    radius: int
    softening_eps: float
    kx: np.ndarray = field(repr=False)
    ky: np.ndarray = field(repr=False)
    kp: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ForceField:
    """Per-pixel attraction vector, split into x and y components."""

    fx: np.ndarray = field(repr=False)
    fy: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.fx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.fx, self.fy)


def build_kernels(radius: int, softening_eps: float = 0.5) -> GravityKernels:
    """Construct the (2r+1)^2 correlation kernels for a truncation radius.

    For an offset d = (dx, dy) the force kernel is G * d / |d|^3 (a unit
    mass at distance |d| pulling along d) and the potential kernel is
    -G / |d|.  Distances are floored at ``softening_eps`` so the immediate
    neighborhood cannot blow up; the center tap is zero force and carries
    the softened self-potential.
    """
    if radius < 1:
        raise ParameterError(f"kernel radius must be >= 1, got {radius}")
    if softening_eps < 0:
        raise ParameterError(f"softening must be >= 0, got {softening_eps}")
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    dist = np.hypot(dx, dy)
    safe = np.maximum(dist, max(softening_eps, 1e-12))
    inv_cube = G_CONSTANT / safe**3
    kx = dx * inv_cube
    ky = dy * inv_cube
    kp = -G_CONSTANT / safe
    # A pixel exerts no force on itself; its self-potential is softened.
    kx[radius, radius] = 0.0
    ky[radius, radius] = 0.0
    kp[radius, radius] = -G_CONSTANT / max(softening_eps, 0.5)
    return GravityKernels(radius=radius, softening_eps=softening_eps, kx=kx, ky=ky, kp=kp)


def _correlate(img: np.ndarray, kernel: np.ndarray, radius: int) -> np.ndarray:
    """Correlate with mirror-reflected borders (no edge duplication).

    Small kernels run as direct sliding windows; large ones go through an
    FFT on an explicitly padded copy.  Both paths agree to rounding error.
    """
    if radius <= _DIRECT_RADIUS_MAX:
        return ndimage.correlate(img, kernel, mode="mirror")
    padded = np.pad(img, radius, mode="reflect")
    return fftconvolve(padded, kernel[::-1, ::-1], mode="valid")


def force_field(img: np.ndarray, kernels: GravityKernels) -> ForceField:
    """Attraction vector at every pixel from all masses within the radius.

    The field points toward brightness: a pixel to the left of a bright
    blob gets positive fx.  Borders are mirror-padded so edge pixels see a
    reflected copy of the interior instead of vacuum.
    """
    img = np.asarray(img, dtype=np.float64)
    _check_radius(img.shape, kernels.radius)
    fx = _correlate(img, kernels.kx, kernels.radius)
    fy = _correlate(img, kernels.ky, kernels.radius)
    return ForceField(fx=fx, fy=fy)


def potential_field(img: np.ndarray, kernels: GravityKernels) -> np.ndarray:
    """Scalar potential companion of :func:`force_field` (wells negative)."""
    img = np.asarray(img, dtype=np.float64)
    _check_radius(img.shape, kernels.radius)
    return _correlate(img, kernels.kp, kernels.radius)


def _check_radius(shape: tuple[int, int], radius: int) -> None:
    limit = min(shape) - 1
    if radius > limit:
        raise ParameterError(
            f"kernel radius {radius} exceeds what a {shape[0]}x{shape[1]} frame "
            f"can mirror-pad (max {limit})"
        )
