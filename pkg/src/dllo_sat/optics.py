"""Sampled scalar optical fields and their vacuum / turbulent propagation."""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

__all__ = [
    "ComplexField",
    "PropagationError",
    "coords",
    "gaussian_field",
    "gaussian_source",
    "gaussian_beam_radius",
    "far_field_to_atmosphere",
    "angular_spectrum_step",
    "transfer_function",
    "apply_screen",
    "aperture_mask",
    "apply_aperture",
    "second_moment_radius",
]


class PropagationError(ValueError):
    """Sampling too coarse for the requested propagation."""


@dataclass
class ComplexField:
    """N x N complex amplitudes [sqrt(W)/m] on a square grid of pitch ``delta``."""

    E: np.ndarray
    delta: float
    wavelength: float

    def __post_init__(self):
        if self.E.ndim != 2 or self.E.shape[0] != self.E.shape[1]:
            raise ValueError(f"field grid must be square, got {self.E.shape}")

    @property
    def N(self):
        return self.E.shape[0]

    @property
    def extent(self):
        return self.N * self.delta

    def power(self):
        return float(np.sum(np.abs(self.E) ** 2) * self.delta**2)

    def with_E(self, E):
        return replace(self, E=E)


def coords(N, delta):
    """Centered 1-D sample positions; index N//2 is the optical axis."""
    return (np.arange(N) - N // 2) * delta


def gaussian_beam_radius(w0, wavelength, z):
    zR = math.pi * w0**2 / wavelength
    return w0 * math.sqrt(1 + (z / zR) ** 2)


def gaussian_field(N, delta, wavelength, w, R=math.inf, power=1.0):
    """Fundamental Gaussian of radius ``w`` and wavefront curvature ``R``,
    normalized to ``power`` on the discrete grid."""
    x = coords(N, delta)
    r2 = x[:, None] ** 2 + x[None, :] ** 2
    E = np.exp(-r2 / w**2).astype(complex)
    if math.isfinite(R):
        k = 2 * math.pi / wavelength
        # diverging for R > 0 under the exp(+i k z) convention of angular_spectrum_step
        E *= np.exp(1j * k * r2 / (2 * R))
    E *= math.sqrt(power / (np.sum(np.abs(E) ** 2) * delta**2))
    return ComplexField(E, delta, wavelength)


def gaussian_source(w0, wavelength, grid_size, delta):
    """Unit-power Gaussian at its waist (flat phase)."""
    if w0 < 8 * delta:
        raise PropagationError(f"waist {w0} m spans fewer than 8 pixels of {delta} m")
    if grid_size * delta < 4 * w0:
        raise PropagationError("grid narrower than 4 waists")
    return gaussian_field(grid_size, delta, wavelength, w0)


def second_moment_radius(field):
    """Beam radius 2*sqrt(<x^2>) about the intensity centroid (equals w
    for a Gaussian exp(-2 r^2 / w^2) intensity)."""
    I = np.abs(field.E) ** 2
    x = coords(field.N, field.delta)
    tot = I.sum()
    px = I.sum(axis=0)
    cx = np.dot(px, x) / tot
    var = np.dot(px, (x - cx) ** 2) / tot
    return 2 * math.sqrt(var)


def far_field_to_atmosphere(field, H, h_top, zeta, grid_size=None, delta=None):
    """Analytic Gaussian-beam transfer of a waist-plane source over the
    vacuum leg from altitude ``H`` down to ``h_top``.

    The source waist is read from the field's second moment. The returned
    field keeps its spherical wavefront explicitly and is sampled on a grid
    of ``grid_size`` pixels of pitch ``delta`` (defaults: the source grid).
    """
    L = (H - h_top) / math.cos(math.radians(zeta))
    if L < 0:
        raise ValueError("h_top above the satellite")
    w0 = second_moment_radius(field)
    lam = field.wavelength
    zR = math.pi * w0**2 / lam
    w = w0 * math.sqrt(1 + (L / zR) ** 2)
    R = L * (1 + (zR / L) ** 2) if L > 0 else math.inf
    N = grid_size or field.N
    d = delta or field.delta
    return gaussian_field(N, d, lam, w, R, power=field.power())


def _max_step(N, delta, wavelength):
    # Band-limit for the angular-spectrum transfer function (Matsushima & Shimobaba).
    return N * delta**2 / wavelength * math.sqrt(max(0.0, 1 - (wavelength / (2 * delta)) ** 2))


def transfer_function(N, delta, wavelength, dz):
    """Angular-spectrum transfer function for a ``dz`` step, in FFT order.

    The global phase exp(i k dz) is dropped.
    """
    if dz < 0:
        raise ValueError("dz must be >= 0")
    limit = _max_step(N, delta, wavelength)
    if dz > limit:
        raise PropagationError(f"step {dz:.4g} m exceeds angular-spectrum limit {limit:.4g} m")
    k = 2 * math.pi / wavelength
    f = np.fft.fftfreq(N, delta)
    kap2 = (2 * np.pi) ** 2 * (f[:, None] ** 2 + f[None, :] ** 2)
    # sqrt(k^2 - kap^2) - k, written to avoid cancellation for kap << k
    kz = -kap2 / (k + np.sqrt(np.maximum(k**2 - kap2, 0.0)))
    H = np.exp(1j * dz * kz)
    H[kap2 > k**2] = 0.0
    return H


def angular_spectrum_step(field, dz, H=None):
    """Exact scalar diffraction over ``dz`` metres of vacuum.

    ``H`` may carry a precomputed ``transfer_function`` for the same grid.
    """
    if dz == 0:
        return field.with_E(field.E.copy())
    if H is None:
        H = transfer_function(field.N, field.delta, field.wavelength, dz)
    spec = sfft.fft2(field.E)
    spec *= H
    return field.with_E(sfft.ifft2(spec, overwrite_x=True))


def apply_screen(field, screen):
    phase = getattr(screen, "phase", screen)
    if phase.shape != field.E.shape:
        raise ValueError(f"screen grid {phase.shape} does not match field {field.E.shape}")
    d = getattr(screen, "delta", field.delta)
    if not math.isclose(d, field.delta, rel_tol=1e-9):
        raise ValueError(f"screen pitch {d} does not match field pitch {field.delta}")
    rot = np.empty(phase.shape, dtype=complex)
    np.cos(phase, out=rot.real)
    np.sin(phase, out=rot.imag)
    rot *= field.E
    return field.with_E(rot)


def aperture_mask(N, delta, D):
    x = coords(N, delta)
    return (x[:, None] ** 2 + x[None, :] ** 2) <= (D / 2) ** 2


def apply_aperture(field, D_R):
    """Hard circular aperture of diameter ``D_R`` on axis.

    Returns ``(masked field, captured power fraction)``.
    """
    if D_R > field.extent * (1 + 1e-12):
        raise ValueError(f"aperture {D_R} m larger than grid extent {field.extent} m")
    mask = aperture_mask(field.N, field.delta, D_R)
    before = np.sum(np.abs(field.E) ** 2)
    E = np.where(mask, field.E, 0)
    frac = float(np.sum(np.abs(E) ** 2) / before) if before > 0 else 0.0
    return field.with_E(E), frac
