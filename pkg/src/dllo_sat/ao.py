"""Zernike modal decomposition and idealized adaptive-optics correction.

Modes follow Noll's single-index ordering and normalization, sampled on
the pixels inside the receiver aperture.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .optics import coords

__all__ = [
    "ZernikeBasis",
    "noll_to_nm",
    "n_modes",
    "zernike",
    "build_basis",
    "decompose",
    "correct",
    "write_coefficients_csv",
]

MIN_APERTURE_PIXELS = 32


def noll_to_nm(j):
    """Radial and signed azimuthal order of Noll index ``j`` (>= 1).

    m > 0 is a cosine mode, m < 0 a sine mode.
    """
    if j < 1:
        raise ValueError("Noll index starts at 1")
    n = 0
    j1 = j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def n_modes(n_max):
    return (n_max + 1) * (n_max + 2) // 2


def _radial(n, m, rho):
    m = abs(m)
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        c = ((-1) ** k * math.factorial(n - k)
             / (math.factorial(k) * math.factorial((n + m) // 2 - k)
                * math.factorial((n - m) // 2 - k)))
        out += c * rho ** (n - 2 * k)
    return out


def zernike(j, rho, theta):
    """Noll-normalized Zernike polynomial on the unit disk."""
    n, m = noll_to_nm(j)
    if m == 0:
        return math.sqrt(n + 1) * _radial(n, 0, rho)
    norm = math.sqrt(2 * (n + 1)) * _radial(n, m, rho)
    return norm * (np.cos(m * theta) if m > 0 else np.sin(-m * theta))


@dataclass(frozen=True)
class ZernikeBasis:
    """Modes sampled on the aperture pixels.

    ``modes[i]`` holds mode ``j = i + 1`` at the pixels selected by ``mask``.
    The sampled modes are made exactly orthonormal under the pixel-mean inner
    product by a Gram-Schmidt pass in Noll order; ``raw_modes`` keeps the
    analytic samples.
    """

    n_max: int
    D_R: float
    delta: float
    mask: np.ndarray
    modes: np.ndarray
    raw_modes: np.ndarray
    indices: tuple

    @property
    def n_pixels(self):
        return int(self.mask.sum())

    def gram(self, raw=False):
        M = self.raw_modes if raw else self.modes
        return M @ M.T / M.shape[1]

    def mode_grid(self, j):
        out = np.zeros(self.mask.shape)
        out[self.mask] = self.modes[j - 1]
        return out


def build_basis(n_max, grid_size, delta, D_R):
    """Zernike basis up to radial order ``n_max`` on an N x N grid."""
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if D_R / delta < MIN_APERTURE_PIXELS:
        raise ValueError(
            f"aperture spans {D_R / delta:.1f} pixels; need >= {MIN_APERTURE_PIXELS}")
    if D_R > grid_size * delta:
        raise ValueError("aperture larger than grid")
    x = coords(grid_size, delta) / (D_R / 2)
    X, Y = np.meshgrid(x, x)
    rho = np.hypot(X, Y)
    mask = rho <= 1.0
    r, th = rho[mask], np.arctan2(Y, X)[mask]
    K = n_modes(n_max)
    raw = np.array([zernike(j, r, th) for j in range(1, K + 1)])
    P = raw.shape[1]
    q, rr = np.linalg.qr(raw.T / math.sqrt(P))
    modes = (q * np.sign(np.diag(rr))).T * math.sqrt(P)
    return ZernikeBasis(n_max, D_R, delta, mask, modes, raw,
                        tuple((j,) + noll_to_nm(j) for j in range(1, K + 1)))


def decompose(phase, basis):
    """Least-squares Zernike coefficients [rad] of ``phase`` over the aperture."""
    phase = np.asarray(phase)
    if phase.shape != basis.mask.shape:
        raise ValueError(f"phase grid {phase.shape} does not match basis {basis.mask.shape}")
    return basis.modes @ phase[basis.mask] / basis.n_pixels


def correct(field, basis, reference=None):
    """Remove the modal wavefront error of ``field`` for every mode j >= 2.

    The wavefront is the principal value of arg(E), or of arg(E conj(ref))
    when a reference field (the undisturbed local-oscillator mode) is given,
    so a deformable mirror flattens the signal onto the reference. No phase
    unwrapping is done and the amplitude is left untouched.
    """
    E = field.E
    if E.shape != basis.mask.shape:
        raise ValueError("field and basis grids differ")
    z = E if reference is None else E * np.conj(reference.E)
    phase = np.angle(z)
    c = decompose(phase, basis)
    c[0] = 0.0
    out = E.copy()
    out[basis.mask] *= np.exp(-1j * (c @ basis.modes))
    return field.with_E(out)


def write_coefficients_csv(path, coeffs, basis=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["noll_index", "n", "m", "coefficient_rad"])
        for i, c in enumerate(coeffs):
            n, m = noll_to_nm(i + 1)
            w.writerow([i + 1, n, m, repr(float(c))])
