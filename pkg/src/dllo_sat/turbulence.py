"""Refractive-index turbulence: Hufnagel-Valley Cn^2 profile, Fried
parameters along a slant path, and von Karman phase screens."""

import functools
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc, gammaincc

__all__ = [
    "Cn2Profile",
    "PhaseScreen",
    "UnderResolvedScreenWarning",
    "cn2_hv",
    "hv57",
    "fried_parameter",
    "slab_partition",
    "generate_screen",
    "screen_rng",
    "write_grid",
    "read_grid",
]

# numerical prefactor of the plane-wave Fried parameter integral
FRIED_CONST = 0.423


class UnderResolvedScreenWarning(UserWarning):
    """Pixel pitch too coarse for the slab Fried parameter."""


def cn2_hv(h, wind_pseudo=21.0, A_ground=1.7e-14):
    """Hufnagel-Valley Cn^2 [m^-2/3] at altitude ``h`` [m] above ground.

    The defaults are the HV 5/7 parameterization.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("altitude must be >= 0")
    out = (0.00594 * (wind_pseudo / 27.0) ** 2 * (1e-5 * h) ** 10 * np.exp(-h / 1000.0)
           + 2.7e-16 * np.exp(-h / 1500.0)
           + A_ground * np.exp(-h / 100.0))
    return out if out.ndim else float(out)


def _moment(power, scale, a, b):
    """Closed form of the integral of h**power * exp(-h/scale) over [a, b]."""
    p1 = power + 1
    lo, hi = a / scale, b / scale
    if lo > p1:
        # both in the upper tail: difference of upper functions avoids cancellation
        diff = gammaincc(p1, lo) - gammaincc(p1, hi)
    else:
        diff = gammainc(p1, hi) - gammainc(p1, lo)
    return scale**p1 * gamma_fn(p1) * diff


@dataclass(frozen=True)
class Cn2Profile:
    """Hufnagel-Valley profile with integration starting at ``h0``."""

    wind_pseudo: float = 21.0
    A_ground: float = 1.7e-14
    h0: float = 0.0
    model: str = "hufnagel-valley"

    def __call__(self, h):
        return cn2_hv(h, self.wind_pseudo, self.A_ground)

    def _terms(self):
        # (coefficient, power of h, exponential scale) for each additive term
        return (
            (0.00594 * (self.wind_pseudo / 27.0) ** 2 * 1e-50, 10, 1000.0),
            (2.7e-16, 0, 1500.0),
            (self.A_ground, 0, 100.0),
        )

    def integral(self, a, b, moment=0):
        """Integral of h**moment * Cn^2(h) dh over [a, b]."""
        if b < a:
            raise ValueError("need b >= a")
        return sum(c * _moment(p + moment, s, a, b) for c, p, s in self._terms())


def hv57(h0=0.0):
    return Cn2Profile(21.0, 1.7e-14, h0)


def _sec(zeta):
    if not 0 <= zeta < 90:
        raise ValueError(f"zenith angle must lie in [0, 90) degrees, got {zeta}")
    return 1.0 / math.cos(math.radians(zeta))


def _r0_from_integral(cn2_int, wavelength, zeta):
    if cn2_int <= 0:
        return math.inf
    k = 2 * math.pi / wavelength
    return (FRIED_CONST * k**2 * _sec(zeta) * cn2_int) ** (-3.0 / 5.0)


def fried_parameter(profile, wavelength, zeta, h_top=20e3):
    """Plane-wave Fried parameter [m] for the path from h0 up to ``h_top``."""
    return _r0_from_integral(profile.integral(profile.h0, h_top), wavelength, zeta)


def slab_partition(profile, n_screens, h_top, zeta, wavelength=1550e-9):
    """Split [h0, h_top] into ``n_screens`` equal-height slabs.

    Returns a list of ``(h_lo, h_hi, h_screen, r0_slab)`` ordered from the
    top of the atmosphere downwards (the order the downlink beam meets them).
    ``h_screen`` is the Cn^2-weighted centroid altitude of the slab, where its
    screen is placed. The r0_slab^(-5/3) values add up to r0_total^(-5/3).
    """
    if n_screens < 1:
        raise ValueError("n_screens must be >= 1")
    _sec(zeta)
    edges = np.linspace(profile.h0, h_top, n_screens + 1)
    slabs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = profile.integral(lo, hi)
        centroid = profile.integral(lo, hi, moment=1) / w if w > 0 else 0.5 * (lo + hi)
        slabs.append((float(lo), float(hi), float(centroid),
                      _r0_from_integral(w, wavelength, zeta)))
    return slabs[::-1]


@dataclass
class PhaseScreen:
    """One thin-slab turbulence realization, phase in radians."""

    phase: np.ndarray
    delta: float
    r0_slab: float
    h_lo: float = 0.0
    h_hi: float = 0.0


def screen_rng(seed, slab_index, iteration_index):
    """Generator for one screen, split from the master seed by counter."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(iteration_index, slab_index))
    return np.random.Generator(np.random.PCG64(ss))


def _psd(f, r0, L0, l0):
    """Modified von Karman phase PSD [rad^2 m^2]."""
    f0 = 1.0 / L0
    psd = 0.023 * r0 ** (-5.0 / 3.0) / (f**2 + f0**2) ** (11.0 / 6.0)
    if l0 > 0:
        fm = 5.92 / l0 / (2 * np.pi)
        psd = psd * np.exp(-((f / fm) ** 2))
    return psd


def _cell_mean_psd(fs, df, L0, l0, n_sub=16):
    """Unit-r0 PSD averaged over each square cell of side ``df`` centred on
    the 3x3 subharmonic grid ``fs``. The spectrum is steep near the origin,
    so a centre sample would under-weight these cells."""
    u = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    fx = fs[None, :, None, None] + u[None, None, None, :] * df
    fy = fs[:, None, None, None] + u[None, None, :, None] * df
    return _psd(np.hypot(fx, fy), 1.0, L0, l0).mean(axis=(2, 3))


@functools.lru_cache(maxsize=8)
def _unit_amplitudes(N, delta, L0, l0, n_subharmonics):
    """sqrt(PSD) * df for r0 = 1 m on the FFT grid and the subharmonic
    grids, plus the subharmonic exponentials. Scales as r0^(-5/6)."""
    del_f = 1.0 / (N * delta)
    fx = np.fft.fftfreq(N, delta)
    f = np.hypot(fx[:, None], fx[None, :])
    psd = _psd(f, 1.0, L0, l0)
    psd[0, 0] = 0.0
    main = np.sqrt(psd) * del_f
    x = (np.arange(N) - N // 2) * delta
    D = N * delta
    subs = []
    for p in range(1, n_subharmonics + 1):
        df = 1.0 / (3**p * D)
        fs = np.array([-1.0, 0.0, 1.0]) * df
        sh_psd = _cell_mean_psd(fs, df, L0, l0)
        sh_psd[1, 1] = 0.0
        ex = np.exp(2j * np.pi * fs[:, None] * x[None, :])  # (3, N)
        subs.append((np.sqrt(sh_psd) * df, ex))
    main.flags.writeable = False
    return main, tuple(subs)


def von_karman_screen(rng, r0, N, delta, L0, l0, n_subharmonics=3):
    """FFT phase screen with low-frequency subharmonic augmentation."""
    main, subs = _unit_amplitudes(N, float(delta), float(L0), float(l0), int(n_subharmonics))
    scale = r0 ** (-5.0 / 6.0)
    cn = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    cn *= main * scale
    phs = sfft.ifft2(cn, overwrite_x=True).real * (N * N)

    if subs:
        lo = np.zeros((N, N), dtype=complex)
        for amp, ex in subs:
            c = (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))) * amp * scale
            # sum_ij c_ij exp(i 2 pi (fy_i y + fx_j x)), rows are y
            lo += ex.T @ c @ ex
        lo = lo.real
        phs += lo - lo.mean()
    return phs


def generate_screen(ctrl, r0_slab, slab_index, iteration_index, delta, h_lo=0.0, h_hi=0.0):
    """Phase screen for one slab of one Monte-Carlo iteration.

    The result depends only on ``(ctrl.seed, slab_index, iteration_index)``
    and the grid, so screens can be generated in any order or process.
    """
    N = ctrl.grid_size
    if not r0_slab > 0:
        raise ValueError(f"r0_slab must be > 0 (or inf), got {r0_slab}")
    if math.isinf(r0_slab):
        return PhaseScreen(np.zeros((N, N)), delta, r0_slab, h_lo, h_hi)
    if delta > r0_slab / 2:
        warnings.warn(
            f"pixel pitch {delta:.4g} m exceeds r0_slab/2 = {r0_slab / 2:.4g} m",
            UnderResolvedScreenWarning, stacklevel=2)
    rng = screen_rng(ctrl.seed, slab_index, iteration_index)
    phs = von_karman_screen(rng, r0_slab, N, delta, ctrl.L0, ctrl.l0, ctrl.n_subharmonics)
    return PhaseScreen(phs, delta, r0_slab, h_lo, h_hi)


# Debug grid dump: little-endian header (magic, kind, ny, nx, delta, r0),
# then row-major float64 (kind 0) or interleaved complex128 (kind 1) values.
_MAGIC = b"DLGR"
_HEADER = struct.Struct("<4sIIIdd")


def write_grid(path, values, delta, r0=math.inf):
    values = np.asarray(values)
    kind = 1 if np.iscomplexobj(values) else 0
    ny, nx = values.shape
    body = values.astype("<c16" if kind else "<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, kind, ny, nx, float(delta), float(r0)))
        fh.write(np.ascontiguousarray(body).tobytes())


def read_grid(path):
    """Returns ``(values, delta, r0)``."""
    with open(path, "rb") as fh:
        magic, kind, ny, nx, delta, r0 = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a grid dump")
        dtype = "<c16" if kind else "<f8"
        values = np.frombuffer(fh.read(), dtype=dtype).reshape(ny, nx)
    return values.astype(complex if kind else float), delta, r0
