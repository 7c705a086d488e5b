"""Coherent efficiency of the received signal against the local-oscillator
mode, and the Monte-Carlo campaign over turbulent downlink channels."""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ao, optics, turbulence

__all__ = [
    "GammaStats",
    "Downlink",
    "coherent_efficiency",
    "coherent_efficiency_real",
    "build_downlink",
    "simulate_iteration",
    "run_gamma_campaign",
    "run_gamma_pair",
    "campaign_csv",
]

# source-plane sampling: waist spans 16 pixels on a 128 grid
_SOURCE_N = 128
_SOURCE_PIX_PER_WAIST = 16


def _overlaps(E_S, E_LO, D_R):
    a = getattr(E_S, "E", E_S)
    b = getattr(E_LO, "E", E_LO)
    if a.shape != b.shape:
        raise ValueError(f"field grids differ: {a.shape} vs {b.shape}")
    if isinstance(E_S, optics.ComplexField):
        mask = optics.aperture_mask(E_S.N, E_S.delta, D_R)
        a, b = a[mask], b[mask]
    ps = np.vdot(a, a).real
    plo = np.vdot(b, b).real
    if ps <= 0 or plo <= 0:
        raise ValueError("zero power inside the aperture")
    return np.vdot(b, a), plo, ps


def coherent_efficiency(E_S, E_LO, D_R):
    """Mode-matching efficiency |<LO|S>|^2 / (<LO|LO><S|S>) over the aperture.

    This is the coherent efficiency with the relative piston between signal
    and LO optimized away (ideal phase locking). Pixel sums stand in for the
    surface integrals; the pixel area cancels.
    """
    ov, plo, ps = _overlaps(E_S, E_LO, D_R)
    return float(min(1.0, abs(ov) ** 2 / (plo * ps)))


def coherent_efficiency_real(E_S, E_LO, D_R):
    """Coherent efficiency with the symmetrized real-part overlap,
    |Re <LO|S>|^2 / (<LO|LO><S|S>), which depends on the global piston."""
    ov, plo, ps = _overlaps(E_S, E_LO, D_R)
    return float(min(1.0, ov.real**2 / (plo * ps)))


@dataclass
class GammaStats:
    mean: float
    std: float
    count: int
    samples: np.ndarray = field(default=None, repr=False)
    seed: int = 0
    zeta: float = 0.0
    n_max: int = 0

    @property
    def stderr(self):
        return self.std / math.sqrt(self.count) if self.count > 1 else float("nan")

    @classmethod
    def from_samples(cls, samples, seed, zeta, n_max, keep=True):
        s = np.asarray(samples, dtype=float)
        if np.any((s < 0) | (s > 1)):
            raise ValueError("coherent efficiency sample outside [0, 1]")
        std = float(s.std(ddof=1)) if s.size > 1 else 0.0
        return cls(float(s.mean()), std, int(s.size), s if keep else None, seed, zeta, n_max)


@dataclass
class Downlink:
    """Precomputed geometry of one downlink scenario on the receiver grid."""

    scenario: object
    ctrl: object
    delta: float
    slabs: list
    steps: list
    transfer: list
    top: optics.ComplexField
    lo: optics.ComplexField
    mask: np.ndarray
    basis: object


def _receiver_delta(scenario, ctrl):
    extent = ctrl.grid_extent if ctrl.grid_extent is not None else 8 * scenario.D_R
    return extent / ctrl.grid_size


def build_downlink(scenario, ctrl, turbulent=True):
    """Geometry, screen placement, LO mode and AO basis for a scenario.

    With ``turbulent=False`` every slab has r0 = inf (vacuum channel).
    """
    N = ctrl.grid_size
    d = _receiver_delta(scenario, ctrl)
    lam = scenario.wavelength
    sec = 1.0 / math.cos(math.radians(scenario.zeta))
    profile = turbulence.Cn2Profile(ctrl.hv_wind, ctrl.hv_A, ctrl.h0)
    slabs = turbulence.slab_partition(profile, ctrl.n_screens, ctrl.h_top, scenario.zeta, lam)
    if not turbulent:
        slabs = [(lo, hi, hc, math.inf) for lo, hi, hc, _ in slabs]

    heights = [ctrl.h_top] + [s[2] for s in slabs] + [ctrl.h0]
    steps = [(a - b) * sec for a, b in zip(heights[:-1], heights[1:])]
    transfer = [optics.transfer_function(N, d, lam, dz) if dz > 0 else None for dz in steps]

    src_delta = scenario.w0 / _SOURCE_PIX_PER_WAIST
    src = optics.gaussian_source(scenario.w0, lam, _SOURCE_N, src_delta)
    top = optics.far_field_to_atmosphere(src, scenario.H, ctrl.h_top, scenario.zeta, N, d)

    # LO: the diffraction-limited received mode, a Gaussian matched to the
    # vacuum-propagated beam at the ground.
    L = (scenario.H - ctrl.h0) * sec
    zR = math.pi * scenario.w0**2 / lam
    w = scenario.w0 * math.sqrt(1 + (L / zR) ** 2)
    R = L * (1 + (zR / L) ** 2)
    lo = optics.gaussian_field(N, d, lam, w, R)
    mask = optics.aperture_mask(N, d, scenario.D_R)
    lo = lo.with_E(np.where(mask, lo.E, 0))

    basis = ao.build_basis(ctrl.n_max, N, d, scenario.D_R) if ctrl.n_max > 0 else None
    return Downlink(scenario, ctrl, d, slabs, steps, transfer, top, lo, mask, basis)


def propagate(link, iteration):
    """Received field (before the aperture) for one Monte-Carlo iteration."""
    E = link.top
    E = optics.angular_spectrum_step(E, link.steps[0], link.transfer[0])
    for s, (lo, hi, _, r0) in enumerate(link.slabs):
        scr = turbulence.generate_screen(link.ctrl, r0, s, iteration, link.delta, lo, hi)
        E = optics.apply_screen(E, scr)
        E = optics.angular_spectrum_step(E, link.steps[s + 1], link.transfer[s + 1])
    return E


def simulate_iteration(link, iteration):
    """Returns ``(gamma_no_ao, gamma_ao, gamma_real_no_ao, gamma_real_ao)``;
    the AO entries equal the uncorrected ones when the basis is empty."""
    D_R = link.scenario.D_R
    rx, _ = optics.apply_aperture(propagate(link, iteration), D_R)
    g0 = coherent_efficiency(rx, link.lo, D_R)
    r0 = coherent_efficiency_real(rx, link.lo, D_R)
    if link.basis is None:
        return g0, g0, r0, r0
    fixed = ao.correct(rx, link.basis, reference=link.lo)
    return g0, coherent_efficiency(fixed, link.lo, D_R), r0, coherent_efficiency_real(fixed, link.lo, D_R)


def _run_chunk(args):
    scenario, ctrl, turbulent, start, stop = args
    link = build_downlink(scenario, ctrl, turbulent)
    return [simulate_iteration(link, i) for i in range(start, stop)]


def _run_all(scenario, ctrl, turbulent=True, workers=None, progress=None):
    workers = workers or ctrl.workers
    n = ctrl.iterations
    if workers <= 1:
        link = build_downlink(scenario, ctrl, turbulent)
        rows = []
        for i in range(n):
            rows.append(simulate_iteration(link, i))
            if progress:
                progress(i + 1, n)
        return np.array(rows)
    bounds = np.linspace(0, n, 4 * workers + 1).astype(int)
    jobs = [(scenario, ctrl, turbulent, a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    rows = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves job order, so the reduction is in iteration order
        for chunk in pool.map(_run_chunk, jobs):
            rows.extend(chunk)
            if progress:
                progress(len(rows), n)
    return np.array(rows)


def run_gamma_pair(scenario, ctrl, turbulent=True, workers=None, progress=None, keep=True):
    """Paired campaign: every iteration yields gamma without and with AO on
    the same screens. Returns ``(stats_no_ao, stats_ao)`` for the variant
    selected by ``ctrl.gamma_variant``."""
    rows = _run_all(scenario, ctrl, turbulent, workers, progress)
    cols = (0, 1) if ctrl.gamma_variant == "piston" else (2, 3)
    no_ao = GammaStats.from_samples(rows[:, cols[0]], ctrl.seed, scenario.zeta, 0, keep)
    with_ao = GammaStats.from_samples(rows[:, cols[1]], ctrl.seed, scenario.zeta, ctrl.n_max, keep)
    return no_ao, with_ao


def run_gamma_campaign(scenario, ctrl, with_ao=True, turbulent=True, workers=None, progress=None):
    """Mean coherent efficiency over ``ctrl.iterations`` turbulent channels."""
    no_ao, yes_ao = run_gamma_pair(scenario, ctrl, turbulent, workers, progress)
    return yes_ao if with_ao else no_ao


def campaign_csv(no_ao, with_ao=None):
    """CSV text: one row per iteration plus mean / std summary rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["iteration", "gamma_no_ao"] + (["gamma_ao"] if with_ao is not None else [])
    w.writerow(head)
    for i in range(no_ao.count):
        row = [i, repr(float(no_ao.samples[i]))]
        if with_ao is not None:
            row.append(repr(float(with_ao.samples[i])))
        w.writerow(row)
    for label, attr in (("mean", "mean"), ("std", "std")):
        row = [label, repr(getattr(no_ao, attr))]
        if with_ao is not None:
            row.append(repr(getattr(with_ao, attr)))
        w.writerow(row)
    return buf.getvalue()
