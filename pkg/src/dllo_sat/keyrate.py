"""Secret key rate of heterodyne GMCS CV-QKD with a trusted detector, in
the finite-size regime, and sweeps over channel loss.

Conventions: shot-noise units, V = V_A + 1, channel excess noise xi_ch
is untrusted and input-referred, detector noise xi_d is trusted and
enters as 2 xi_d / (eta_d T) at the input.
"""

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfcinv

from . import noise

__all__ = [
    "ChannelPoint",
    "KeyRateResult",
    "g",
    "mutual_information_het",
    "holevo_bound",
    "symplectic_spectrum",
    "confidence_z",
    "worst_case_params",
    "delta_aep",
    "asymptotic_key_rate",
    "finite_key_rate",
    "sweep_loss",
    "channel_point",
    "results_csv",
    "zero_crossing",
]

MIN_PE_SAMPLES = 1e6
NU_TOL = 1e-9


@dataclass(frozen=True)
class ChannelPoint:
    T: float
    xi_ch: float
    xi_d: float
    eta_d: float
    V_A: float

    def __post_init__(self):
        if not 0 < self.T <= 1:
            raise ValueError(f"T must lie in (0, 1], got {self.T}")
        if not 0 < self.eta_d <= 1:
            raise ValueError(f"eta_d must lie in (0, 1], got {self.eta_d}")
        if self.V_A < 0 or self.xi_ch < 0 or self.xi_d < 0:
            raise ValueError("V_A, xi_ch and xi_d must be >= 0")

    @property
    def loss_db(self):
        return max(0.0, -10.0 * math.log10(self.T))

    @classmethod
    def from_loss_db(cls, loss_db, xi_ch, xi_d, eta_d, V_A):
        return cls(10.0 ** (-loss_db / 10.0), xi_ch, xi_d, eta_d, V_A)

    def with_channel(self, T, xi_ch):
        return ChannelPoint(T, xi_ch, self.xi_d, self.eta_d, self.V_A)

    @property
    def chi_line(self):
        return 1.0 / self.T - 1.0 + self.xi_ch

    @property
    def chi_het(self):
        return (2.0 - self.eta_d + 2.0 * self.xi_d) / self.eta_d

    @property
    def chi_tot(self):
        return self.chi_line + self.chi_het / self.T


@dataclass(frozen=True)
class KeyRateResult:
    loss_db: float
    T: float
    xi_ch: float
    xi_d: float
    I_AB: float
    S_BE_eps: float
    delta_aep: float
    delta_aep_term: float
    log_term: float
    K_raw: float
    T_worst: float
    xi_worst: float

    @property
    def K(self):
        return max(self.K_raw, 0.0)


def g(x):
    """(x+1) log2(x+1) - x log2 x for x >= 0, with g(0) = 0."""
    if x < 0:
        raise ValueError(f"g needs x >= 0, got {x}")
    if x == 0:
        return 0.0
    return (x + 1) * math.log2(x + 1) - x * math.log2(x)


def _G(nu):
    if nu < 1 - NU_TOL:
        raise ValueError(f"non-physical covariance: symplectic eigenvalue nu = {nu!r} < 1")
    return g(max(nu - 1.0, 0.0) / 2.0)


def mutual_information_het(point):
    """I_AB = log2((V + chi_tot) / (1 + chi_tot)) [bits/symbol]."""
    V = point.V_A + 1.0
    chi = point.chi_tot
    return math.log2((V + chi) / (1.0 + chi))


def _pair(total_sq, diff):
    # nu_+ + nu_- = sqrt(total_sq), nu_+ - nu_- = diff; both are free of the
    # cancellation in sqrt(s^2 - 4p) when the two eigenvalues nearly coincide
    total = math.sqrt(max(total_sq, 0.0))
    return (total + diff) / 2.0, (total - diff) / 2.0


def symplectic_spectrum(point):
    """Closed-form symplectic eigenvalues (nu1, nu2) of Alice-Bob after the
    channel and (nu3, nu4) of Alice-detector modes conditioned on Bob's
    heterodyne outcome (the fifth is 1)."""
    V = point.V_A + 1.0
    T = point.T
    chi_line = point.chi_line
    chi_het = point.chi_het
    chi_tot = point.chi_tot
    b = T * (V + chi_line)
    A = V * V * (1 - 2 * T) + 2 * T + T * T * (V + chi_line) ** 2
    sB = T * (1 + V * chi_line)
    nu1, nu2 = _pair(A + 2 * sB, abs(V - b))
    den = T * (V + chi_tot)
    C = (A * chi_het**2 + sB * sB + 1 + 2 * chi_het * (V * sB + T * (V + chi_line))
         + 2 * T * (V * V - 1)) / den**2
    sD = (V + sB * chi_het) / den
    diff = (T * V * (chi_het - chi_line) + T * chi_het * chi_line - T - V * chi_het + 1) / den
    nu3, nu4 = _pair(C + 2 * sD, abs(diff))
    return nu1, nu2, nu3, nu4


def holevo_bound(point):
    """Eve's Holevo information on Bob's heterodyne data [bits/symbol]."""
    nu1, nu2, nu3, nu4 = symplectic_spectrum(point)
    return _G(nu1) + _G(nu2) - _G(nu3) - _G(nu4)


def confidence_z(eps_PE):
    """z with two-sided Gaussian tail probability eps_PE: erfc(z / sqrt 2) = eps_PE."""
    if not 0 < eps_PE <= 1:
        raise ValueError(f"eps_PE must lie in (0, 1], got {eps_PE}")
    return math.sqrt(2.0) * float(erfcinv(eps_PE))


def worst_case_params(T_hat, xi_hat, m, eps_PE, V_A):
    """Pessimistic (T_low, xi_high) from ``m`` parameter-estimation samples.

    Model y = sqrt(T) x + z with Var(x) = V_A and Var(z) = 1 + T xi. The
    transmittance amplitude is lowered, and the noise variance raised, by
    z(eps_PE) standard errors of their maximum-likelihood estimators.
    """
    if m < MIN_PE_SAMPLES:
        raise ValueError(f"need m >= {MIN_PE_SAMPLES:g} estimation samples, got {m}")
    if math.isinf(m):
        return T_hat, xi_hat
    if V_A <= 0:
        raise ValueError("transmittance cannot be estimated without modulation (V_A = 0)")
    z = confidence_z(eps_PE)
    sigma2 = 1.0 + T_hat * xi_hat
    t_low = math.sqrt(T_hat) - z * math.sqrt(sigma2 / (m * V_A))
    if t_low <= 0:
        raise ValueError("estimation interval reaches zero transmittance")
    sigma2_high = sigma2 + z * sigma2 * math.sqrt(2.0 / m)
    T_low = t_low * t_low
    return T_low, (sigma2_high - 1.0) / T_low


def delta_aep(n, d_bits, eps_total, eps_s):
    """AEP finite-size correction (d+1)^2 + 4(d+1) sqrt(log2(2/eps_s))
    + 2 log2(2/(eps^2 eps_s)) + 4 eps_s d / (eps sqrt(n))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = d_bits
    # log2(2 / (eps^2 eps_s)) assembled in logs: eps^2 underflows at 1e-55 scales
    log_term = 1.0 - 2.0 * math.log2(eps_total) - math.log2(eps_s)
    return ((d + 1) ** 2 + 4 * (d + 1) * math.sqrt(math.log2(2.0 / eps_s))
            + 2.0 * log_term + 4.0 * eps_s * d / (eps_total * math.sqrt(n)))


def asymptotic_key_rate(point, beta):
    return beta * mutual_information_het(point) - holevo_bound(point)


def finite_key_rate(point, fsp, penalties=True):
    """Finite-size key rate [bits/pulse]

        K = (n/N) [beta I_AB - S_BE] - sqrt(n)/N Delta_AEP(n) - (2/N) log2(1/(2 eps))

    with S_BE evaluated at the worst-case channel estimate. With
    ``penalties=False`` the estimation, AEP and log terms are dropped,
    leaving (n/N) (beta I_AB - S_BE) at the nominal channel.
    """
    n, N = fsp.n, fsp.N_total
    I_AB = mutual_information_het(point)
    if penalties:
        # no modulation: nothing to estimate, and I_AB = 0 already makes K < 0
        T_w, xi_w = (point.T, point.xi_ch) if point.V_A == 0 else worst_case_params(point.T, point.xi_ch, fsp.m, fsp.eps_PE, point.V_A)
        dA = delta_aep(n, fsp.d_bits, fsp.eps_total, fsp.eps_s)
        aep_term = math.sqrt(n) / N * dA
        log_term = 2.0 / N * math.log2(1.0 / (2.0 * fsp.eps_total))
    else:
        T_w, xi_w = point.T, point.xi_ch
        dA = aep_term = log_term = 0.0
    S = holevo_bound(point.with_channel(T_w, xi_w))
    K = n / N * (fsp.beta * I_AB - S) - aep_term - log_term
    return KeyRateResult(point.loss_db, point.T, point.xi_ch, point.xi_d, I_AB, S, dA,
                         aep_term, log_term, K, T_w, xi_w)


def channel_point(scenario, gamma, T, budget=None):
    """ChannelPoint at ``T`` with the optimized noise budget for ``gamma``.

    The channel excess noise follows ``scenario.xi_ch_source``.
    """
    if budget is None:
        budget = noise.optimized_budget(scenario, gamma, T)
    if scenario.xi_ch_source == "override":
        xi_ch = scenario.xi_ch_override
    elif scenario.xi_ch_source == "optimal":
        xi_ch = noise.min_xi_ch(scenario, budget.xi_d_total)
    else:
        xi_ch = budget.xi_ch_total
    return ChannelPoint(T, xi_ch, budget.xi_d_total, scenario.eta_d, scenario.V_A)


def sweep_loss(scenario, gamma, fsp, loss_grid):
    """Key rate along a strictly increasing grid of channel losses [dB]."""
    loss = np.asarray(loss_grid, dtype=float)
    if loss.ndim != 1 or loss.size == 0:
        raise ValueError("loss grid must be a non-empty list")
    if np.any(np.diff(loss) <= 0):
        raise ValueError("loss grid must be strictly increasing")
    if np.any(loss < 0):
        raise ValueError("loss must be >= 0 dB")
    out = []
    for L in loss:
        T = 10.0 ** (-L / 10.0)
        r = finite_key_rate(channel_point(scenario, gamma, T), fsp)
        # report the grid value itself, not -10 log10 of the rounded T
        out.append(replace(r, loss_db=float(L)))
    return out


def zero_crossing(results):
    """Loss [dB] where K_raw changes sign, by linear interpolation between
    grid points; None when it never does."""
    for a, b in zip(results[:-1], results[1:]):
        if a.K_raw > 0 >= b.K_raw:
            return a.loss_db + (b.loss_db - a.loss_db) * a.K_raw / (a.K_raw - b.K_raw)
    return None


CSV_COLUMNS = ("loss_db", "T", "xi_ch", "xi_d", "I_AB", "S_BE", "delta_aep_term",
               "log_term", "T_worst", "xi_worst", "K_raw", "K_clamped")


def results_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([repr(float(v)) for v in (
            r.loss_db, r.T, r.xi_ch, r.xi_d, r.I_AB, r.S_BE_eps, r.delta_aep_term,
            r.log_term, r.T_worst, r.xi_worst, r.K_raw, r.K)])
    return buf.getvalue()
