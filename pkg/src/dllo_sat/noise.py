"""Excess-noise budget of the delay-line LLO receiver and the optimal
reference-pulse intensity.

All noise terms are in shot-noise units (SNU) referred to the channel
input; phase variances are in rad^2.
"""

import json
import math
from dataclasses import asdict, dataclass

__all__ = [
    "NoiseBudget",
    "PhaseNoiseParams",
    "FixedPointError",
    "extinction_linear",
    "xi_gamma",
    "xi_el",
    "xi_d",
    "v_error",
    "xi_phase",
    "xi_leak",
    "xi_adc",
    "xi_other",
    "optimal_N_R",
    "min_xi_ch",
    "assemble_budget",
    "optimized_budget",
]

# Above this the first-order phase-noise expansion is not trusted.
LINEAR_PHASE_LIMIT = 0.1


class FixedPointError(RuntimeError):
    pass


def extinction_linear(R_e_db, R_po_db):
    """Combined extinction of pulse carving and PBS, as a linear ratio.

    The two stages are in series, so their dB values add.
    """
    return 10.0 ** ((R_e_db + R_po_db) / 10.0)


def xi_gamma(gamma):
    """Wavefront-mismatch noise (1 - gamma) / gamma."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return (1.0 - gamma) / gamma


def xi_el(v_el, gamma):
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return 2.0 * v_el / gamma


def xi_d(scenario, gamma):
    """Trusted detector excess noise 2 v_el / gamma + xi_gamma + xi_tech."""
    return xi_el(scenario.v_el, gamma) + xi_gamma(gamma) + scenario.xi_tech


def v_error(xi_ch, xi_d, eta_d, T, N_R):
    """Shot-noise-limited phase estimation variance of the reference pulse."""
    if not N_R > 0:
        raise ValueError(f"N_R must be > 0, got {N_R}")
    if not 0 < T <= 1:
        raise ValueError(f"T must lie in (0, 1], got {T}")
    if not 0 < eta_d <= 1:
        raise ValueError(f"eta_d must lie in (0, 1], got {eta_d}")
    return (xi_ch + 2.0 * (1.0 + xi_d) / (eta_d * T)) / N_R


def xi_phase(V_est, V_A, linearized=False):
    """Residual phase noise of the Gaussian-modulated signal.

    Exact: 2 V_A (1 - exp(-V_est / 2)). Linearized: V_A V_est, valid only
    for V_est < 0.1.
    """
    if V_est < 0:
        raise ValueError(f"V_est must be >= 0, got {V_est}")
    if linearized:
        if V_est >= LINEAR_PHASE_LIMIT:
            raise ValueError(f"linearized phase noise needs V_est < {LINEAR_PHASE_LIMIT}, got {V_est}")
        return V_A * V_est
    return -2.0 * V_A * math.expm1(-V_est / 2.0)


def xi_leak(N_R, R_e_db, R_po_db):
    """Reference-to-signal photon leakage N_R / R."""
    if N_R < 0:
        raise ValueError(f"N_R must be >= 0, got {N_R}")
    return N_R / extinction_linear(R_e_db, R_po_db)


def xi_adc(signal_photons, n_bits):
    """ADC quantization noise |alpha_s|^2 / (12 * 2^n)."""
    return signal_photons / (12.0 * 2.0**n_bits)


def xi_other(scenario):
    """Channel terms independent of the reference-pulse intensity."""
    s = scenario
    return (s.V_ta * s.V_A + s.V_rin_atmos * s.V_A + s.xi_background + s.xi_mod
            + s.xi_rin_lo_coeff * s.V_A + s.xi_rin_signal)


_channel_other = xi_other


def _fixed_point(fn, x0, tol=1e-12, damping=0.5, max_iter=1000):
    x = x0
    for _ in range(max_iter):
        nxt = (1 - damping) * x + damping * fn(x)
        if abs(nxt - x) <= tol:
            return nxt
        x = nxt
    raise FixedPointError(f"no convergence after {max_iter} iterations (last {x})")


def _alice_noise(scenario, xi_d_val):
    # 2 (1 + xi_d) / eta_d: detection noise at T = 1 (Alice's side)
    return 2.0 * (1.0 + xi_d_val) / scenario.eta_d


def min_xi_ch(scenario, xi_d, xi_other=None):
    """Minimum channel excess noise at the optimal reference intensity.

    Solves xi_ch = 2 sqrt(V_A / R (xi_ch + 2 (1 + xi_d) / eta_d)) + xi_other
    by damped fixed-point iteration to 1e-10 absolute or better.
    """
    if xi_other is None:
        xi_other = _channel_other(scenario)
    R = extinction_linear(scenario.R_e_db, scenario.R_po_db)
    B = _alice_noise(scenario, xi_d)
    V_A = scenario.V_A
    return _fixed_point(lambda x: 2.0 * math.sqrt(V_A / R * (x + B)) + xi_other, xi_other)


def optimal_N_R(scenario, xi_d, xi_ch=None):
    """Reference-pulse photon number minimizing the channel excess noise,
    sqrt(R (xi_ch + 2 (1 + xi_d) / eta_d) V_A), evaluated at T = 1.

    ``xi_ch`` defaults to the self-consistent minimum from ``min_xi_ch``.
    """
    if scenario.V_A == 0:
        return 0.0
    if xi_ch is None:
        xi_ch = min_xi_ch(scenario, xi_d)
    R = extinction_linear(scenario.R_e_db, scenario.R_po_db)
    return math.sqrt(R * (xi_ch + _alice_noise(scenario, xi_d)) * scenario.V_A)


@dataclass(frozen=True)
class PhaseNoiseParams:
    """Phase-variance ledger of the reference-pulse phase estimate."""

    V_error: float
    V_channel: float
    V_rin_atmos: float
    N_R: float
    V_drift: float = 0.0  # self-coherent delay lines remove laser drift

    @property
    def V_est(self):
        return self.V_error + self.V_drift + self.V_channel


@dataclass(frozen=True)
class NoiseBudget:
    """Itemized excess noise [SNU]; channel terms are input-referred."""

    xi_ta: float
    xi_rin_atmos: float
    xi_background: float
    xi_mod: float
    xi_rin_lo: float
    xi_rin_signal: float
    xi_leak: float
    xi_phase: float
    xi_ch_total: float
    xi_gamma: float
    xi_el: float
    xi_tech: float
    xi_d_total: float
    xi_total_at_input: float
    gamma: float
    T: float
    N_R: float
    V_est: float
    xi_ch_override: float = None

    CHANNEL_TERMS = ("xi_ta", "xi_rin_atmos", "xi_background", "xi_mod",
                     "xi_rin_lo", "xi_rin_signal", "xi_leak", "xi_phase")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def table(self):
        rows = [
            ("xi_ta", "time-of-arrival fluctuations"),
            ("xi_rin_atmos", "RIN of RP due to atmosphere"),
            ("xi_background", "background"),
            ("xi_mod", "modulation"),
            ("xi_rin_lo", "RIN of LO"),
            ("xi_rin_signal", "RIN of signal due to atmosphere"),
            ("xi_leak", "photon leakage to signal"),
            ("xi_phase", "phase estimation error"),
            ("xi_ch_total", "channel excess noise"),
            ("xi_gamma", "wavefront aberrations"),
            ("xi_el", "electronic noise"),
            ("xi_tech", "technical noise"),
            ("xi_d_total", "detector excess noise"),
            ("xi_total_at_input", "total excess noise at input"),
        ]
        rows += [
            ("xi_ch_override", "configured channel excess noise"),
            ("N_R", "reference-pulse photons"),
            ("V_est", "residual phase variance [rad^2]"),
            ("gamma", "coherent efficiency"),
            ("T", "channel transmissivity"),
        ]
        # repr keeps full precision so the table reads back exactly
        lines = [f"{'term':<20}{'value':>24}  description"]
        for key, desc in rows:
            v = getattr(self, key)
            if v is not None:
                lines.append(f"{key:<20}{repr(float(v)):>24}  {desc}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_table(cls, text):
        """Read back the values printed by ``table``."""
        vals = {}
        for line in text.splitlines()[1:]:
            parts = line.split()
            if len(parts) >= 2:
                vals[parts[0]] = float(parts[1])
        vals.setdefault("xi_ch_override", None)
        return cls(**vals)


def assemble_budget(scenario, gamma, N_R, T, linearized=None):
    """Full noise budget at transmissivity ``T`` for a given reference
    intensity ``N_R``.

    The phase-estimation variance depends on the total channel noise, which
    itself contains the resulting phase noise; the pair is solved
    self-consistently. ``xi_phase`` carries the estimation-error part
    (V_error + V_drift); the channel-timing part is booked as ``xi_ta``.
    """
    if not 0 < T <= 1:
        raise ValueError(f"T must lie in (0, 1], got {T}")
    if linearized is None:
        linearized = scenario.phase_noise_linearized
    s = scenario
    xd = xi_d(s, gamma)
    leak = xi_leak(N_R, s.R_e_db, s.R_po_db)
    base = xi_other(s) + leak

    def phase_of(xi_ch):
        ve = v_error(xi_ch, xd, s.eta_d, T, N_R)
        return xi_phase(ve, s.V_A, linearized)

    xi_ch = _fixed_point(lambda x: base + phase_of(x), base, tol=1e-15)
    ve = v_error(xi_ch, xd, s.eta_d, T, N_R)
    phase = xi_phase(ve, s.V_A, linearized)
    pn = PhaseNoiseParams(ve, s.V_ta, s.V_rin_atmos, N_R)
    terms = dict(
        xi_ta=s.V_ta * s.V_A,
        xi_rin_atmos=s.V_rin_atmos * s.V_A,
        xi_background=s.xi_background,
        xi_mod=s.xi_mod,
        xi_rin_lo=s.xi_rin_lo_coeff * s.V_A,
        xi_rin_signal=s.xi_rin_signal,
        xi_leak=leak,
        xi_phase=phase,
    )
    total = sum(terms.values())
    return NoiseBudget(
        **terms,
        xi_ch_total=total,
        xi_gamma=xi_gamma(gamma),
        xi_el=xi_el(s.v_el, gamma),
        xi_tech=s.xi_tech,
        xi_d_total=xd,
        xi_total_at_input=total + 2.0 * xd / (s.eta_d * T),
        gamma=gamma,
        T=T,
        N_R=N_R,
        V_est=pn.V_est,
        xi_ch_override=s.xi_ch_override,
    )


def optimized_budget(scenario, gamma, T):
    """Budget at ``T`` with the reference intensity optimized at T = 1."""
    N_R = optimal_N_R(scenario, xi_d(scenario, gamma))
    return assemble_budget(scenario, gamma, N_R, T)
