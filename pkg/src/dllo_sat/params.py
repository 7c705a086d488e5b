"""Scenario configuration: physical parameters, finite-size settings and
Monte-Carlo controls, loaded from a single YAML document.

The document has three optional sections::

    scenario:      # link, detector and noise parameters
    finite_size:   # block sizes and failure probabilities
    simulation:    # phase-screen campaign controls

Any missing field takes its default. See ``scenarios/default.yaml`` for a
commented example.
"""

import dataclasses
import math
import typing
from dataclasses import dataclass
from typing import Optional

import yaml

__all__ = [
    "ConfigError",
    "Scenario",
    "FiniteSizeParams",
    "SimulationControl",
    "load_scenario",
    "apply_overrides",
    "load_scenario_file",
    "dump_scenario",
    "fingerprint",
]


class ConfigError(ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _check(cond, name, message):
    if not cond:
        raise ConfigError(name, message)


XI_CH_SOURCES = ("optimal", "computed", "override")


@dataclass(frozen=True)
class Scenario:
    """Physical and protocol parameters of one link.

    Units are SI except the noise terms, which are in shot-noise units
    (SNU), and the phase variances, which are in rad^2.
    """

    f: float = 100e6
    w0: float = 0.15
    D_R: float = 1.0
    H: float = 500e3
    eta_d: float = 0.95
    V_A: float = 1.5
    tau0: float = 130e-12
    wavelength: float = 1550e-9
    zeta: float = 0.0
    v_el: float = 0.01
    xi_tech: float = 0.005
    R_e_db: float = 60.0
    R_po_db: float = 30.0
    n_adc_bits: int = 10
    V_ta: float = 0.0012
    V_rin_atmos: float = 0.002
    xi_rin_lo_coeff: float = 0.00035
    xi_rin_signal: float = 0.0001
    xi_background: float = 0.0
    xi_mod: float = 0.0
    xi_ch_override: Optional[float] = 0.0172
    # Channel excess noise fed to the key rate. "optimal": the minimum at the
    # optimal reference intensity, evaluated Alice-side (T = 1) and held over
    # the loss sweep; "computed": the budget assembled at each channel T;
    # "override": xi_ch_override.
    xi_ch_source: str = "optimal"
    # Phase noise: first-order form V_A * V_est, or the exact exponential.
    phase_noise_linearized: bool = True

    def __post_init__(self):
        for name in ("f", "w0", "D_R", "H", "tau0", "wavelength"):
            v = getattr(self, name)
            _check(math.isfinite(v) and v > 0, name, f"must be > 0, got {v}")
        _check(0 < self.eta_d <= 1, "eta_d", f"must lie in (0, 1], got {self.eta_d}")
        _check(self.V_A > 0, "V_A", f"must be > 0, got {self.V_A}")
        _check(0 <= self.zeta < 90, "zeta", f"must lie in [0, 90) degrees, got {self.zeta}")
        for name in ("v_el", "xi_tech", "V_ta", "V_rin_atmos", "xi_rin_lo_coeff",
                     "xi_rin_signal", "xi_background", "xi_mod", "R_e_db", "R_po_db"):
            v = getattr(self, name)
            _check(math.isfinite(v) and v >= 0, name, f"must be >= 0, got {v}")
        _check(self.n_adc_bits >= 1, "n_adc_bits", f"must be >= 1, got {self.n_adc_bits}")
        if self.xi_ch_override is not None:
            _check(self.xi_ch_override >= 0, "xi_ch_override",
                   f"must be >= 0, got {self.xi_ch_override}")
        _check(self.xi_ch_source in XI_CH_SOURCES, "xi_ch_source",
               f"must be one of {XI_CH_SOURCES}, got {self.xi_ch_source!r}")
        _check(self.xi_ch_source != "override" or self.xi_ch_override is not None,
               "xi_ch_override", "required when xi_ch_source is 'override'")

    @property
    def k(self):
        return 2 * math.pi / self.wavelength


@dataclass(frozen=True)
class FiniteSizeParams:
    """Finite-size security settings.

    Component failure probabilities left unset split ``eps_total`` evenly
    five ways, which satisfies eps_EC + 2 eps_s + eps_PA + eps_PE = eps_total.
    """

    N_total: float = 2e12
    key_fraction: float = 0.5
    beta: float = 0.95
    eps_total: float = 1e-55
    eps_s: Optional[float] = None
    eps_PA: Optional[float] = None
    eps_PE: Optional[float] = None
    eps_EC: Optional[float] = None
    d_bits: int = 5

    def __post_init__(self):
        _check(self.N_total >= 1, "N_total", f"must be >= 1, got {self.N_total}")
        _check(0 < self.key_fraction < 1, "key_fraction",
               f"must lie in (0, 1), got {self.key_fraction}")
        _check(0 < self.beta <= 1, "beta", f"must lie in (0, 1], got {self.beta}")
        _check(0 < self.eps_total < 1, "eps_total", f"must lie in (0, 1), got {self.eps_total}")
        _check(self.d_bits >= 0, "d_bits", f"must be >= 0, got {self.d_bits}")
        share = self.eps_total / 5
        for name in ("eps_s", "eps_PA", "eps_PE", "eps_EC"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, share)
            v = getattr(self, name)
            _check(0 < v < 1, name, f"must lie in (0, 1), got {v}")
        total = self.eps_EC + 2 * self.eps_s + self.eps_PA + self.eps_PE
        _check(math.isclose(total, self.eps_total, rel_tol=1e-9), "eps_total",
               f"eps_EC + 2 eps_s + eps_PA + eps_PE = {total:.6g} != {self.eps_total:.6g}")

    @property
    def n(self):
        """Symbols kept for key generation."""
        return self.key_fraction * self.N_total

    @property
    def m(self):
        """Symbols disclosed for parameter estimation."""
        return self.N_total - self.n


@dataclass(frozen=True)
class SimulationControl:
    """Controls for the phase-screen Monte-Carlo campaign."""

    grid_size: int = 512
    iterations: int = 500
    seed: int = 0
    n_screens: int = 10
    n_max: int = 14
    L0: float = 25.0
    l0: float = 0.01
    h_top: float = 20e3
    h0: float = 2400.0  # ground-station altitude [m]
    hv_wind: float = 21.0
    hv_A: float = 1.7e-14
    n_subharmonics: int = 3
    # Physical side of the receiver-plane grid; None means 8 aperture diameters.
    grid_extent: Optional[float] = None
    workers: int = 1
    gamma_variant: str = "piston"

    def __post_init__(self):
        n = self.grid_size
        _check(n >= 128 and (n & (n - 1)) == 0, "grid_size",
               f"must be a power of two >= 128, got {n}")
        _check(self.iterations >= 1, "iterations", f"must be >= 1, got {self.iterations}")
        _check(0 <= self.seed < 2**64, "seed", f"must fit in 64 bits, got {self.seed}")
        _check(self.n_screens >= 1, "n_screens", f"must be >= 1, got {self.n_screens}")
        _check(self.n_max >= 0, "n_max", f"must be >= 0, got {self.n_max}")
        _check(self.L0 > 0, "L0", f"must be > 0, got {self.L0}")
        _check(self.l0 >= 0, "l0", f"must be >= 0, got {self.l0}")
        _check(self.h_top > self.h0 >= 0, "h_top", "need h_top > h0 >= 0")
        _check(self.hv_wind >= 0, "hv_wind", f"must be >= 0, got {self.hv_wind}")
        _check(self.hv_A >= 0, "hv_A", f"must be >= 0, got {self.hv_A}")
        _check(self.n_subharmonics >= 0, "n_subharmonics",
               f"must be >= 0, got {self.n_subharmonics}")
        if self.grid_extent is not None:
            _check(self.grid_extent > 0, "grid_extent", f"must be > 0, got {self.grid_extent}")
        _check(self.workers >= 1, "workers", f"must be >= 1, got {self.workers}")
        _check(self.gamma_variant in ("piston", "real"), "gamma_variant",
               f"must be 'piston' or 'real', got {self.gamma_variant!r}")


_SECTIONS = {
    "scenario": Scenario,
    "finite_size": FiniteSizeParams,
    "simulation": SimulationControl,
}

# Accepted spellings that differ from the Python attribute name.
_ALIASES = {"scenario": {"lambda": "wavelength"}}


def _coerce(cls, name, value):
    hint = typing.get_type_hints(cls)[name]
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    if optional:
        if value is None:
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(value, bool):
            raise TypeError
        if hint is int:
            as_float = float(value)
            if not as_float.is_integer():
                raise TypeError
            return int(as_float) if not isinstance(value, int) else value
        if hint is float:
            # PyYAML reads "1e-55" (no decimal point) as a string.
            return float(value)
        if hint is str:
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {hint.__name__}, got {value!r}") from None
    raise ConfigError(name, f"unsupported field type {hint!r}")


def _build(section, cls, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(section, "section must be a mapping")
    aliases = _ALIASES.get(section, {})
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = aliases.get(key, key)
        if name not in names:
            raise ConfigError(f"{section}.{key}", "unknown field")
        kwargs[name] = _coerce(cls, name, value)
    return cls(**kwargs)


def load_scenario(text):
    """Parse a configuration document.

    Returns ``(Scenario, FiniteSizeParams, SimulationControl)``. Raises
    ``ConfigError`` on malformed text, unknown keys or violated bounds.
    """
    try:
        doc = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"parse failure: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be a mapping")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    return tuple(_build(s, cls, doc.get(s)) for s, cls in _SECTIONS.items())


def apply_overrides(configs, overrides):
    """Return ``configs`` with ``{"section.key": value}`` overrides applied.

    String values are read as YAML scalars, so ``"1e-55"``, ``"true"`` and
    ``"null"`` work as on the command line.
    """
    configs = list(configs)
    order = list(_SECTIONS)
    pending = {s: {} for s in order}
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS or not key:
            raise ConfigError(dotted, "expected section.key with section in " + ", ".join(order))
        if isinstance(value, str):
            try:
                value = yaml.safe_load(value)
            except yaml.YAMLError:
                pass
        cls = _SECTIONS[section]
        name = _ALIASES.get(section, {}).get(key, key)
        if name not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(dotted, "unknown field")
        pending[section][name] = _coerce(cls, name, value)
    fs = pending["finite_size"]
    if "eps_total" in fs:
        # component shares derived from the old total must be re-derived
        for name in ("eps_s", "eps_PA", "eps_PE", "eps_EC"):
            fs.setdefault(name, None)
    for i, section in enumerate(order):
        if pending[section]:
            configs[i] = dataclasses.replace(configs[i], **pending[section])
    return tuple(configs)


def load_scenario_file(path):
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read())


def as_dict(scenario, fsp, ctrl):
    return {
        "scenario": dataclasses.asdict(scenario),
        "finite_size": dataclasses.asdict(fsp),
        "simulation": dataclasses.asdict(ctrl),
    }


def dump_scenario(scenario, fsp, ctrl):
    """Serialize to YAML text that ``load_scenario`` reads back unchanged."""
    return yaml.safe_dump(as_dict(scenario, fsp, ctrl), sort_keys=False)


def fingerprint(scenario, fsp=None, ctrl=None):
    """Short stable digest of the resolved configuration. The worker count
    is left out since results do not depend on it."""
    import hashlib
    import json

    fsp = fsp or FiniteSizeParams()
    ctrl = ctrl or SimulationControl()
    d = as_dict(scenario, fsp, ctrl)
    d["simulation"].pop("workers")
    blob = json.dumps(d, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
