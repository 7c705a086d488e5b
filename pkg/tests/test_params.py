import dataclasses
import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from dllo_sat import params
from dllo_sat.params import ConfigError, FiniteSizeParams, Scenario, SimulationControl


def test_empty_document_gives_table_defaults():
    sc, fsp, ctrl = params.load_scenario("")
    assert sc.f == 100e6
    assert sc.w0 == 0.15
    assert sc.D_R == 1.0
    assert sc.H == 500e3
    assert sc.eta_d == 0.95
    assert sc.V_A == 1.5
    assert sc.tau0 == 130e-12
    assert sc.wavelength == 1550e-9
    assert sc.xi_ch_override == 0.0172
    assert (sc.V_ta, sc.V_rin_atmos, sc.xi_rin_lo_coeff) == (0.0012, 0.002, 0.00035)
    assert (sc.xi_rin_signal, sc.xi_tech, sc.v_el) == (0.0001, 0.005, 0.01)
    assert (sc.R_e_db, sc.R_po_db) == (60.0, 30.0)
    assert fsp.N_total == 2e12 and fsp.n == 1e12
    assert (fsp.beta, fsp.eps_total, fsp.d_bits) == (0.95, 1e-55, 5)
    assert ctrl.n_max == 14 and ctrl.grid_size == 512


def test_zeta_out_of_range_names_field():
    with pytest.raises(ConfigError) as err:
        params.load_scenario("scenario:\n  zeta: 95\n")
    assert err.value.field == "zeta"
    assert "zeta" in str(err.value)


@pytest.mark.parametrize("doc, field", [
    ("scenario:\n  eta_d: 1.5\n", "eta_d"),
    ("scenario:\n  V_A: 0\n", "V_A"),
    ("scenario:\n  w0: -1\n", "w0"),
    ("simulation:\n  grid_size: 300\n", "grid_size"),
    ("simulation:\n  grid_size: 64\n", "grid_size"),
    ("simulation:\n  iterations: 0\n", "iterations"),
    ("simulation:\n  n_screens: 0\n", "n_screens"),
    ("finite_size:\n  key_fraction: 1.0\n", "key_fraction"),
    ("scenario:\n  bogus: 1\n", "scenario.bogus"),
    ("scenario:\n  xi_ch_source: guess\n", "xi_ch_source"),
])
def test_invariant_violations(doc, field):
    with pytest.raises(ConfigError) as err:
        params.load_scenario(doc)
    assert err.value.field == field


def test_unknown_section_and_bad_syntax():
    with pytest.raises(ConfigError):
        params.load_scenario("weather:\n  rain: 1\n")
    with pytest.raises(ConfigError):
        params.load_scenario("scenario: [1, 2\n")
    with pytest.raises(ConfigError):
        params.load_scenario("- just\n- a list\n")


def test_type_coercion():
    sc, fsp, ctrl = params.load_scenario(
        "scenario:\n  lambda: 1e-6\nfinite_size:\n  eps_total: 1e-20\nsimulation:\n  seed: 7\n")
    assert sc.wavelength == 1e-6
    assert fsp.eps_total == 1e-20
    assert ctrl.seed == 7
    with pytest.raises(ConfigError):
        params.load_scenario("simulation:\n  seed: 1.5\n")
    with pytest.raises(ConfigError):
        params.load_scenario("scenario:\n  phase_noise_linearized: 3\n")


def test_eps_composition_identity():
    fsp = FiniteSizeParams()
    total = fsp.eps_EC + 2 * fsp.eps_s + fsp.eps_PA + fsp.eps_PE
    assert math.isclose(total, fsp.eps_total, rel_tol=1e-12)
    with pytest.raises(ConfigError):
        FiniteSizeParams(eps_s=1e-56, eps_PA=1e-56, eps_PE=1e-56, eps_EC=1e-56)


def test_round_trip_defaults_and_shipped_file():
    cfg = params.load_scenario("")
    assert params.load_scenario(params.dump_scenario(*cfg)) == cfg
    shipped = params.load_scenario_file(
        __import__("pathlib").Path(__file__).parents[1] / "scenarios" / "default.yaml")
    assert shipped == cfg


@settings(max_examples=50, deadline=None)
@given(
    zeta=st.floats(0, 89.9),
    V_A=st.floats(0.01, 50),
    eta=st.floats(0.01, 1.0),
    seed=st.integers(0, 2**63),
    frac=st.floats(0.05, 0.95),
)
def test_round_trip_property(zeta, V_A, eta, seed, frac):
    cfg = (Scenario(zeta=zeta, V_A=V_A, eta_d=eta), FiniteSizeParams(key_fraction=frac),
           SimulationControl(seed=seed))
    text = params.dump_scenario(*cfg)
    assert params.load_scenario(text) == cfg
    # loading is pure: same text, same structure
    assert params.load_scenario(text) == params.load_scenario(text)


def test_apply_overrides():
    cfg = params.load_scenario("")
    sc, fsp, ctrl = params.apply_overrides(cfg, {
        "scenario.zeta": "60", "finite_size.eps_total": "1e-30", "simulation.grid_size": 256})
    assert sc.zeta == 60.0 and ctrl.grid_size == 256
    assert fsp.eps_s == pytest.approx(2e-31)
    with pytest.raises(ConfigError) as err:
        params.apply_overrides(cfg, {"scenario.zeta": "95"})
    assert err.value.field == "zeta"
    with pytest.raises(ConfigError):
        params.apply_overrides(cfg, {"nowhere.x": 1})


def test_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        Scenario().zeta = 10


def test_fingerprint_stable_and_sensitive():
    a = params.fingerprint(Scenario())
    assert a == params.fingerprint(Scenario())
    assert a != params.fingerprint(Scenario(zeta=60))
    assert yaml.safe_load(params.dump_scenario(Scenario(), FiniteSizeParams(), SimulationControl()))
