import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from irshcn.exceptions import ConfigError
from irshcn.netmodel import (
    LAMBDA0,
    EvalConfig,
    TierConfig,
    db_to_linear,
    dbm_to_watts,
    dump,
    dumps,
    linear_to_db,
    linearize,
    load,
    loads,
    reference_gain,
    resolve_path,
    scenario_to_dict,
    table1_scenario,
    validate,
)


def test_reference_deployment_validates():
    sc = table1_scenario()
    assert validate(sc).ok
    t1, t2 = sc.tiers
    assert (t1.transmit_power_dbm, t1.height_m, t1.pathloss_exponent) == (53, 20, 4)
    assert (t2.transmit_power_dbm, t2.height_m, t2.pathloss_exponent) == (33, 10, 3.5)
    assert t1.density_per_m2 == pytest.approx(10 * LAMBDA0)
    assert t2.density_per_m2 == pytest.approx(50 * LAMBDA0)
    irs = sc.irs
    assert (irs.height_m, irs.elements, irs.pathloss_exponent, irs.local_radius_m) == (1, 1000, 3, 50)
    assert irs.density_per_m2 == pytest.approx(200 * LAMBDA0)
    ev = sc.eval
    assert (ev.carrier_hz, ev.noise_dbm, ev.priority_factor) == (2e9, -117, 0.6)
    assert ev.rate_threshold == pytest.approx(1.0)


def test_pathloss_exponent_two_is_rejected():
    sc = table1_scenario()
    bad = replace(sc, tiers=(replace(sc.tiers[0], pathloss_exponent=2.0), sc.tiers[1]))
    report = validate(bad)
    assert not report.ok
    assert any("tiers[1].pathloss_exponent" in v and "pathloss_exponent > 2" in v
               for v in report.violations)


def test_zero_load_factor_is_rejected():
    sc = table1_scenario(load_factor=0.0)
    report = validate(sc)
    assert not report
    assert sum("load_factor" in v for v in report.violations) == 2
    with pytest.raises(ConfigError):
        report.raise_if_failed()


def test_dbm_conversions():
    with mp.workdps(40):
        ref = float(mp.mpf(10) ** ((mp.mpf(53) - 30) / 10))
    assert dbm_to_watts(53) == pytest.approx(ref, rel=1e-14)
    assert dbm_to_watts(53) == pytest.approx(199.526, rel=1e-5)
    assert dbm_to_watts(0) == pytest.approx(1e-3, rel=1e-15)


def test_reference_gain_oracle():
    with mp.workdps(40):
        ref = float((4 * mp.pi * mp.mpf(2e9) / mp.mpf(3e8)) ** -2)
    beta = reference_gain(2e9)
    assert beta == pytest.approx(ref, rel=1e-14)
    # the rounded figure quoted alongside the definition is 1.4236e-4; the definition gives 1.4248e-4
    assert beta == pytest.approx(1.4236e-4, rel=1e-3)
    assert linearize(table1_scenario()).beta == beta


def test_linearize_thins_densities():
    lin = linearize(table1_scenario(load_factor=0.25))
    for t in lin.tiers:
        assert t.active_density == pytest.approx(0.25 * t.density)
    full = linearize(table1_scenario())
    assert all(t.active_density == t.density for t in full.tiers)


@given(st.floats(-150, 150, allow_nan=False))
def test_db_round_trip(db):
    assert float(linear_to_db(db_to_linear(db))) == pytest.approx(db, rel=1e-12, abs=1e-12)


@given(st.floats(0.01, 1.0), st.floats(1e-7, 1e-2))
def test_thinned_density_never_exceeds_density(p, lam):
    t = TierConfig(30.0, 10.0, lam, 3.0, 1.0, p)
    assert t.active_density <= t.density_per_m2
    assert (t.active_density == t.density_per_m2) == (p == 1.0)


def test_threshold_and_rate_interconvert():
    ev = EvalConfig(sinr_threshold=3.0)
    assert ev.rate_threshold == pytest.approx(2.0)
    assert ev.with_threshold_db(0).sinr_threshold == pytest.approx(1.0)


# --- config file ------------------------------------------------------------

CONFIG = """
lambda0 = 5e-6

[[tiers]]
transmit_power_dbm = 53
height_m = 20
density_lambda0 = 10
pathloss_exponent = 4

[[tiers]]
transmit_power_dbm = 33
height_m = 10
density_lambda0 = 50
pathloss_exponent = 3.5
bias = 2.0

[irs]
height_m = 1
elements = 1000
density_lambda0 = 200
pathloss_exponent = 3
local_radius_m = 50

[eval]
rate_threshold = 1.0
sinr_threshold_db = 0.0

[numerics]
laplace_method = "talbot_contour"
laplace_terms = 32
"""


def test_config_parses_with_lambda0_multiples():
    sc = loads(CONFIG)
    assert sc.tiers[1].bias == 2.0
    assert sc.tiers[1].density_per_m2 == pytest.approx(50 * LAMBDA0)
    assert sc.irs.density_per_m2 == pytest.approx(1e-3)
    assert sc.eval.sinr_threshold == pytest.approx(1.0)
    assert sc.eval.laplace.method == "talbot_contour"
    assert sc.eval.laplace.terms == 32


def test_config_round_trip_is_exact(tmp_path):
    sc = loads(CONFIG)
    path = tmp_path / "s.toml"
    dump(sc, path)
    again = load(path)
    assert again == sc
    assert dumps(again) == dumps(sc)


def test_canonical_form_uses_absolute_densities():
    doc = scenario_to_dict(loads(CONFIG))
    assert "density_lambda0" not in doc["irs"]
    assert doc["irs"]["density_per_m2"] == pytest.approx(1e-3)


@pytest.mark.parametrize("text, match", [
    (CONFIG.replace("bias = 2.0", "bais = 2.0"), "bais"),
    (CONFIG.replace("[numerics]", "[numerics]\nturbo = true"), "turbo"),
    (CONFIG.replace("rate_threshold = 1.0", "rate_threshold = 2.0"), "inconsistent"),
    (CONFIG.replace("local_radius_m = 50", ""), "local_radius_m"),
    ("this is not toml = = ", "TOML"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        loads(text)


# --- sweep paths ------------------------------------------------------------

def test_resolve_paths():
    sc = table1_scenario()
    assert resolve_path(sc, "tiers[2].bias", 4).tiers[1].bias == 4.0
    assert resolve_path(sc, "irs.density_lambda0", 400).irs.density_per_m2 == pytest.approx(2e-3)
    assert resolve_path(sc, "irs.density", 1e-4).irs.density_per_m2 == 1e-4
    assert resolve_path(sc, "eval.sinr_threshold_db", 10).eval.sinr_threshold == pytest.approx(10.0)
    assert resolve_path(sc, "eval.rate_threshold", 2).eval.sinr_threshold == pytest.approx(3.0)
    assert resolve_path(sc, "irs.elements", 64).irs.elements == 64
    # the original is untouched
    assert sc.tiers[1].bias == 1.0


@pytest.mark.parametrize("path", ["tiers[3].bias", "tiers[0].bias", "irs.colour", "foo.bar", "irs"])
def test_resolve_bad_paths(path):
    with pytest.raises(ConfigError):
        resolve_path(table1_scenario(), path, 1.0)


def test_empty_delta_probability():
    irs = table1_scenario().irs
    assert irs.empty_probability == pytest.approx(math.exp(-1e-3 * math.pi * 2500))
    assert table1_scenario(irs_density=0).irs.empty_probability == 1.0
    assert np.isfinite(irs.empty_probability)
