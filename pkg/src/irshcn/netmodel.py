"""Scenario description: BS tiers, the IRS tier and evaluation settings.

Everything here is immutable. Quantities are stored the way a user writes
them (dBm for powers); :func:`linearize` produces the watts/metres view the
engines compute with.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError
from .specialfn import LaplaceInverter

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

import tomli_w

SPEED_OF_LIGHT = 3.0e8
LAMBDA0 = 5e-6  # baseline density used by the reference experiments, per m^2


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def reference_gain(carrier_hz):
    """Average channel power gain at 1 m, (4 pi f_c / c)^-2."""
    return (4.0 * math.pi * carrier_hz / SPEED_OF_LIGHT) ** -2


@dataclass(frozen=True)
class TierConfig:
    """One tier of base stations."""

    transmit_power_dbm: float
    height_m: float
    density_per_m2: float
    pathloss_exponent: float
    bias: float = 1.0
    load_factor: float = 1.0

    @property
    def active_density(self):
        """Density of BSs transmitting on a given resource block."""
        return self.load_factor * self.density_per_m2


@dataclass(frozen=True)
class IrsConfig:
    height_m: float
    elements: int
    density_per_m2: float
    pathloss_exponent: float
    local_radius_m: float

    @property
    def empty_probability(self):
        """Probability that no IRS lies in the local region."""
        return math.exp(-self.density_per_m2 * math.pi * self.local_radius_m ** 2)


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings: carrier, noise, threshold and numeric controls.

    The SINR threshold is stored linear; ``rate_threshold`` is derived from it.
    """

    carrier_hz: float = 2e9
    noise_dbm: float = -117.0
    sinr_threshold: float = 1.0
    priority_factor: float = 0.6
    quad_rel_tol: float = 1e-6
    tail_cutoff_exponent: float = 30.0
    tau_threshold: int = 20
    laplace: LaplaceInverter = field(default_factory=LaplaceInverter)

    @property
    def rate_threshold(self):
        return math.log2(1.0 + self.sinr_threshold)

    @property
    def sinr_threshold_db(self):
        return float(linear_to_db(self.sinr_threshold))

    @property
    def beta_ref_gain(self):
        return reference_gain(self.carrier_hz)

    @property
    def noise_watts(self):
        return float(dbm_to_watts(self.noise_dbm))

    def with_threshold_db(self, db):
        return replace(self, sinr_threshold=float(db_to_linear(db)))


@dataclass(frozen=True)
class Scenario:
    tiers: tuple
    irs: IrsConfig
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        object.__setattr__(self, "tiers", tuple(self.tiers))

    @property
    def n_tiers(self):
        return len(self.tiers)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def raise_if_failed(self):
        if self.violations:
            raise ConfigError("invalid scenario: " + "; ".join(self.violations))


def validate(scenario: Scenario) -> ValidationReport:
    """Check every physical invariant; collect violations with field paths."""
    bad = []

    def check(cond, path, rule):
        if not cond:
            bad.append(f"{path}: {rule}")

    check(len(scenario.tiers) >= 1, "tiers", "at least one tier")
    for i, t in enumerate(scenario.tiers, start=1):
        p = f"tiers[{i}]"
        check(t.pathloss_exponent > 2, f"{p}.pathloss_exponent", "pathloss_exponent > 2")
        check(t.density_per_m2 > 0, f"{p}.density_per_m2", "density_per_m2 > 0")
        check(t.height_m >= 0, f"{p}.height_m", "height_m >= 0")
        check(0 < t.load_factor <= 1, f"{p}.load_factor", "0 < load_factor <= 1")
        check(t.bias > 0, f"{p}.bias", "bias > 0")
        check(math.isfinite(t.transmit_power_dbm), f"{p}.transmit_power_dbm", "finite")
    irs = scenario.irs
    check(irs.pathloss_exponent > 2, "irs.pathloss_exponent", "pathloss_exponent > 2")
    check(irs.elements >= 1 and int(irs.elements) == irs.elements, "irs.elements",
          "elements >= 1 (integer)")
    check(irs.local_radius_m > 0, "irs.local_radius_m", "local_radius_m > 0")
    check(irs.height_m >= 0, "irs.height_m", "height_m >= 0")
    check(irs.density_per_m2 >= 0, "irs.density_per_m2", "density_per_m2 >= 0")
    ev = scenario.eval
    check(ev.carrier_hz > 0, "eval.carrier_hz", "carrier_hz > 0")
    check(ev.sinr_threshold > 0, "eval.sinr_threshold", "sinr_threshold > 0")
    check(0 < ev.priority_factor < 1, "eval.priority_factor", "0 < priority_factor < 1")
    check(0 < ev.quad_rel_tol < 1, "numerics.quad_rel_tol", "0 < quad_rel_tol < 1")
    check(ev.tail_cutoff_exponent > 0, "numerics.tail_cutoff_exponent", "> 0")
    check(1 <= ev.tau_threshold <= 20, "numerics.tau_threshold", "1 <= tau_threshold <= 20")
    return ValidationReport(tuple(bad))


@dataclass(frozen=True)
class LinearTier:
    power_w: float
    height_m: float
    density: float
    active_density: float
    alpha: float
    bias: float
    load_factor: float


@dataclass(frozen=True)
class LinearScenario:
    """Linear-unit view of a scenario: watts, metres, thinned densities and beta."""

    tiers: tuple
    irs: IrsConfig
    beta: float
    noise_w: float
    sinr_threshold: float
    rate_threshold: float
    eval: EvalConfig

    @property
    def n_tiers(self):
        return len(self.tiers)


def linearize(scenario: Scenario) -> LinearScenario:
    tiers = tuple(
        LinearTier(
            power_w=float(dbm_to_watts(t.transmit_power_dbm)),
            height_m=float(t.height_m),
            density=float(t.density_per_m2),
            active_density=float(t.load_factor * t.density_per_m2),
            alpha=float(t.pathloss_exponent),
            bias=float(t.bias),
            load_factor=float(t.load_factor),
        )
        for t in scenario.tiers
    )
    ev = scenario.eval
    return LinearScenario(
        tiers=tiers,
        irs=scenario.irs,
        beta=ev.beta_ref_gain,
        noise_w=ev.noise_watts,
        sinr_threshold=ev.sinr_threshold,
        rate_threshold=ev.rate_threshold,
        eval=ev,
    )


def table1_scenario(*, irs_density=200 * LAMBDA0, pico_density=50 * LAMBDA0,
                    pico_bias=1.0, sinr_threshold_db=0.0, load_factor=1.0) -> Scenario:
    """Two-tier macro/pico reference deployment with 1000-element IRSs."""
    tiers = (
        TierConfig(53.0, 20.0, 10 * LAMBDA0, 4.0, 1.0, load_factor),
        TierConfig(33.0, 10.0, pico_density, 3.5, pico_bias, load_factor),
    )
    irs = IrsConfig(height_m=1.0, elements=1000, density_per_m2=irs_density,
                    pathloss_exponent=3.0, local_radius_m=50.0)
    ev = EvalConfig().with_threshold_db(sinr_threshold_db)
    return Scenario(tiers, irs, ev)


# ---------------------------------------------------------------------------
# Config file I/O
# ---------------------------------------------------------------------------

_TIER_KEYS = {f.name for f in fields(TierConfig)} | {"density_lambda0"}
_IRS_KEYS = {f.name for f in fields(IrsConfig)} | {"density_lambda0"}
_EVAL_KEYS = {"carrier_hz", "noise_dbm", "sinr_threshold", "sinr_threshold_db",
              "rate_threshold", "priority_factor"}
_NUMERIC_KEYS = {"quad_rel_tol", "tail_cutoff_exponent", "tau_threshold",
                 "laplace_method", "laplace_terms", "laplace_precision"}
_TOP_KEYS = {"lambda0", "tiers", "irs", "eval", "numerics"}


def _reject_unknown(section, allowed, where):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _density(section, lambda0, where):
    if "density_per_m2" in section and "density_lambda0" in section:
        raise ConfigError(f"{where}: give density_per_m2 or density_lambda0, not both")
    if "density_lambda0" in section:
        return float(section["density_lambda0"]) * lambda0
    if "density_per_m2" not in section:
        raise ConfigError(f"{where}: missing density_per_m2")
    return float(section["density_per_m2"])


def _threshold(ev):
    given = [k for k in ("sinr_threshold", "sinr_threshold_db", "rate_threshold") if k in ev]
    values = []
    if "sinr_threshold" in ev:
        values.append(float(ev["sinr_threshold"]))
    if "sinr_threshold_db" in ev:
        values.append(float(db_to_linear(ev["sinr_threshold_db"])))
    if "rate_threshold" in ev:
        values.append(2.0 ** float(ev["rate_threshold"]) - 1.0)
    if not values:
        return 1.0
    if not np.allclose(values, values[0], rtol=1e-9, atol=0.0):
        raise ConfigError(f"inconsistent thresholds {given}: gamma0 must equal 2^R0 - 1")
    return values[0]


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        _reject_unknown(doc, _TOP_KEYS, "top level")
        lambda0 = float(doc.get("lambda0", LAMBDA0))
        raw_tiers = doc.get("tiers")
        if not raw_tiers:
            raise ConfigError("at least one [[tiers]] entry is required")
        tiers = []
        for i, t in enumerate(raw_tiers, start=1):
            where = f"tiers[{i}]"
            _reject_unknown(t, _TIER_KEYS, where)
            tiers.append(TierConfig(
                transmit_power_dbm=float(t["transmit_power_dbm"]),
                height_m=float(t["height_m"]),
                density_per_m2=_density(t, lambda0, where),
                pathloss_exponent=float(t["pathloss_exponent"]),
                bias=float(t.get("bias", 1.0)),
                load_factor=float(t.get("load_factor", 1.0)),
            ))
        irs_doc = doc.get("irs")
        if irs_doc is None:
            raise ConfigError("missing [irs] section")
        _reject_unknown(irs_doc, _IRS_KEYS, "irs")
        irs = IrsConfig(
            height_m=float(irs_doc["height_m"]),
            elements=int(irs_doc["elements"]),
            density_per_m2=_density(irs_doc, lambda0, "irs"),
            pathloss_exponent=float(irs_doc["pathloss_exponent"]),
            local_radius_m=float(irs_doc["local_radius_m"]),
        )
        ev = doc.get("eval", {})
        _reject_unknown(ev, _EVAL_KEYS, "eval")
        num = doc.get("numerics", {})
        _reject_unknown(num, _NUMERIC_KEYS, "numerics")
        defaults = EvalConfig()
        inverter = LaplaceInverter(
            method=str(num.get("laplace_method", defaults.laplace.method)),
            terms=int(num.get("laplace_terms", defaults.laplace.terms)),
            precision_target=float(num.get("laplace_precision", defaults.laplace.precision_target)),
        )
        evc = EvalConfig(
            carrier_hz=float(ev.get("carrier_hz", defaults.carrier_hz)),
            noise_dbm=float(ev.get("noise_dbm", defaults.noise_dbm)),
            sinr_threshold=_threshold(ev),
            priority_factor=float(ev.get("priority_factor", defaults.priority_factor)),
            quad_rel_tol=float(num.get("quad_rel_tol", defaults.quad_rel_tol)),
            tail_cutoff_exponent=float(num.get("tail_cutoff_exponent",
                                               defaults.tail_cutoff_exponent)),
            tau_threshold=int(num.get("tau_threshold", defaults.tau_threshold)),
            laplace=inverter,
        )
    except KeyError as exc:
        raise ConfigError(f"missing required key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return Scenario(tuple(tiers), irs, evc)


def scenario_to_dict(scenario: Scenario) -> dict:
    """Canonical document form: absolute densities, linear SINR threshold."""
    ev = scenario.eval
    return {
        "tiers": [asdict(t) for t in scenario.tiers],
        "irs": asdict(scenario.irs),
        "eval": {
            "carrier_hz": ev.carrier_hz,
            "noise_dbm": ev.noise_dbm,
            "sinr_threshold": ev.sinr_threshold,
            "priority_factor": ev.priority_factor,
        },
        "numerics": {
            "quad_rel_tol": ev.quad_rel_tol,
            "tail_cutoff_exponent": ev.tail_cutoff_exponent,
            "tau_threshold": ev.tau_threshold,
            "laplace_method": ev.laplace.method,
            "laplace_terms": ev.laplace.terms,
            "laplace_precision": ev.laplace.precision_target,
        },
    }


def loads(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    return scenario_from_dict(doc)


def dumps(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(scenario))


def load(path) -> Scenario:
    return loads(Path(path).read_text())


def dump(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps(scenario))


def resolve_path(scenario: Scenario, path: str, value) -> Scenario:
    """Return a copy of ``scenario`` with the parameter at ``path`` set to ``value``.

    Paths look like ``irs.density_per_m2``, ``tiers[2].bias`` (tiers counted
    from 1) or ``eval.sinr_threshold_db``. ``density_lambda0`` sets a density
    in multiples of the baseline density.
    """
    head, _, leaf = path.partition(".")
    if not leaf:
        raise ConfigError(f"parameter path {path!r} must look like section.field")
    value = float(value)
    if leaf == "density":
        leaf = "density_per_m2"
    if leaf == "density_lambda0":
        leaf, value = "density_per_m2", value * LAMBDA0

    if head.startswith("tiers[") and head.endswith("]"):
        try:
            idx = int(head[6:-1])
        except ValueError:
            raise ConfigError(f"bad tier index in {path!r}") from None
        if not 1 <= idx <= scenario.n_tiers:
            raise ConfigError(f"tier index {idx} out of range 1..{scenario.n_tiers}")
        tier = scenario.tiers[idx - 1]
        if leaf not in {f.name for f in fields(TierConfig)}:
            raise ConfigError(f"unknown tier field {leaf!r}")
        tiers = list(scenario.tiers)
        tiers[idx - 1] = replace(tier, **{leaf: value})
        return replace(scenario, tiers=tuple(tiers))
    if head == "irs":
        if leaf not in {f.name for f in fields(IrsConfig)}:
            raise ConfigError(f"unknown irs field {leaf!r}")
        if leaf == "elements":
            value = int(value)
        return replace(scenario, irs=replace(scenario.irs, **{leaf: value}))
    if head == "eval":
        ev = scenario.eval
        if leaf == "sinr_threshold_db":
            return replace(scenario, eval=ev.with_threshold_db(value))
        if leaf == "rate_threshold":
            return replace(scenario, eval=replace(ev, sinr_threshold=2.0 ** value - 1.0))
        if leaf in ("sinr_threshold", "carrier_hz", "noise_dbm", "priority_factor"):
            return replace(scenario, eval=replace(ev, **{leaf: value}))
        raise ConfigError(f"unknown eval field {leaf!r}")
    raise ConfigError(f"unknown section in parameter path {path!r}")


def sweep_label(path: Optional[str], value) -> str:
    return "" if path is None else f"{path}={value:g}"
