"""Scenario files: strict TOML/JSON experiment descriptions.

A scenario is a table of sections.  Unknown sections or keys are rejected.
Keys marked ``explicit`` below carry physics (the invariant ``rho``, the
energy scales, tolerances) and must be present in the file, either with a
value or with the literal string ``"default"``; everything else falls back
to its documented default when omitted.

    name = "rotor"                       # required
    seed = 12345                         # default 0

    [field]        name (required), params (table, default {})
    [lattice]      n_q = 64, n_p = 64, p_max = 8.0
    [emergent]     rho (explicit, default 1.0; a number or "eigenvalue:<k>"
                   for the k-th smallest positive eigenvalue of H),
                   e_obs (explicit, default e_planck / 100),
                   e_planck (explicit, default 1.0)
    [initial]      phi = "fourier_pair", phi_params = {k = 1}, chi = "unit_box"
    [time]         t_final = 1.0, n_outputs = 11
    [tolerances]   born_tol (explicit, 1e-6), subspace_threshold (explicit, 1e-8),
                   kernel_l1 (explicit, 2e-2), ensemble_l1 (explicit, 5e-2)
    [kernel]       delta_t = 0.05, n_steps = 10, order = "linear"
    [ensemble]     n_samples = 100000, t_final = 0.5
    [options]      config_ordering = "weyl"
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .beable import CATALOG, make_field
from .kernel import Interpolation
from .kvn import CHI_EXTENT, CHI_PROFILES, PHI_PROFILES
from .operators import Ordering

DEFAULT = "default"
P_MARGIN = 2.0
_REQUIRED = object()


class ScenarioError(ValueError):
    """Invalid scenario; ``key`` is the dotted name of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# section -> key -> (type, default, explicit)
SCHEMA: dict[str, dict[str, tuple]] = {
    "": {
        "name": (str, _REQUIRED, False),
        "seed": (int, 0, False),
    },
    "field": {
        "name": (str, _REQUIRED, False),
        "params": (dict, {}, False),
    },
    "lattice": {
        "n_q": (int, 64, False),
        "n_p": (int, 64, False),
        "p_max": (float, 8.0, False),
    },
    "emergent": {
        "rho": ((float, str), 1.0, True),
        "e_obs": (float, None, True),
        "e_planck": (float, 1.0, True),
    },
    "initial": {
        "phi": (str, "fourier_pair", False),
        "phi_params": (dict, {"k": 1}, False),
        "chi": (str, "unit_box", False),
    },
    "time": {
        "t_final": (float, 1.0, False),
        "n_outputs": (int, 11, False),
    },
    "tolerances": {
        "born_tol": (float, 1e-6, True),
        "subspace_threshold": (float, 1e-8, True),
        "kernel_l1": (float, 2e-2, True),
        "ensemble_l1": (float, 5e-2, True),
    },
    "kernel": {
        "delta_t": (float, 0.05, False),
        "n_steps": (int, 10, False),
        "order": (str, "linear", False),
    },
    "ensemble": {
        "n_samples": (int, 100_000, False),
        "t_final": (float, 0.5, False),
    },
    "options": {
        "config_ordering": (str, "weyl", False),
    },
}


@dataclass
class Scenario:
    name: str
    field_name: str
    field_params: dict
    n_q: int
    n_p: int
    p_max: float
    rho: float | str
    e_obs: float
    e_planck: float
    phi_profile: str
    phi_params: dict
    chi_profile: str
    t_final: float
    n_outputs: int
    born_tol: float
    subspace_threshold: float
    kernel_l1: float
    ensemble_l1: float
    kernel_delta_t: float
    kernel_steps: int
    kernel_order: str
    ensemble_samples: int
    ensemble_t_final: float
    config_ordering: str
    seed: int
    source: dict = field(default_factory=dict, repr=False)

    def make_field(self):
        return make_field(self.field_name, **self.field_params)

    def digest(self) -> str:
        """SHA-256 of the resolved scenario, stable across key order."""
        blob = json.dumps(self.source, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _dotted(section: str, key: str) -> str:
    return f"{section}.{key}" if section else key


def _coerce(value, kind, key: str):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    for k in kinds:
        if k is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if k is int and isinstance(value, int) and not isinstance(value, bool):
            return value
        if k in (str, dict) and isinstance(value, k):
            return value
    names = " or ".join(k.__name__ for k in kinds)
    raise ScenarioError(key, f"expected {names}, got {type(value).__name__} {value!r}")


def _resolve(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ScenarioError("<root>", "scenario must be a table")
    sections = {s for s in SCHEMA if s}
    out: dict[str, dict] = {s: {} for s in SCHEMA}
    for key, value in raw.items():
        if key in sections:
            if not isinstance(value, dict):
                raise ScenarioError(key, "expected a table")
            for sub in value:
                if sub not in SCHEMA[key]:
                    raise ScenarioError(_dotted(key, sub), "unknown key")
        elif key not in SCHEMA[""]:
            raise ScenarioError(key, "unknown key")
    for section, keys in SCHEMA.items():
        given = raw if not section else raw.get(section, {})
        for key, (kind, default, explicit) in keys.items():
            dotted = _dotted(section, key)
            if key not in given:
                if default is _REQUIRED:
                    raise ScenarioError(dotted, "missing required key")
                if explicit:
                    raise ScenarioError(dotted, 'missing key; give a value or "default"')
                out[section][key] = copy.deepcopy(default)
                continue
            value = given[key]
            if explicit and value == DEFAULT:
                out[section][key] = copy.deepcopy(default)
            else:
                out[section][key] = _coerce(value, kind, dotted)
    return out


def _check(v: dict) -> None:
    e = v["emergent"]
    if e["e_obs"] is None:
        e["e_obs"] = e["e_planck"] / 100.0

    if v["field"]["name"] not in CATALOG:
        raise ScenarioError("field.name", f"unknown field {v['field']['name']!r}; known: {sorted(CATALOG)}")
    try:
        make_field(v["field"]["name"], **v["field"]["params"])
    except (TypeError, ValueError) as exc:
        raise ScenarioError("field.params", str(exc)) from None

    lat = v["lattice"]
    for key in ("n_q", "n_p"):
        if lat[key] < 8 or lat[key] % 2:
            raise ScenarioError(f"lattice.{key}", f"must be an even integer >= 8, got {lat[key]}")
    if not lat["p_max"] > 0:
        raise ScenarioError("lattice.p_max", "must be positive")

    if not e["e_obs"] > 0:
        raise ScenarioError("emergent.e_obs", f"must be positive, got {e['e_obs']}")
    if e["e_obs"] > e["e_planck"]:
        raise ScenarioError("emergent.e_obs",
                            f"e_obs = {e['e_obs']} exceeds e_planck = {e['e_planck']}")
    rho = e["rho"]
    if isinstance(rho, str):
        head, _, idx = rho.partition(":")
        if head != "eigenvalue" or not idx.isdigit():
            raise ScenarioError("emergent.rho", f'expected a number or "eigenvalue:<k>", got {rho!r}')
    elif not rho > 0:
        raise ScenarioError("emergent.rho", f"must be positive, got {rho}")

    ini = v["initial"]
    if ini["phi"] not in PHI_PROFILES:
        raise ScenarioError("initial.phi", f"unknown profile {ini['phi']!r}; known: {sorted(PHI_PROFILES)}")
    if ini["chi"] not in CHI_PROFILES:
        raise ScenarioError("initial.chi", f"unknown profile {ini['chi']!r}; known: {sorted(CHI_PROFILES)}")
    need = CHI_EXTENT[ini["chi"]] + P_MARGIN
    if lat["p_max"] < need:
        raise ScenarioError("lattice.p_max",
                            f"profile {ini['chi']!r} needs p_max >= {need:.3g} (safety margin {P_MARGIN})")

    t = v["time"]
    if not t["t_final"] > 0:
        raise ScenarioError("time.t_final", "must be positive")
    if t["n_outputs"] < 2:
        raise ScenarioError("time.n_outputs", "must be at least 2")
    for key in v["tolerances"]:
        if not v["tolerances"][key] > 0:
            raise ScenarioError(f"tolerances.{key}", "must be positive")
    k = v["kernel"]
    if k["delta_t"] < 0:
        raise ScenarioError("kernel.delta_t", "must be non-negative")
    if k["n_steps"] < 1:
        raise ScenarioError("kernel.n_steps", "must be positive")
    try:
        Interpolation(k["order"])
    except ValueError:
        raise ScenarioError("kernel.order", f"expected 'nearest' or 'linear', got {k['order']!r}") from None
    if v["ensemble"]["n_samples"] < 1000:
        raise ScenarioError("ensemble.n_samples", "must be at least 1000")
    if not v["ensemble"]["t_final"] >= 0:
        raise ScenarioError("ensemble.t_final", "must be non-negative")
    try:
        Ordering(v["options"]["config_ordering"])
    except ValueError:
        raise ScenarioError("options.config_ordering", "expected 'weyl' or 'pleft'") from None
    for section, key in (("emergent", "e_obs"), ("emergent", "e_planck"), ("lattice", "p_max")):
        if not math.isfinite(v[section][key]):
            raise ScenarioError(f"{section}.{key}", "must be finite")


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are read as TOML literals."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, text = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ScenarioError(item, "override must look like key=value")
        parts = key.split(".")
        if len(parts) > 2:
            raise ScenarioError(key, "unknown key")
        target = raw
        if len(parts) == 2:
            target = raw.setdefault(parts[0], {})
            if not isinstance(target, dict):
                raise ScenarioError(parts[0], "expected a table")
        target[parts[-1]] = _parse_value(text.strip())
    return raw


def scenario_from_dict(raw: dict, overrides=None) -> Scenario:
    raw = apply_overrides(raw, overrides)
    v = _resolve(raw)
    _check(v)
    return Scenario(
        name=v[""]["name"],
        field_name=v["field"]["name"],
        field_params=dict(v["field"]["params"]),
        n_q=v["lattice"]["n_q"],
        n_p=v["lattice"]["n_p"],
        p_max=v["lattice"]["p_max"],
        rho=v["emergent"]["rho"],
        e_obs=v["emergent"]["e_obs"],
        e_planck=v["emergent"]["e_planck"],
        phi_profile=v["initial"]["phi"],
        phi_params=dict(v["initial"]["phi_params"]),
        chi_profile=v["initial"]["chi"],
        t_final=v["time"]["t_final"],
        n_outputs=v["time"]["n_outputs"],
        born_tol=v["tolerances"]["born_tol"],
        subspace_threshold=v["tolerances"]["subspace_threshold"],
        kernel_l1=v["tolerances"]["kernel_l1"],
        ensemble_l1=v["tolerances"]["ensemble_l1"],
        kernel_delta_t=v["kernel"]["delta_t"],
        kernel_steps=v["kernel"]["n_steps"],
        kernel_order=v["kernel"]["order"],
        ensemble_samples=v["ensemble"]["n_samples"],
        ensemble_t_final=v["ensemble"]["t_final"],
        config_ordering=v["options"]["config_ordering"],
        seed=v[""]["seed"],
        source={s or "_root": d for s, d in v.items()},
    )


def parse_scenario(path, overrides=None) -> Scenario:
    """Read a ``.toml`` or ``.json`` scenario and validate it."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError("<file>", f"no such scenario file: {path}")
    text = path.read_bytes().decode("utf-8")
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            raw = tomli.loads(text)
        elif suffix == ".json":
            raw = json.loads(text)
        else:
            raise ScenarioError("<file>", f"unsupported scenario format {suffix!r}")
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ScenarioError("<file>", f"cannot parse {path.name}: {exc}") from None
    return scenario_from_dict(raw, overrides)
