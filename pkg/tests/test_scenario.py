import json

import pytest
import tomli

from beable_lab.scenario import ScenarioError, apply_overrides, parse_scenario, scenario_from_dict


def minimal(**emergent):
    e = {"rho": "default", "e_obs": "default", "e_planck": "default"}
    e.update(emergent)
    return {
        "name": "mini",
        "field": {"name": "uniform"},
        "emergent": e,
        "tolerances": {k: "default" for k in ("born_tol", "subspace_threshold", "kernel_l1", "ensemble_l1")},
    }


def test_defaults_resolved():
    sc = scenario_from_dict(minimal())
    assert (sc.n_q, sc.n_p, sc.p_max) == (64, 64, 8.0)
    assert sc.rho == 1.0 and sc.e_planck == 1.0 and sc.e_obs == pytest.approx(0.01)
    assert sc.born_tol == 1e-6 and sc.kernel_order == "linear" and sc.seed == 0


@pytest.mark.parametrize("path", ["rotor.toml", "shifted_sine.toml", "double_well.toml"])
def test_shipped_scenarios_parse(scenarios_dir, path):
    sc = parse_scenario(scenarios_dir / path)
    assert sc.name == path.removesuffix(".toml")
    sc.make_field()


def test_rotor_values(scenarios_dir):
    sc = parse_scenario(scenarios_dir / "rotor.toml")
    assert sc.rho == 2.0 and sc.n_q == 64 and sc.kernel_order == "nearest"


def test_e_obs_above_planck_rejected():
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(minimal(e_obs=2.0, e_planck=1.0))
    assert err.value.key == "emergent.e_obs"
    assert "2.0" in str(err.value) and "1.0" in str(err.value)


def test_unknown_key_named():
    raw = minimal()
    raw["emergent"]["rho_typo"] = 1.0
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(raw)
    assert err.value.key == "emergent.rho_typo"
    with pytest.raises(ScenarioError, match="unknown key"):
        scenario_from_dict({**minimal(), "extra": 1})


def test_missing_explicit_key():
    raw = minimal()
    del raw["tolerances"]["born_tol"]
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(raw)
    assert err.value.key == "tolerances.born_tol"


def test_missing_required_name():
    raw = minimal()
    del raw["name"]
    with pytest.raises(ScenarioError, match="name"):
        scenario_from_dict(raw)


def test_type_mismatch():
    raw = minimal()
    raw["lattice"] = {"n_q": "sixty-four"}
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(raw)
    assert err.value.key == "lattice.n_q"


@pytest.mark.parametrize("section,key,value", [
    ("lattice", "n_q", 63), ("lattice", "n_q", 4), ("field", "name", "nonexistent"),
    ("kernel", "order", "cubic"), ("ensemble", "n_samples", 10), ("initial", "chi", "nope"),
    ("lattice", "p_max", 1.5),
])
def test_invalid_values(section, key, value):
    raw = minimal()
    raw.setdefault(section, {})[key] = value
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(raw)
    assert err.value.key.startswith(section)


def test_rho_forms():
    assert scenario_from_dict(minimal(rho="eigenvalue:2")).rho == "eigenvalue:2"
    with pytest.raises(ScenarioError):
        scenario_from_dict(minimal(rho="two"))
    with pytest.raises(ScenarioError):
        scenario_from_dict(minimal(rho=-1.0))


def test_json_equivalent_to_toml(tmp_path, scenarios_dir):
    raw = tomli.loads((scenarios_dir / "rotor.toml").read_text())
    (tmp_path / "rotor.json").write_text(json.dumps(raw))
    a = parse_scenario(scenarios_dir / "rotor.toml")
    b = parse_scenario(tmp_path / "rotor.json")
    assert a == b and a.digest() == b.digest()


def test_unsupported_or_missing_file(tmp_path):
    (tmp_path / "x.yaml").write_text("name: x")
    with pytest.raises(ScenarioError, match="unsupported"):
        parse_scenario(tmp_path / "x.yaml")
    with pytest.raises(ScenarioError, match="no such"):
        parse_scenario(tmp_path / "absent.toml")
    (tmp_path / "bad.toml").write_text("name = ")
    with pytest.raises(ScenarioError, match="cannot parse"):
        parse_scenario(tmp_path / "bad.toml")


def test_overrides():
    sc = scenario_from_dict(minimal(), ["lattice.n_q=128", "kernel.order=nearest", "emergent.rho=3.5"])
    assert sc.n_q == 128 and sc.kernel_order == "nearest" and sc.rho == 3.5
    raw = minimal()
    assert apply_overrides(raw, ["seed=7"])["seed"] == 7 and "seed" not in raw
    with pytest.raises(ScenarioError):
        scenario_from_dict(minimal(), ["lattice.bogus=1"])
    with pytest.raises(ScenarioError):
        scenario_from_dict(minimal(), ["no_equals_sign"])


def test_digest_stable_and_sensitive():
    a = scenario_from_dict(minimal())
    reordered = dict(reversed(list(minimal().items())))
    assert scenario_from_dict(reordered).digest() == a.digest()
    assert scenario_from_dict(minimal(rho=1.0)).digest() == a.digest()  # "default" resolves
    assert scenario_from_dict(minimal(rho=2.0)).digest() != a.digest()
