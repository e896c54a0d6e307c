import numpy as np
import pytest

from beable_lab.beable import double_well_drift, shifted_sine, uniform
from beable_lab.emergent import (
    GaugeGenerator,
    NonPhysicalStateError,
    NotFlowInvariantError,
    build_constraint,
    check_flow_invariant,
    constraint_prefactor,
    emergent_consistency,
    emergent_evolve,
    first_class_check,
    gauge_fixing_bracket,
    gauge_orbit,
    physical_energies,
    physical_subspace,
    split_hamiltonian,
    subspace_report,
)
from beable_lab.lattice import make_lattice, make_phase_lattice
from beable_lab.operators import Ordering, build_hamiltonian

from frozen import PREFACTOR_HALF

CATALOG = [uniform(), shifted_sine(), double_well_drift()]


def rotor(n=8):
    lat = make_lattice(n)
    return lat, build_hamiltonian(uniform(), lat, Ordering.WEYL)


def test_constant_is_invariant():
    for field in CATALOG:
        chk = check_flow_invariant(2.0, field, make_lattice(32))
        assert chk.residual <= 1e-13 and chk.commutator_norm <= 1e-13


def test_cosine_rho_not_invariant():
    lat = make_lattice(32)
    chk = check_flow_invariant(1 + 0.5 * np.cos(lat.points), uniform(), lat)
    # max |f rho'| / max rho = 0.5 / 1.5
    assert chk.residual == pytest.approx(1 / 3, rel=1e-10)
    assert not chk.passed()


def test_inverse_velocity_not_invariant():
    lat = make_lattice(32)
    f = shifted_sine()
    assert not check_flow_invariant(1.0 / f.velocity(lat.points), f, lat).passed()


def test_flow_invariant_rejects_nonpositive():
    lat = make_lattice(8)
    with pytest.raises(ValueError):
        check_flow_invariant(np.zeros(8), uniform(), lat)


def test_rotor_split_closed_form():
    lat, h = rotor()
    pair = split_hamiltonian(h, 2.0)
    hm = h.matrix
    np.testing.assert_allclose(pair.h_plus.matrix, (2 * np.eye(8) + hm) @ (2 * np.eye(8) + hm) / 8, atol=1e-12)
    assert np.max(np.abs(pair.h_plus.matrix - pair.h_minus.matrix - hm)) <= 1e-12
    w = np.sort(np.linalg.eigvalsh(pair.h_minus.matrix))
    k = np.arange(-4, 4)
    np.testing.assert_allclose(w, np.sort((2 - k) ** 2 / 8), atol=1e-12)
    assert np.sum(np.abs(w) < 1e-12) == 1


@pytest.mark.parametrize("field", CATALOG, ids=lambda f: f.name)
@pytest.mark.parametrize("rho", [1.0, 2.0, 3.0])
def test_split_suite(field, rho):
    h = build_hamiltonian(field, make_lattice(32), Ordering.WEYL)
    pair = split_hamiltonian(h, rho)
    assert pair.identity_residual() <= 1e-10
    assert min(pair.min_eigenvalues()) >= -1e-8
    assert max(pair.commutator_residuals().values()) <= 1e-8


def test_split_rejects():
    lat, h = rotor(32)
    with pytest.raises(NotFlowInvariantError, match="rho is not a flow invariant"):
        split_hamiltonian(h, 1 + 0.5 * np.cos(lat.points))
    with pytest.raises(ValueError, match="hermitian"):
        split_hamiltonian(build_hamiltonian(shifted_sine(), lat, Ordering.PLEFT), 1.0)
    with pytest.raises(ValueError, match="at least"):
        split_hamiltonian(h, 1e-10)


def test_prefactor_values():
    assert constraint_prefactor(1.0, 1.0) == 0.0
    assert constraint_prefactor(0.5, 1.0) == pytest.approx(PREFACTOR_HALF, abs=1e-15)
    assert abs(constraint_prefactor(0.01, 1.0) - 1.0) <= 1e-15


def test_constraint_limits():
    _, h = rotor()
    pair = split_hamiltonian(h, 2.0)
    assert not np.any(build_constraint(pair, 1.0, 1.0).phi.matrix)
    c = build_constraint(pair, 0.01, 1.0)
    assert np.max(np.abs(c.phi.matrix - pair.h_minus.matrix)) <= 1e-15
    for bad in (0.0, -1.0, 2.0):
        with pytest.raises(ValueError):
            build_constraint(pair, bad, 1.0)


def test_physical_subspace_rotor():
    lat, h = rotor()
    pair = split_hamiltonian(h, 2.0)
    sub = physical_subspace(build_constraint(pair, 0.01, 1.0))
    assert sub.dimension == 1
    mode = np.exp(2j * lat.points) / np.sqrt(8)
    assert abs(abs(np.vdot(mode, sub.basis[:, 0])) - 1) <= 1e-10
    assert physical_subspace(build_constraint(pair, 1.0, 1.0)).dimension == 8


def test_empty_subspace_between_modes():
    _, h = rotor()
    pair = split_hamiltonian(h, 2.5)
    sub = physical_subspace(build_constraint(pair, 0.01, 1.0))
    assert sub.empty and sub.dimension == 0
    assert physical_energies(pair, sub).size == 0
    assert min(np.linalg.eigvalsh(pair.h_minus.matrix)) == pytest.approx(0.025, abs=1e-12)


def test_dimension_non_increasing_as_scale_drops():
    h = build_hamiltonian(shifted_sine(), make_lattice(32), Ordering.WEYL)
    w = np.linalg.eigvalsh(h.matrix)
    pair = split_hamiltonian(h, float(w[w > 0.5][0]))
    dims = [physical_subspace(build_constraint(pair, e, 1.0)).dimension for e in np.geomspace(1.0, 1e-3, 12)]
    assert dims[0] == 32 and dims[-1] == 1
    assert all(a >= b for a, b in zip(dims, dims[1:]))


def test_physical_energies_equal_rho():
    _, h = rotor(16)
    for rho in (1.0, 2.0, 3.0):
        pair = split_hamiltonian(h, rho)
        e = physical_energies(pair, physical_subspace(build_constraint(pair, 0.01, 1.0)))
        np.testing.assert_allclose(e, [rho], atol=1e-8)


def test_subspace_report_keys():
    _, h = rotor()
    pair = split_hamiltonian(h, 2.0)
    c = build_constraint(pair, 0.01, 1.0)
    rep = subspace_report(c, physical_subspace(c))
    assert rep["dimension"] == 1 and rep["physical_energies"] == pytest.approx([2.0])
    assert len(rep["eigenvalues_of_H_minus"]) == 8


def test_emergent_evolution():
    lat, h = rotor()
    pair = split_hamiltonian(h, 2.0)
    state = np.exp(2j * lat.points) / np.sqrt(8)
    out = emergent_evolve(state, pair, np.pi)
    assert np.max(np.abs(out - state)) <= 1e-10
    assert np.max(np.abs(emergent_evolve(state, pair, 0.0) - state)) <= 1e-14
    for t in (0.3, 1.7):
        psi = emergent_evolve(state, pair, t)
        assert abs(np.vdot(psi, pair.h_plus.matrix @ psi).real - 2.0) <= 1e-10
    assert max(emergent_consistency(state, pair)) <= 1e-12
    with pytest.raises(NonPhysicalStateError):
        emergent_evolve(np.exp(1j * lat.points), pair, 1.0)


def test_gauge_orbits():
    lat, h = rotor(16)
    pair = split_hamiltonian(h, 2.0)
    on_surface = (2.0, 1.1)  # f = 1, so H = p = rho
    step = gauge_orbit(on_surface, GaugeGenerator.PHI_E, pair, 0.1)
    assert abs(step.p - 2.0) <= 1e-12 and abs(step.q - 1.1) <= 1e-12
    eps = 0.01
    step = gauge_orbit(on_surface, GaugeGenerator.SQRT_PHI, pair, eps)
    assert abs((step.q - 1.1) - (-eps / 2)) <= 1e-8
    assert abs(step.p - 2.0) <= 1e-12
    still = gauge_orbit(on_surface, GaugeGenerator.SQRT_PHI, pair, 0.0)
    assert (still.p, still.q) == on_surface
    sine_pair = split_hamiltonian(build_hamiltonian(shifted_sine(), lat), 1.0)
    # dp = eps p f'(q) / 2 pushes p past the box edge
    assert not gauge_orbit((7.9, 0.0), GaugeGenerator.SQRT_PHI, sine_pair, 1.0, p_max=8.0).in_bounds


def test_gauge_sqrt_generator_nonlinear():
    f = shifted_sine()
    lat = make_lattice(16)
    pair = split_hamiltonian(build_hamiltonian(f, lat), 1.0)
    q0, eps = 0.7, 1e-3
    p0 = 1.0 / f.velocity(q0)
    step = gauge_orbit((p0, q0), "sqrt_phi", pair, eps)
    assert abs((step.q - q0) + eps * f.velocity(q0) / 2) <= 1e-8


def test_gauge_fixing_bracket():
    _, h = rotor(16)
    pair = split_hamiltonian(h, 2.0)
    # {(rho - H)/2, q} = 1/2 for f = 1: q fixes the gauge
    val = gauge_fixing_bracket((2.0, 0.3), lambda p, q: q, pair)
    assert abs(abs(val) - 0.5) <= 1e-8


def test_first_class():
    for field, tol_op in ((uniform(), 1e-10), (shifted_sine(), 1e-8)):
        lat = make_lattice(32)
        pair = split_hamiltonian(build_hamiltonian(field, lat), 2.0)
        rep = first_class_check(pair, field, make_phase_lattice(32, 64, 8.0))
        assert rep.operator_residual <= tol_op
        assert rep.classical_residual <= (1e-10 if field.name == "uniform" else 1e-6)
        assert rep.first_class


def test_first_class_flags_bad_rho():
    lat = make_lattice(32)
    f = uniform()
    h = build_hamiltonian(f, lat)
    pair = split_hamiltonian(h, 1 + 0.5 * np.cos(lat.points), validate=False)
    rep = first_class_check(pair, f, make_phase_lattice(32, 64, 8.0))
    assert not rep.first_class
    assert rep.operator_residual > 1e-3
