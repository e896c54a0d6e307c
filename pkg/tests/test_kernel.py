import numpy as np
import pytest

from beable_lab.beable import double_well_drift, shifted_sine, uniform
from beable_lab.kernel import (
    Interpolation,
    build_transport_kernel,
    duality_error,
    kernel_vs_spectral,
    propagate_both,
    standard_density,
    symplectic_action,
)
from beable_lab.kvn import ConfigWavefunction, fourier_pair
from beable_lab.lattice import make_lattice, quadrature
from beable_lab.linalg import read_matrix

from oracles import sine_flow, sine_marginal

COS_DENSITY = lambda x: (1 + np.cos(x)) / (2 * np.pi)


def test_resonant_nearest_is_shift():
    lat = make_lattice(32)
    k = build_transport_kernel(uniform(), lat, lat.spacing, Interpolation.NEAREST).dense()
    assert np.array_equal(k, np.roll(np.eye(32), 1, axis=0))


@pytest.mark.parametrize("order", list(Interpolation))
def test_zero_step_is_identity(order):
    k = build_transport_kernel(shifted_sine(), make_lattice(16), 0.0, order)
    assert np.array_equal(k.dense(), np.eye(16))


def test_resonant_linear_is_shift():
    lat = make_lattice(32)
    k = build_transport_kernel(uniform(), lat, 2 * lat.spacing, Interpolation.LINEAR).dense()
    assert np.max(np.abs(k - np.roll(np.eye(32), 2, axis=0))) <= 1e-12


def test_negative_step_rejected():
    with pytest.raises(ValueError):
        build_transport_kernel(uniform(), make_lattice(8), -0.1)


@pytest.mark.parametrize("field", [shifted_sine(), double_well_drift()], ids=lambda f: f.name)
def test_linear_mass_preserving(field, rng):
    lat = make_lattice(64)
    k = build_transport_kernel(field, lat, 0.13)
    assert np.max(np.abs(k.column_sums() - 1)) <= 1e-12
    rho = rng.random(64)
    assert abs(quadrature(k.apply(rho), lat) - quadrature(rho, lat)) <= 1e-8


def test_linear_matches_exact_transport():
    errs = []
    for n in (64, 128, 256):
        lat = make_lattice(n)
        k = build_transport_kernel(shifted_sine(), lat, 0.1)
        exact = sine_marginal(1.5, 1.0, COS_DENSITY, lat.points, 0.1)
        errs.append(np.max(np.abs(k.apply(COS_DENSITY(lat.points)) - exact)))
    assert errs[1] <= 5e-3
    assert errs[0] / errs[1] >= 2 and errs[1] / errs[2] >= 2


def test_linear_matches_phase_space_pipeline():
    errs = [kernel_vs_spectral(shifted_sine(), make_lattice(n), 0.1, 1).cumulative_linf for n in (64, 128, 256)]
    assert errs[1] <= 5e-3
    assert errs[0] / errs[1] >= 2 and errs[1] / errs[2] >= 2


def test_support_near_flow_image():
    lat = make_lattice(64)
    f = shifted_sine()
    k = build_transport_kernel(f, lat, 0.2).matrix.tocsc()
    image = sine_flow(1.5, 1.0, lat.points, 0.2)
    for i in range(64):
        rows = k.indices[k.indptr[i]:k.indptr[i + 1]]
        dist = np.abs((lat.points[rows] - image[i] + np.pi) % (2 * np.pi) - np.pi)
        # cell-overlap stencil: preimage cells touching cells i-1..i+1
        assert np.all(dist <= 3 * lat.spacing * np.max(f.velocity(lat.points)) / np.min(f.velocity(lat.points)))


def test_semigroup():
    lat = make_lattice(128)
    f = shifted_sine()
    a, b = build_transport_kernel(f, lat, 0.05), build_transport_kernel(f, lat, 0.07)
    ab = build_transport_kernel(f, lat, 0.12)
    rho = COS_DENSITY(lat.points)
    assert np.max(np.abs(b.apply(a.apply(rho)) - ab.apply(rho))) <= 1e-4
    lat = make_lattice(32)
    n1 = build_transport_kernel(uniform(), lat, lat.spacing, "nearest").dense()
    n3 = build_transport_kernel(uniform(), lat, 3 * lat.spacing, "nearest").dense()
    assert np.array_equal(n1 @ n1 @ n1, n3)


def test_propagate_both_permutation_exact():
    lat = make_lattice(32)
    k = build_transport_kernel(uniform(), lat, lat.spacing, "nearest")
    psi = ConfigWavefunction(fourier_pair(lat), lat)
    out_psi, out_rho = propagate_both(k, psi, psi.density())
    assert np.array_equal(np.abs(out_psi.amplitudes) ** 2, out_rho)
    assert duality_error(k, psi) == 0.0


def test_propagate_both_point_mass():
    lat = make_lattice(32)
    k = build_transport_kernel(uniform(), lat, 2 * lat.spacing, "nearest")
    amp = np.zeros(32, complex)
    amp[3] = 1.0
    out_psi, out_rho = propagate_both(k, amp, np.abs(amp) ** 2)
    assert np.argmax(np.abs(out_psi.amplitudes)) == 5 and np.argmax(out_rho) == 5


def test_propagate_both_shape_check():
    k = build_transport_kernel(uniform(), make_lattice(8), 0.1)
    with pytest.raises(ValueError):
        propagate_both(k, np.ones(8), np.ones(7))


def test_kernel_export(tmp_path):
    k = build_transport_kernel(shifted_sine(), make_lattice(16), 0.1)
    k.export(tmp_path / "k.bin")
    raw = (tmp_path / "k.bin").read_bytes()
    assert int.from_bytes(raw[12:16], "little") == 1
    assert np.array_equal(read_matrix(tmp_path / "k.bin"), k.dense())


def test_kernel_vs_spectral_rotor_resonant():
    lat = make_lattice(64)
    rep = kernel_vs_spectral(uniform(), lat, lat.spacing, 10, "nearest")
    assert rep.cumulative_l1 <= 1e-10
    rep = kernel_vs_spectral(uniform(), lat, lat.spacing, 10, "linear")
    assert rep.cumulative_l1 <= 1e-10


def test_kernel_vs_spectral_shifted_sine():
    rep = kernel_vs_spectral(shifted_sine(), make_lattice(128), 0.05, 10)
    assert rep.cumulative_l1 <= 2e-2
    assert np.max(np.abs(rep.mass_drift)) <= 1e-8 * 10
    d = rep.to_dict()
    assert len(d["l1"]) == 10 and d["cumulative_l1"] == rep.cumulative_l1


def test_standard_density_normalised():
    lat = make_lattice(32)
    assert quadrature(standard_density(lat), lat) == pytest.approx(1.0, abs=1e-14)


# -- symplectic action ------------------------------------------------------------

def test_action_static_point():
    t = np.linspace(0, 1, 11)
    assert symplectic_action(t, np.zeros(11), np.full(11, 0.4), uniform()) == 0.0


def classical_path(n=401, t_final=1.0, q0=0.3, p0=0.8):
    t = np.linspace(0, t_final, n)
    q = sine_flow(1.5, 1.0, q0, t)
    f = 1.5 + np.sin(q)
    p = p0 * (1.5 + np.sin(q0)) / f  # H = p f is conserved
    return t, p, q


def test_action_stationary_on_classical_path():
    t, p, q = classical_path()
    f = shifted_sine()
    bump = np.sin(np.pi * t / t[-1]) ** 2
    for dp, dq in ((bump, 0 * bump), (0 * bump, bump), (bump, -0.5 * bump)):
        eta = 1e-4
        grad = (symplectic_action(t, p + eta * dp, q + eta * dq, f)
                - symplectic_action(t, p - eta * dp, q - eta * dq, f)) / (2 * eta)
        norm = np.sqrt(np.sum(dp**2 + dq**2) * (t[1] - t[0]))
        assert abs(grad) <= 1e-4 * norm


def test_action_not_stationary_off_shell():
    t, p, q = classical_path()
    q = q + 0.1 * np.sin(np.pi * t)
    bump = np.sin(np.pi * t) ** 2
    eta = 1e-4
    grad = (symplectic_action(t, p + eta * bump, q, shifted_sine())
            - symplectic_action(t, p - eta * bump, q, shifted_sine())) / (2 * eta)
    assert abs(grad) > 1e-3


def test_action_loop_area():
    t = np.linspace(0, 2 * np.pi, 2001)
    r = 0.7
    q, p = 1.0 + r * np.cos(t), r * np.sin(t)  # counter-clockwise in (q, p)
    area = np.pi * r**2
    assert symplectic_action(t, p, q) == pytest.approx(-area, rel=1e-5)


def test_action_multidimensional_path():
    t, p, q = classical_path(n=101)
    two = symplectic_action(t, np.stack([p, p], 1), np.stack([q, q], 1), shifted_sine())
    assert two == pytest.approx(2 * symplectic_action(t, p, q, shifted_sine()), rel=1e-12)


def test_action_rejects_bad_paths():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError, match="ragged"):
        symplectic_action(t, np.zeros(5), np.zeros(4))
    with pytest.raises(ValueError, match="three"):
        symplectic_action(t[:2], np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError, match="uniform"):
        symplectic_action(np.array([0, 0.1, 0.3]), np.zeros(3), np.zeros(3))
