"""Koopman-von Neumann mechanics on a phase lattice and the Born-rule check.

A phase-space wavefunction ``psi(p, q)`` evolves unitarily under the
Liouvillian ``L = -i dH/dp d/dq + i dH/dq d/dp`` of the 't Hooft Hamiltonian
``H = p f(q) + g(q)``.  Integrating out ``p`` gives the reduced density
``rho~(q) = int dp |psi|^2`` and the reduced amplitude ``psi~(q) = int dp psi``.
:func:`born_check` runs the phase-space pipeline next to a configuration-space
Schrodinger evolution and compares ``rho~`` with ``|psi~|^2``.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .beable import FlowField, make_field
from .lattice import Lattice, PhaseLattice, make_phase_lattice, quadrature, spectral_derivative
from .linalg import OperatorMatrix, chebyshev_expm_apply, unitary_propagator
from .operators import Ordering, build_hamiltonian, propagator

NORM_TOL = 1e-8
BOUNDARY_ROWS = 2
BOUNDARY_MASS_TOL = 1e-10
MIN_AXIS = 8


class BornPreconditionError(ValueError):
    pass


class BoundaryMassWarning(UserWarning):
    pass


# -- wavefunctions -------------------------------------------------------------

@dataclass(eq=False)
class PhaseWavefunction:
    amplitudes: np.ndarray
    phase: PhaseLattice

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.shape != self.phase.shape:
            a = a.reshape(self.phase.shape)
        self.amplitudes = a

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.phase.cell))

    def normalized(self) -> "PhaseWavefunction":
        return PhaseWavefunction(self.amplitudes / self.norm, self.phase)

    @classmethod
    def separable(cls, chi, phi, phase: PhaseLattice) -> "PhaseWavefunction":
        """``psi(p, q) = chi(p) phi(q)`` from samples on the two axes."""
        return cls(np.outer(np.asarray(chi, dtype=complex), np.asarray(phi, dtype=complex)), phase)

    def boundary_mass(self, rows: int = BOUNDARY_ROWS) -> float:
        """Probability in the ``rows`` outermost momentum rows on each side."""
        d = np.abs(self.amplitudes) ** 2
        return float((d[:rows].sum() + d[-rows:].sum()) * self.phase.cell)


@dataclass(eq=False)
class ConfigWavefunction:
    amplitudes: np.ndarray
    lattice: Lattice

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex)
        if a.shape != (self.lattice.n_points,):
            raise ValueError("amplitudes do not match the lattice")
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        self.amplitudes = a

    @property
    def norm(self) -> float:
        return float(np.sqrt(quadrature(np.abs(self.amplitudes) ** 2, self.lattice)))

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


# -- initial-data profiles -----------------------------------------------------

def unit_box(p: Lattice, low: float = 0.0, width: float = 1.0) -> np.ndarray:
    """Height-1 box on ``[low, low + width)``; ``int chi = int chi^2 = 1`` when width 1 fits the grid."""
    x = p.points
    return ((x >= low - 1e-12) & (x < low + width - 1e-12)).astype(float)


def two_bump(p: Lattice) -> np.ndarray:
    """Unit-norm profile with ``int chi dp = 0.5``: height ``a`` on ``[0, 1)``, ``-b`` on ``[2, 3)``.

    ``a - b = 1/2`` and ``a^2 + b^2 = 1`` give ``a = (1 + sqrt 7) / 4``.
    """
    a = 0.25 * (1.0 + np.sqrt(7.0))
    return a * unit_box(p, 0.0, 1.0) - (a - 0.5) * unit_box(p, 2.0, 1.0)


def matched_gaussian(p: Lattice, center: float = 0.5) -> np.ndarray:
    """Smooth profile with ``int chi dp = int chi^2 dp = 1`` under the lattice quadrature.

    In the continuum this is ``sqrt(2) exp(-(p - c)^2 / (2 s^2))`` with
    ``s = 1 / (2 sqrt(pi))``; on a coarse p axis the width is re-solved so
    that both discrete integrals are exactly one.
    """
    x = p.points - center

    def sums(sigma):
        g = np.exp(-0.5 * (x / sigma) ** 2)
        return quadrature(g, p), quadrature(g * g, p)

    def mismatch(sigma):
        s1, s2 = sums(sigma)
        return s2 / s1**2 - 1.0

    sigma0 = 0.5 / np.sqrt(np.pi)
    sigma = brentq(mismatch, 0.5 * sigma0, 2.0 * sigma0, xtol=1e-15) if abs(mismatch(sigma0)) > 1e-14 else sigma0
    return np.exp(-0.5 * (x / sigma) ** 2) / sums(sigma)[0]


def fourier_pair(q: Lattice, k: int = 1) -> np.ndarray:
    """``phi ~ 1 + exp(i k q)`` normalised to ``int |phi|^2 dq = 1``."""
    phi = 1.0 + np.exp(1j * k * q.points)
    return phi / np.sqrt(quadrature(np.abs(phi) ** 2, q))


CHI_PROFILES = {"unit_box": unit_box, "two_bump": two_bump, "matched_gaussian": matched_gaussian}
# largest |p| each profile occupies at t = 0 (Gaussian: six widths)
CHI_EXTENT = {"unit_box": 1.0, "two_bump": 3.0, "matched_gaussian": 0.5 + 3.0 / np.sqrt(np.pi)}
PHI_PROFILES = {"fourier_pair": fourier_pair}


# -- Liouvillian ---------------------------------------------------------------

class Liouvillian:
    """Matrix-free Liouvillian of ``H = p f(q) + Re g(q)`` on a phase lattice.

    Both transport terms are symmetrised,
    ``-i/2 (f D_q + D_q f) + i/2 (G D_p + D_p G)`` with ``G = p f' + g'``,
    so the operator is exactly hermitian for the lattice inner product.  In
    the continuum the symmetrisation adds nothing because the Hamiltonian
    vector field is divergence free.
    """

    def __init__(self, field: FlowField, phase: PhaseLattice):
        if phase.q.n_points < MIN_AXIS or phase.p.n_points < MIN_AXIS:
            raise ValueError(f"phase lattice too small: need at least {MIN_AXIS} points per axis")
        field.validate(phase.q)
        self.field = field
        self.phase = phase
        q = phase.q.points
        p = phase.p.points
        self._f = field.velocity(q)[None, :]
        self._g = p[:, None] * field.velocity_derivative(q)[None, :] + field.classical_g_derivative(q)[None, :]
        self._ikq = (1j * phase.q.wavenumbers)[None, :]
        self._ikp = (1j * phase.p.wavenumbers)[:, None]
        self.bound = 1.0001 * (
            np.max(np.abs(self._f)) * np.max(np.abs(phase.q.wavenumbers))
            + np.max(np.abs(self._g)) * np.max(np.abs(phase.p.wavenumbers))
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.phase.size, self.phase.size)

    def _dq(self, a):
        return np.fft.ifft(self._ikq * np.fft.fft(a, axis=-1), axis=-1)

    def _dp(self, a):
        return np.fft.ifft(self._ikp * np.fft.fft(a, axis=-2), axis=-2)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi)
        flat = psi.ndim == 1
        a = psi.reshape(self.phase.shape) if flat else psi
        f, g = self._f, self._g
        out = -0.5j * (f * self._dq(a) + self._dq(f * a)) + 0.5j * (g * self._dp(a) + self._dp(g * a))
        return out.ravel() if flat else out

    __call__ = apply

    def apply_unsymmetrized(self, rho: np.ndarray) -> np.ndarray:
        """``-i`` times the Liouville right-hand side ``-H_p d_q rho + H_q d_p rho``."""
        return -1j * (-self._f * self._dq(rho) + self._g * self._dp(rho))

    def to_matrix(self) -> OperatorMatrix:
        """Dense matrix in p-major ordering; memory grows as ``(n_p n_q)^2``."""
        n = self.phase.size
        m = np.empty((n, n), dtype=complex)
        e = np.zeros(self.phase.shape, dtype=complex)
        for col in range(n):
            e.flat[col] = 1.0
            m[:, col] = self.apply(e).ravel()
            e.flat[col] = 0.0
        return OperatorMatrix(m, self.phase, label=f"L[{self.field.name}]", field=self.field)

    def hermiticity_residual(self, n_probes: int = 4, seed: int = 0) -> float:
        """``max |<x, L y> - <L x, y>| / (|x| |y| bound)`` over random probes."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_probes):
            x = rng.standard_normal(self.phase.shape) + 1j * rng.standard_normal(self.phase.shape)
            y = rng.standard_normal(self.phase.shape) + 1j * rng.standard_normal(self.phase.shape)
            lhs = np.vdot(x, self.apply(y))
            rhs = np.vdot(self.apply(x), y)
            worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y) * self.bound))
        return float(worst)


def build_liouvillian(field: FlowField, phase: PhaseLattice) -> Liouvillian:
    return Liouvillian(field, phase)


def _propagate(l, a: np.ndarray, t: float) -> np.ndarray:
    if isinstance(l, Liouvillian):
        return chebyshev_expm_apply(l.apply, a, t, l.bound)
    if isinstance(l, OperatorMatrix):
        if not l.hermitian:
            raise ValueError("Liouvillian matrix is not hermitian")
        return (unitary_propagator(l.matrix, t) @ a.ravel()).reshape(a.shape)
    raise TypeError("expected a Liouvillian or OperatorMatrix")


def evolve_phase(psi: PhaseWavefunction, l, t: float) -> PhaseWavefunction:
    """``psi(t) = exp(-i L t) psi``; checks normalisation before and after."""
    if isinstance(l, OperatorMatrix) and not l.hermitian:
        raise ValueError("Liouvillian matrix is not hermitian")
    n0 = psi.norm
    if abs(n0 - 1.0) > NORM_TOL:
        raise ValueError(f"phase wavefunction is not normalised (norm {n0:.12g})")
    out = PhaseWavefunction(_propagate(l, psi.amplitudes, t), psi.phase)
    if abs(out.norm - n0) > NORM_TOL:
        raise RuntimeError(f"norm drifted to {out.norm:.12g} during evolution")
    mass = out.boundary_mass()
    if mass >= BOUNDARY_MASS_TOL:
        warnings.warn(
            f"{mass:.3g} probability in the outer momentum rows; increase p_max",
            BoundaryMassWarning,
            stacklevel=2,
        )
    return out


@dataclass(frozen=True)
class DensityEvolution:
    density: np.ndarray
    fd_residual: float | None


def liouville_density_evolution(rho0, l: Liouvillian, t: float, method: str = "amplitude",
                                fd_step: float | None = 1e-3) -> DensityEvolution:
    """Evolve a phase-space density by the Liouville equation.

    ``method="amplitude"`` evolves ``psi = sqrt(rho0)`` and squares;
    ``method="direct"`` evolves ``rho0`` itself, the equation being linear.
    With ``fd_step`` the time derivative at ``t`` is compared, by central
    differences, with the right-hand side; the residual is relative to the
    largest right-hand-side value.
    """
    rho0 = np.asarray(rho0, dtype=float)
    phase = l.phase
    if rho0.shape != phase.shape:
        raise ValueError("density does not match the phase lattice")
    if np.any(rho0 < 0):
        raise ValueError("density must be non-negative")

    if method == "amplitude":
        def at(s):
            return np.abs(_propagate(l, np.sqrt(rho0).astype(complex), s)) ** 2
    elif method == "direct":
        def at(s):
            return _propagate(l, rho0.astype(complex), s).real
    else:
        raise ValueError(f"unknown method {method!r}")

    rho_t = at(t)
    residual = None
    if fd_step:
        dt_rho = (at(t + fd_step) - at(t - fd_step)) / (2 * fd_step)
        rhs = (1j * l.apply_unsymmetrized(rho_t)).real
        scale = float(np.max(np.abs(rhs))) or 1.0
        residual = float(np.max(np.abs(dt_rho - rhs)) / scale)
    return DensityEvolution(rho_t, residual)


def reduce_density(psi: PhaseWavefunction) -> np.ndarray:
    """``rho~(q_j) = dp * sum_k |psi(p_k, q_j)|^2``."""
    return psi.phase.p.spacing * np.sum(np.abs(psi.amplitudes) ** 2, axis=0)


def reduce_wavefunction(psi: PhaseWavefunction) -> ConfigWavefunction:
    """``psi~(q_j) = dp * sum_k psi(p_k, q_j)``."""
    return ConfigWavefunction(psi.phase.p.spacing * np.sum(psi.amplitudes, axis=0), psi.phase.q)


def evolve_config(psi_tilde: ConfigWavefunction, h: OperatorMatrix, t: float) -> ConfigWavefunction:
    """``psi~(t) = exp(-i H t) psi~``; ``H`` need not be hermitian."""
    if h.n != psi_tilde.lattice.n_points:
        raise ValueError("operator and wavefunction dimensions differ")
    return ConfigWavefunction(propagator(h, t) @ psi_tilde.amplitudes, psi_tilde.lattice)


def marginal_continuity_residual(field: FlowField, q: Lattice, before, now, after, h: float) -> float:
    """``max |d rho~/dt + d(f rho~)/dq|`` with a central difference in time."""
    dt_rho = (np.asarray(after) - np.asarray(before)) / (2 * h)
    flux = spectral_derivative(field.velocity(q.points) * np.asarray(now), q).real
    return float(np.max(np.abs(dt_rho + flux)))


# -- Born check ----------------------------------------------------------------

@dataclass
class BornReport:
    times: np.ndarray
    max_deviation: np.ndarray
    norm_a: np.ndarray
    norm_b: np.ndarray
    mass_a: np.ndarray
    mass_b: np.ndarray
    tolerance: float
    config_ordering: str
    continuity_residual: float = float("nan")
    max_boundary_mass: float = 0.0
    passed: bool = dc_field(init=False)

    def __post_init__(self):
        self.passed = bool(np.all(self.max_deviation <= self.tolerance))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "config_ordering": self.config_ordering,
            "worst_deviation": float(np.max(self.max_deviation)),
            "continuity_residual": self.continuity_residual,
            "max_boundary_mass": self.max_boundary_mass,
            "times": [float(x) for x in self.times],
            "max_deviation": [float(x) for x in self.max_deviation],
            "norm_A": [float(x) for x in self.norm_a],
            "norm_B": [float(x) for x in self.norm_b],
            "mass_A": [float(x) for x in self.mass_a],
            "mass_B": [float(x) for x in self.mass_b],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "max_deviation", "norm_A", "norm_B", "mass_A", "mass_B"])
            for row in zip(self.times, self.max_deviation, self.norm_a, self.norm_b, self.mass_a, self.mass_b):
                w.writerow([repr(float(x)) for x in row])


def compare_pipelines(field: FlowField, phase: PhaseLattice, psi0: PhaseWavefunction,
                      times: Sequence[float], tolerance: float,
                      config_ordering=Ordering.WEYL, fd_step: float = 1e-3) -> BornReport:
    """Run the two Born pipelines on a shared time grid.

    (A) evolve ``psi(p, q)`` with the Liouvillian and reduce to ``rho~``;
    (B) evolve ``psi~ = int dp psi`` with the configuration Hamiltonian in
    ``config_ordering`` and take ``|psi~|^2``.

    The default Weyl ordering is the hermitian 't Hooft operator, whose
    Schrodinger flow transports ``|psi~|^2`` by the same continuity equation
    as ``rho~``.  With ``PLEFT`` it is ``psi~`` itself that obeys the
    continuity equation, so ``|psi~|^2`` picks up an extra compression factor
    wherever ``f' != 0``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a non-empty increasing array starting at t >= 0")
    if abs(psi0.norm - 1.0) > NORM_TOL:
        raise BornPreconditionError(f"initial phase wavefunction not normalised (norm {psi0.norm:.12g})")
    rho_a = reduce_density(psi0)
    psi_b = reduce_wavefunction(psi0)
    mismatch = float(np.max(np.abs(rho_a - psi_b.density())))
    if mismatch > 1e-10:
        raise BornPreconditionError(
            f"initial data violate rho~(0) = |psi~(0)|^2 (max mismatch {mismatch:.3g}); "
            "a separable momentum profile must satisfy int |chi|^2 dp = |int chi dp|^2"
        )

    l = build_liouvillian(field, phase)
    h = build_hamiltonian(field, phase.q, config_ordering)

    psi_a = psi0
    t_prev = 0.0
    dev, na, nb, ma, mb = [], [], [], [], []
    worst_boundary = 0.0
    for t in times:
        if t > t_prev:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", BoundaryMassWarning)
                psi_a = evolve_phase(psi_a, l, t - t_prev)
            psi_b = evolve_config(psi_b, h, t - t_prev)
            t_prev = t
        worst_boundary = max(worst_boundary, psi_a.boundary_mass())
        rho = reduce_density(psi_a)
        born = psi_b.density()
        dev.append(float(np.max(np.abs(rho - born))))
        na.append(psi_a.norm)
        nb.append(psi_b.norm)
        ma.append(float(quadrature(rho, phase.q)))
        mb.append(float(quadrature(born, phase.q)))
    if worst_boundary >= BOUNDARY_MASS_TOL:
        warnings.warn(f"boundary mass reached {worst_boundary:.3g}; increase p_max", BoundaryMassWarning,
                      stacklevel=2)

    # equation-level check of pipeline (A) at the final time
    a = psi_a.amplitudes
    before = reduce_density(PhaseWavefunction(_propagate(l, a, -fd_step), phase))
    after = reduce_density(PhaseWavefunction(_propagate(l, a, fd_step), phase))
    cont = marginal_continuity_residual(field, phase.q, before, reduce_density(psi_a), after, fd_step)

    return BornReport(
        times=times,
        max_deviation=np.array(dev),
        norm_a=np.array(na),
        norm_b=np.array(nb),
        mass_a=np.array(ma),
        mass_b=np.array(mb),
        tolerance=float(tolerance),
        config_ordering=Ordering(config_ordering).value,
        continuity_residual=cont,
        max_boundary_mass=worst_boundary,
    )


def born_check(scenario) -> BornReport:
    """Born-rule comparison for a parsed :class:`beable_lab.scenario.Scenario`."""
    field = make_field(scenario.field_name, **scenario.field_params)
    phase = make_phase_lattice(scenario.n_q, scenario.n_p, scenario.p_max)
    chi = CHI_PROFILES[scenario.chi_profile](phase.p)
    phi = PHI_PROFILES[scenario.phi_profile](phase.q, **scenario.phi_params)
    psi0 = PhaseWavefunction.separable(chi, phi, phase)
    times = np.linspace(0.0, scenario.t_final, scenario.n_outputs)
    return compare_pipelines(field, phase, psi0, times, scenario.born_tol,
                             config_ordering=scenario.config_ordering)


def marginal_reference(field: FlowField, phase: PhaseLattice, rho_q0, times: Sequence[float],
                       p_width: float = 1.0) -> np.ndarray:
    """q-marginals of a Liouville-evolved density ``w(p) rho_q0(q)``.

    ``w`` is a Gaussian of width ``p_width`` normalised on the p lattice; the
    density is propagated directly (the Liouville equation is linear in it).
    Returns an array of shape ``(len(times), n_q)``.
    """
    l = build_liouvillian(field, phase)
    w = np.exp(-0.5 * (phase.p.points / p_width) ** 2)
    w /= quadrature(w, phase.p)
    rho = np.outer(w, np.asarray(rho_q0, dtype=float)).astype(complex)
    out = []
    t_prev = 0.0
    for t in times:
        if t > t_prev:
            rho = _propagate(l, rho, t - t_prev)
            t_prev = t
        out.append(phase.p.spacing * np.sum(rho.real, axis=0))
    return np.array(out)
