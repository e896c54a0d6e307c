"""Emergence at an observer scale: positive splitting of the Hamiltonian,
the scale-dependent constraint, the physical subspace it selects, and the
classical gauge orbits the constraint generates on phase space.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .beable import FlowField, momentum_window, poisson_bracket
from .lattice import Lattice, PhaseLattice, fourier_interpolate, make_phase_lattice, spectral_derivative
from .linalg import OperatorMatrix, commutator, inf_norm, unitary_propagator
from .operators import Ordering, build_hamiltonian

RHO_FLOOR = 1e-8
INVARIANT_TOL = 1e-8
DEFAULT_THRESHOLD = 1e-8
CLASSICAL_NP = 256


class NotFlowInvariantError(ValueError):
    pass


class NonPhysicalStateError(ValueError):
    pass


def _rho_array(rho, lattice: Lattice) -> np.ndarray:
    r = np.asarray(rho, dtype=float)
    if r.ndim == 0:
        r = np.full(lattice.n_points, float(r))
    if r.shape != (lattice.n_points,):
        raise ValueError("rho does not match the lattice")
    return r


def _rel(num: float, *scales: float) -> float:
    den = math.prod(scales)
    return num / den if den > 0 else num


@dataclass(frozen=True)
class FlowInvariantCheck:
    residual: float
    commutator_norm: float

    def passed(self, tol: float = INVARIANT_TOL) -> bool:
        return self.residual <= tol and self.commutator_norm <= tol


def check_flow_invariant(rho, field: FlowField, lattice: Lattice, h: OperatorMatrix | None = None) -> FlowInvariantCheck:
    """How far ``rho(q)`` is from being conserved along the flow.

    ``residual`` is ``max |f d(rho)/dq| / max rho``; ``commutator_norm`` is
    ``|[diag rho, H]|_inf / (|rho|_inf |H|_inf)`` with the Weyl Hamiltonian
    unless ``h`` is given.
    """
    r = _rho_array(rho, lattice)
    if np.any(r <= 0):
        raise ValueError("rho must be positive on the lattice")
    f = field.velocity(lattice.points)
    drho = spectral_derivative(r, lattice).real
    residual = float(np.max(np.abs(f * drho)) / np.max(r))
    if h is None:
        h = build_hamiltonian(field, lattice, Ordering.WEYL)
    c = commutator(np.diag(r), h.matrix)
    return FlowInvariantCheck(residual, _rel(inf_norm(c), float(np.max(r)), h.norm()))


@dataclass(frozen=True, eq=False)
class SplitPair:
    h_plus: OperatorMatrix
    h_minus: OperatorMatrix
    rho: np.ndarray
    source: OperatorMatrix

    @property
    def lattice(self) -> Lattice:
        return self.source.lattice

    @property
    def field(self) -> FlowField | None:
        return self.source.field

    def identity_residual(self) -> float:
        """``|H+ - H- - H|_inf / |H|_inf``."""
        d = self.h_plus.matrix - self.h_minus.matrix - self.source.matrix
        return _rel(inf_norm(d), self.source.norm())

    def min_eigenvalues(self) -> tuple[float, float]:
        """Smallest eigenvalue of ``H+`` and ``H-``, each relative to its norm."""
        out = []
        for op in (self.h_plus, self.h_minus):
            m = 0.5 * (op.matrix + op.matrix.conj().T)
            w = np.linalg.eigvalsh(m)
            out.append(_rel(float(w[0]), float(np.max(np.abs(w)))))
        return out[0], out[1]

    def commutator_residuals(self) -> dict[str, float]:
        rho = np.diag(self.rho)
        rn = float(np.max(np.abs(self.rho)))
        hp, hm = self.h_plus, self.h_minus
        return {
            "h_plus_h_minus": _rel(inf_norm(commutator(hp, hm)), hp.norm(), hm.norm()),
            "rho_h_plus": _rel(inf_norm(commutator(rho, hp.matrix)), rn, hp.norm()),
            "rho_h_minus": _rel(inf_norm(commutator(rho, hm.matrix)), rn, hm.norm()),
        }


def split_hamiltonian(h: OperatorMatrix, rho, validate: bool = True) -> SplitPair:
    """``H+- = (rho +- H)^2 rho^{-1} / 4`` as matrices, so that ``H = H+ - H-``.

    ``rho`` is a positive constant or lattice array.  With ``validate`` the
    splitting is refused unless ``rho`` is a flow invariant; pass
    ``validate=False`` only to study what goes wrong without one.
    """
    if not h.hermitian:
        raise ValueError("split_hamiltonian needs a hermitian Hamiltonian")
    lattice = h.lattice
    r = _rho_array(rho, lattice)
    if np.any(r < RHO_FLOOR):
        raise ValueError(f"rho must be at least {RHO_FLOOR} everywhere")
    if validate:
        if h.field is not None:
            chk = check_flow_invariant(r, h.field, lattice, h)
        else:
            c = commutator(np.diag(r), h.matrix)
            chk = FlowInvariantCheck(0.0, _rel(inf_norm(c), float(np.max(r)), h.norm()))
        if not chk.passed():
            raise NotFlowInvariantError(
                f"rho is not a flow invariant (residual {chk.residual:.3g}, "
                f"commutator {chk.commutator_norm:.3g})"
            )
    rmat = np.diag(r.astype(complex))
    inv = 1.0 / r
    a_plus = rmat + h.matrix
    a_minus = rmat - h.matrix
    h_plus = (a_plus @ a_plus) * inv[None, :] / 4.0
    h_minus = (a_minus @ a_minus) * inv[None, :] / 4.0
    return SplitPair(
        h_plus=OperatorMatrix(h_plus, lattice, label="H+", field=h.field),
        h_minus=OperatorMatrix(h_minus, lattice, label="H-", field=h.field),
        rho=r,
        source=h,
    )


@dataclass(frozen=True, eq=False)
class Constraint:
    phi: OperatorMatrix
    e_obs: float
    e_planck: float
    prefactor: float
    pair: SplitPair


def constraint_prefactor(e_obs: float, e_planck: float) -> float:
    """``1 - exp(-(E_p - E)/E)``, zero at the be-able scale and -> 1 for ``E << E_p``."""
    return float(-math.expm1(-(e_planck - e_obs) / e_obs))


def build_constraint(pair: SplitPair, e_obs: float, e_planck: float) -> Constraint:
    if not e_obs > 0:
        raise ValueError(f"e_obs must be positive, got {e_obs}")
    if e_obs > e_planck:
        raise ValueError(f"e_obs ({e_obs}) must not exceed e_planck ({e_planck})")
    c = constraint_prefactor(e_obs, e_planck)
    phi = OperatorMatrix(c * pair.h_minus.matrix, pair.lattice, label="Phi_E", field=pair.field)
    return Constraint(phi=phi, e_obs=float(e_obs), e_planck=float(e_planck), prefactor=c, pair=pair)


@dataclass(frozen=True, eq=False)
class PhysicalSubspace:
    basis: np.ndarray
    dimension: int
    singular_threshold: float
    phi_eigenvalues: np.ndarray

    @property
    def empty(self) -> bool:
        return self.dimension == 0

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.conj().T


def _kernel(m: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    top = float(np.max(np.abs(w))) if w.size else 0.0
    keep = w <= threshold * top
    return v[:, keep], w


def physical_subspace(c: Constraint, threshold: float = DEFAULT_THRESHOLD) -> PhysicalSubspace:
    """States annihilated by the constraint, up to ``threshold`` times its top eigenvalue.

    A vanishing prefactor (``E == E_p``) returns the whole lattice space; a
    constraint with no small eigenvalues returns an empty subspace.
    """
    n = c.phi.n
    if c.prefactor == 0.0 or not np.any(c.phi.matrix):
        return PhysicalSubspace(np.eye(n, dtype=complex), n, threshold, np.zeros(n))
    if not c.phi.hermitian:
        raise ValueError("constraint operator is not hermitian")
    basis, w = _kernel(c.phi.matrix, threshold)
    return PhysicalSubspace(basis, basis.shape[1], threshold, w)


def physical_energies(pair: SplitPair, subspace: PhysicalSubspace) -> np.ndarray:
    """Spectrum of ``H+`` compressed onto the physical subspace."""
    if subspace.empty:
        return np.zeros(0)
    b = subspace.basis
    m = b.conj().T @ pair.h_plus.matrix @ b
    return np.linalg.eigvalsh(0.5 * (m + m.conj().T))


def subspace_report(c: Constraint, subspace: PhysicalSubspace) -> dict:
    """JSON-ready summary of the physical subspace at one observer scale."""
    hm = c.pair.h_minus.matrix
    return {
        "e_obs": c.e_obs,
        "e_planck": c.e_planck,
        "prefactor": c.prefactor,
        "dimension": int(subspace.dimension),
        "eigenvalues_of_H_minus": [float(x) for x in np.sort(np.linalg.eigvalsh(0.5 * (hm + hm.conj().T)))],
        "physical_energies": [float(x) for x in physical_energies(c.pair, subspace)],
    }


def _amplitudes(state) -> np.ndarray:
    return np.asarray(getattr(state, "amplitudes", state), dtype=complex)


def emergent_evolve(state, pair: SplitPair, t: float, subspace: PhysicalSubspace | None = None) -> np.ndarray:
    """Evolve a physical state with ``exp(-i H+ t)``.

    ``subspace`` defaults to the kernel of ``H-`` (the ``E << E_p`` limit).
    """
    psi = _amplitudes(state)
    if subspace is None:
        basis, _ = _kernel(pair.h_minus.matrix, DEFAULT_THRESHOLD)
    else:
        basis = subspace.basis
    norm = np.linalg.norm(psi)
    proj = basis @ (basis.conj().T @ psi)
    if norm == 0 or np.linalg.norm(proj - psi) > 1e-8 * norm:
        raise NonPhysicalStateError("state is not in the physical subspace")
    return unitary_propagator(0.5 * (pair.h_plus.matrix + pair.h_plus.matrix.conj().T), t) @ psi


def emergent_consistency(state, pair: SplitPair) -> tuple[float, float]:
    """``(|(H - H+) psi|, |(H+ - rho) psi|)``; both vanish on physical states."""
    psi = _amplitudes(state)
    hp = pair.h_plus.matrix @ psi
    return (
        float(np.linalg.norm(pair.source.matrix @ psi - hp)),
        float(np.linalg.norm(hp - pair.rho * psi)),
    )


# -- classical constraint and gauge orbits -------------------------------------

class GaugeGenerator(str, enum.Enum):
    PHI_E = "phi_e"
    SQRT_PHI = "sqrt_phi"


@dataclass(frozen=True)
class GaugeStep:
    p: float
    q: float
    in_bounds: bool


def _rho_at(pair: SplitPair, q: float) -> tuple[float, float]:
    r = pair.rho
    if np.all(r == r[0]):
        return float(r[0]), 0.0
    lat = pair.lattice
    return float(fourier_interpolate(r, lat, q)), float(fourier_interpolate(r, lat, q, derivative=1))


def _generator_gradient(point, generator, pair: SplitPair) -> tuple[float, float]:
    """``(dG/dp, dG/dq)`` of the classical generator at ``(p, q)``."""
    field = pair.field
    if field is None:
        raise ValueError("split pair carries no flow field; build H with build_hamiltonian")
    p, q = float(point[0]), float(point[1])
    rho, drho = _rho_at(pair, q)
    f = float(field.velocity(q))
    h = p * f + float(field.classical_g(q))
    dh_q = p * float(field.velocity_derivative(q)) + float(field.classical_g_derivative(q))
    gen = GaugeGenerator(generator)
    if gen is GaugeGenerator.SQRT_PHI:
        return -0.5 * f, 0.5 * (drho - dh_q)
    d = rho - h
    dp = -d * f / (2 * rho)
    dq = d * (drho - dh_q) / (2 * rho) - d * d * drho / (4 * rho * rho)
    return dp, dq


def gauge_orbit(point, generator, pair: SplitPair, epsilon: float, p_max: float | None = None) -> GaugeStep:
    """One explicit Euler step ``(p, q) -> (p - eps dG/dq, q + eps dG/dp)``.

    ``PHI_E`` uses the classical ``H- = (rho - H)^2 / (4 rho)``; it is
    stationary on the constraint surface ``H = rho``.  ``SQRT_PHI`` uses
    ``(rho - H) / 2`` and moves points along the surface.
    """
    gp, gq = _generator_gradient(point, generator, pair)
    p_new = float(point[0]) - epsilon * gq
    q_new = float(point[1]) + epsilon * gp
    in_bounds = True if p_max is None else abs(p_new) < p_max
    return GaugeStep(p_new, q_new, in_bounds)


def gauge_fixing_bracket(point, chi: Callable[[float, float], float], pair: SplitPair,
                         generator=GaugeGenerator.SQRT_PHI, h: float = 1e-6) -> float:
    """``{G, chi}`` at one phase point; non-zero means ``chi`` fixes the gauge there."""
    p, q = float(point[0]), float(point[1])
    gp, gq = _generator_gradient(point, generator, pair)
    chi_p = (chi(p + h, q) - chi(p - h, q)) / (2 * h)
    chi_q = (chi(p, q + h) - chi(p, q - h)) / (2 * h)
    return gq * chi_p - gp * chi_q


@dataclass(frozen=True)
class FirstClassReport:
    operator_residual: float
    classical_residual: float
    tolerance: float = 1e-6

    @property
    def first_class(self) -> bool:
        return self.operator_residual <= self.tolerance and self.classical_residual <= self.tolerance


def first_class_check(pair: SplitPair, field: FlowField, phase: PhaseLattice, tolerance: float = 1e-6) -> FirstClassReport:
    """Operator residual ``|[Phi, H]| / (|Phi| |H|)`` and classical ``max |{Phi, H}|``.

    The classical bracket uses the smooth momentum surrogate from
    :func:`beable_lab.beable.momentum_window` and is read on its interior band.
    ``Phi`` is quadratic in that surrogate, so its edge window needs a finer
    momentum axis than the quantum lattice; at least ``CLASSICAL_NP`` points
    are used.
    """
    if phase.q != pair.lattice:
        raise ValueError("phase lattice q-axis must match the operator lattice")
    phi = pair.h_minus
    h = pair.source
    op_res = _rel(inf_norm(commutator(phi, h)), phi.norm(), h.norm())

    if phase.p.n_points < CLASSICAL_NP:
        phase = make_phase_lattice(phase.q.n_points, CLASSICAL_NP, phase.p_max, phase.q.period)
    p_s, _, band = momentum_window(phase)
    q = phase.q.points
    h_cl = p_s[:, None] * field.velocity(q)[None, :] + field.classical_g(q)[None, :]
    rho = pair.rho[None, :]
    phi_cl = (rho - h_cl) ** 2 / (4 * rho)
    br = poisson_bracket(phi_cl, h_cl, phase)
    cl_res = float(np.max(np.abs(br[band, :])))
    return FirstClassReport(float(op_res), cl_res, tolerance)
