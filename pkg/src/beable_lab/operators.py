"""'t Hooft Hamiltonians on a configuration lattice.

``p`` is represented by ``P = -i D`` with ``D`` the spectral derivative
matrix and functions of ``q`` by diagonal matrices (collocation).

Orderings
---------
``PLEFT``  ``P diag(f) + diag(g)``: the derivative acts on the product, so
           ``H psi = -i d/dq (f psi) + g psi``.  This is the continuity-equation
           form of the reduced density dynamics.
``WEYL``   ``(P diag(f) + diag(f) P) / 2``, hermitian by construction.

Collocation products alias at the top of the Fourier spectrum, so identities
such as ``PLEFT(f, g=i f'/2) == WEYL(f)`` hold exactly only on the resolved
band of modes (see :func:`beable_lab.linalg.band_norm`).
"""
from __future__ import annotations

import enum

import numpy as np

from .beable import FlowField
from .lattice import Lattice, derivative_matrix, spectral_derivative
from .linalg import (
    OperatorMatrix,
    band_basis,
    commutator,
    inf_norm,
    unitary_propagator,
    general_propagator,
)


class Ordering(str, enum.Enum):
    PLEFT = "pleft"
    WEYL = "weyl"


class SpectrumError(RuntimeError):
    pass


def momentum_matrix(lattice: Lattice) -> np.ndarray:
    return -1j * derivative_matrix(lattice).matrix


def hermitize_g(field: FlowField, lattice: Lattice) -> np.ndarray:
    """``g = (i/2) df/dq`` on the lattice: purely imaginary, anti-hermitian as a multiplier."""
    field.validate(lattice)
    df = spectral_derivative(field.velocity(lattice.points), lattice).real
    return 0.5j * df


def build_hamiltonian(field: FlowField, lattice: Lattice, ordering=Ordering.WEYL, g=None) -> OperatorMatrix:
    """Assemble the 't Hooft Hamiltonian ``p f(q) + g(q)`` in the given ordering.

    ``g`` defaults to the field's own ``g`` (zero for catalog fields).  An
    explicit ``g`` array, e.g. from :func:`hermitize_g`, overrides it.
    """
    ordering = Ordering(ordering)
    field.validate(lattice)
    q = lattice.points
    f = field.velocity(q)
    p = momentum_matrix(lattice)
    g_vals = field.g_values(q) if g is None else np.asarray(g, dtype=complex)
    if g_vals.shape != q.shape:
        raise ValueError("g does not match the lattice")
    if ordering is Ordering.PLEFT:
        h = p * f[None, :]
    else:
        h = 0.5 * (p * f[None, :] + f[:, None] * p)
        # remove rounding asymmetry so the hermitian flag reflects the algebra
        h = 0.5 * (h + h.conj().T)
    h = h + np.diag(g_vals)
    return OperatorMatrix(h, lattice, label=f"H[{field.name},{ordering.value}]", field=field, ordering=ordering)


def _sort_key(w: np.ndarray) -> np.ndarray:
    # real part, then imaginary part, then original index
    return np.lexsort((np.arange(len(w)), np.round(w.imag, 12), np.round(w.real, 12)))


def spectrum(op) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues sorted by real part (ties: imaginary part, index) and eigenvectors as columns."""
    m = op.matrix if isinstance(op, OperatorMatrix) else np.asarray(op)
    hermitian = op.hermitian if isinstance(op, OperatorMatrix) else np.allclose(m, m.conj().T, atol=0)
    if not np.all(np.isfinite(m)):
        raise SpectrumError("matrix has non-finite entries")
    try:
        if hermitian:
            w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
            w = w.astype(complex)
        else:
            w, v = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"eigensolver did not converge: {exc}") from exc
    order = _sort_key(w)
    return w[order], v[:, order]


def propagator(op: OperatorMatrix, t: float) -> np.ndarray:
    """``exp(-i H t)``; unitary via ``eigh`` when ``H`` is hermitian, ``expm`` otherwise."""
    if op.hermitian:
        return unitary_propagator(0.5 * (op.matrix + op.matrix.conj().T), t)
    return general_propagator(op.matrix, t)


def heisenberg_commutator_norm(op: OperatorMatrix, observable, t: float, band: float | None = 0.25) -> float:
    """Normalised ``[Q(t), Q(0)]`` with ``Q(t) = U^dagger Q U``, ``U = exp(-i H t)``.

    With ``band=None`` this is ``|[Q(t), Q]|_inf / |Q|_inf**2`` over the full
    lattice.  A finite lattice can only carry diagonal matrices into diagonal
    ones at resonant times (``U`` a permutation), so that figure stays O(1) at
    generic ``t``.  The default compresses the commutator onto the resolved
    band ``|k| <= band * n`` and takes spectral norms, where the be-able
    property shows up as convergence to zero.
    """
    if not op.hermitian:
        raise ValueError("heisenberg evolution needs a hermitian operator")
    q_mat = observable.matrix if isinstance(observable, OperatorMatrix) else np.asarray(observable)
    if q_mat.ndim == 1:
        q_mat = np.diag(q_mat)
    if q_mat.shape != op.matrix.shape:
        raise ValueError("observable dimension does not match operator")
    if np.count_nonzero(q_mat - np.diag(np.diag(q_mat))):
        raise ValueError("observable must be diagonal in the position basis")
    if t == 0:
        return 0.0
    u = propagator(op, t)
    q_t = u.conj().T @ q_mat @ u
    c = commutator(q_t, q_mat)
    if band is None:
        scale = inf_norm(q_mat) ** 2
        return inf_norm(c) / scale if scale else 0.0
    b = band_basis(op.lattice, band)
    scale = np.linalg.norm(q_mat, 2) ** 2
    return float(np.linalg.norm(b.conj().T @ c @ b, 2) / scale) if scale else 0.0
