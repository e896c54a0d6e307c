"""Uniform periodic grids and Fourier spectral calculus.

Everything in the package lives on a :class:`Lattice` (configuration space,
``q`` in ``[0, period)``) or on a :class:`PhaseLattice`, the tensor product of
a momentum lattice ``p in [-p_max, p_max)`` with a configuration lattice.

Phase-space arrays are stored with shape ``(n_p, n_q)``.  Flattening is
p-major: the flat index of ``(p_k, q_j)`` is ``k * n_q + j``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    """Uniform periodic lattice ``x_j = start + j * spacing``, ``j = 0..n-1``."""

    n_points: int
    period: float = TWO_PI
    start: float = 0.0

    def __post_init__(self):
        if int(self.n_points) != self.n_points:
            raise LatticeError("n_points must be an integer")
        if self.n_points % 2:
            raise LatticeError("n_points must be even")
        if self.n_points < 4:
            raise LatticeError("n_points must be at least 4")
        if not self.period > 0:
            raise LatticeError("period must be positive")

    @property
    def spacing(self) -> float:
        return self.period / self.n_points

    @cached_property
    def points(self) -> np.ndarray:
        x = self.start + self.spacing * np.arange(self.n_points)
        x.setflags(write=False)
        return x

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in FFT order; the Nyquist mode carries ``-n/2``."""
        k = np.fft.fftfreq(self.n_points, d=1.0 / self.n_points) * (TWO_PI / self.period)
        k.setflags(write=False)
        return k

    @property
    def size(self) -> int:
        return self.n_points

    @property
    def weight(self) -> float:
        return self.spacing

    def wrap(self, x):
        return self.start + np.mod(np.asarray(x) - self.start, self.period)


@dataclass(frozen=True)
class PhaseLattice:
    q: Lattice
    p: Lattice

    @property
    def p_max(self) -> float:
        return 0.5 * self.p.period

    @property
    def shape(self) -> tuple[int, int]:
        return (self.p.n_points, self.q.n_points)

    @property
    def size(self) -> int:
        return self.p.n_points * self.q.n_points

    @property
    def cell(self) -> float:
        return self.p.spacing * self.q.spacing

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(P, Q)`` arrays of shape ``(n_p, n_q)``."""
        return np.meshgrid(self.p.points, self.q.points, indexing="ij")

    def flat_index(self, k_p: int, j_q: int) -> int:
        return k_p * self.q.n_points + j_q


def make_lattice(n_points: int, period: float = TWO_PI, start: float = 0.0) -> Lattice:
    return Lattice(n_points, float(period), float(start))


def make_phase_lattice(n_q: int, n_p: int, p_max: float, period: float = TWO_PI) -> PhaseLattice:
    if not p_max > 0:
        raise LatticeError("p_max must be positive")
    return PhaseLattice(make_lattice(n_q, period), make_lattice(n_p, 2.0 * p_max, -p_max))


def _check_length(values: np.ndarray, lattice: Lattice, axis: int) -> None:
    if values.shape[axis] != lattice.n_points:
        raise LatticeError(
            f"array length {values.shape[axis]} does not match lattice size {lattice.n_points}"
        )


def spectral_derivative(values, lattice: Lattice, axis: int = -1, order: int = 1) -> np.ndarray:
    """Fourier derivative of periodic samples along ``axis``.

    Exact for resolved modes ``|k| < n/2``.  The output is complex; take
    ``.real`` yourself when the input is known to be real.
    """
    values = np.asarray(values)
    _check_length(values, lattice, axis)
    shape = [1] * values.ndim
    shape[axis] = lattice.n_points
    ik = (1j * lattice.wavenumbers) ** order
    return np.fft.ifft(ik.reshape(shape) * np.fft.fft(values, axis=axis), axis=axis)


def derivative_matrix(lattice: Lattice):
    """Dense matrix ``D`` of :func:`spectral_derivative`; ``-1j * D`` is hermitian."""
    from .linalg import OperatorMatrix

    n = lattice.n_points
    idx = np.arange(n)
    # D is circulant: column 0 is the derivative of the unit vector e_0.
    e0 = np.zeros(n)
    e0[0] = 1.0
    col = spectral_derivative(e0, lattice)
    d = col[(idx[:, None] - idx[None, :]) % n]
    return OperatorMatrix(d, lattice, label="D")


def quadrature(values, lattice: Lattice, axis: int = -1):
    """Rectangle rule, which is the trapezoid rule on a periodic grid."""
    values = np.asarray(values)
    _check_length(values, lattice, axis)
    return lattice.spacing * np.sum(values, axis=axis)


def fourier_interpolate(values, lattice: Lattice, x, derivative: int = 0):
    """Evaluate the trigonometric interpolant of ``values`` (or a derivative) at ``x``.

    The Nyquist coefficient is split symmetrically so that real data give a
    real interpolant.
    """
    values = np.asarray(values)
    _check_length(values, lattice, -1)
    n = lattice.n_points
    c = np.fft.fft(values) / n
    k = lattice.wavenumbers.copy()
    x = np.asarray(x, dtype=float)
    phase = np.exp(1j * np.multiply.outer(x - lattice.start, k))
    coef = c * (1j * k) ** derivative
    out = phase @ coef
    # symmetric Nyquist: replace c_N e^{-i N/2 x} by c_N cos(N/2 x)
    kn = abs(k[n // 2])
    nyq = np.multiply.outer(x - lattice.start, kn)
    if derivative == 0:
        sym = np.cos(nyq)
    else:
        sym = np.real((1j * kn) ** derivative * np.exp(1j * nyq))
    out = out - coef[n // 2] * phase[..., n // 2] + c[n // 2] * sym
    if np.isrealobj(values):
        return out.real
    return out
