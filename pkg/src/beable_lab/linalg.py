"""Dense operator container, norms, propagators and the binary matrix format."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy.linalg
from scipy.special import jv

from .lattice import Lattice, PhaseLattice

HERMITIAN_RTOL = 1e-10

MAGIC = b"BLAB"
FLAG_COMPLEX128 = 0
FLAG_REAL64 = 1
_HEADER = struct.Struct("<4sIII")  # magic, rows, cols, payload flag -> 16 bytes


def inf_norm(m) -> float:
    """Maximum absolute row sum."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(m), axis=-1)))


def hermiticity_residual(m) -> float:
    m = np.asarray(m)
    return inf_norm(m - m.conj().T)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Square matrix over a lattice basis.

    ``hermitian`` is measured on construction, never taken on trust.
    ``field`` and ``ordering`` are optional provenance used by downstream
    code that needs the classical counterpart of the operator.
    """

    matrix: np.ndarray
    lattice: Lattice | PhaseLattice
    label: str = ""
    field: Any = None
    ordering: Any = None
    hermitian: bool = dc_field(init=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator matrix must be square, got shape {m.shape}")
        if m.shape[0] != self.lattice.size:
            raise ValueError(
                f"operator dimension {m.shape[0]} does not match lattice size {self.lattice.size}"
            )
        object.__setattr__(self, "matrix", m)
        scale = inf_norm(m)
        herm = hermiticity_residual(m) <= HERMITIAN_RTOL * max(scale, np.finfo(float).tiny)
        object.__setattr__(self, "hermitian", bool(herm))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        return inf_norm(self.matrix)

    def __matmul__(self, other):
        return self.matrix @ (other.matrix if isinstance(other, OperatorMatrix) else other)


def commutator(a, b) -> np.ndarray:
    a = a.matrix if isinstance(a, OperatorMatrix) else np.asarray(a)
    b = b.matrix if isinstance(b, OperatorMatrix) else np.asarray(b)
    return a @ b - b @ a


def band_basis(lattice: Lattice, fraction: float = 0.25) -> np.ndarray:
    """Orthonormal columns spanning the Fourier modes with ``|k| <= fraction * n``.

    These are the modes a lattice resolves faithfully under products with
    smooth low-bandwidth functions; identities that hold in the continuum but
    fail at the aliasing edge of the spectrum are checked on this band.
    """
    n = lattice.n_points
    m = np.fft.fftfreq(n, d=1.0 / n)
    keep = np.abs(m) <= fraction * n
    j = np.arange(n)
    return np.exp(1j * np.outer(j, m[keep]) * (2 * np.pi / n)) / np.sqrt(n)


def band_norm(m, lattice: Lattice, fraction: float = 0.25) -> float:
    """Spectral norm of ``B^dagger M B`` with ``B = band_basis(lattice, fraction)``."""
    m = m.matrix if isinstance(m, OperatorMatrix) else np.asarray(m)
    b = band_basis(lattice, fraction)
    return float(np.linalg.norm(b.conj().T @ m @ b, 2))


def unitary_propagator(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i h t)`` for hermitian ``h`` via eigendecomposition."""
    if t == 0:
        return np.eye(h.shape[0], dtype=complex)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def general_propagator(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i h t)`` for an arbitrary square matrix (scaling and squaring)."""
    if t == 0:
        return np.eye(h.shape[0], dtype=complex)
    return scipy.linalg.expm(-1j * t * np.asarray(h, dtype=complex))


def taylor_expm(a: np.ndarray, terms: int = 60) -> np.ndarray:
    """Plain power-series ``exp(a)``; a slow reference for small, small-norm matrices."""
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def chebyshev_expm_apply(
    apply: Callable[[np.ndarray], np.ndarray],
    v: np.ndarray,
    t: float,
    bound: float,
    tol: float = 1e-15,
) -> np.ndarray:
    """Apply ``exp(-i A t)`` to ``v`` for hermitian ``A`` with spectrum in ``[-bound, bound]``.

    Chebyshev expansion with Bessel coefficients; the error is below ``tol``
    times ``|v|`` once the expansion is truncated past ``bound * |t|`` terms.
    """
    if t == 0:
        return np.array(v, dtype=complex, copy=True)
    if bound <= 0:
        return np.array(v, dtype=complex, copy=True)
    a = bound * t
    # J_k(a) is negligible once k exceeds |a| by a margin growing like |a|^(1/3)
    kmax = int(abs(a) + 12.0 * abs(a) ** (1.0 / 3.0) + 40)
    coef = jv(np.arange(kmax + 1), a)
    v = np.asarray(v, dtype=complex)
    t_prev = v
    t_cur = apply(v) / bound
    out = coef[0] * t_prev + 2.0 * (-1j) * coef[1] * t_cur
    phase = -1j
    for k in range(2, kmax + 1):
        t_next = 2.0 * apply(t_cur) / bound - t_prev
        phase *= -1j
        out = out + 2.0 * phase * coef[k] * t_next
        t_prev, t_cur = t_cur, t_next
        if k > abs(a) and abs(coef[k]) < tol:
            break
    return out


# -- binary / CSV export -------------------------------------------------------

def write_matrix(path, matrix) -> None:
    """Write ``BLAB`` format: 16-byte header then row-major little-endian payload.

    Header: magic ``b"BLAB"``, u32 rows, u32 cols, u32 payload flag
    (0 = complex128, 1 = real64).
    """
    m = matrix.matrix if isinstance(matrix, OperatorMatrix) else matrix
    if hasattr(m, "toarray"):
        m = m.toarray()
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    if np.iscomplexobj(m):
        flag, payload = FLAG_COMPLEX128, np.ascontiguousarray(m, dtype="<c16")
    else:
        flag, payload = FLAG_REAL64, np.ascontiguousarray(m, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1], flag))
        fh.write(payload.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("file too short for BLAB header")
    magic, rows, cols, flag = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    dtype = {FLAG_COMPLEX128: "<c16", FLAG_REAL64: "<f8"}.get(flag)
    if dtype is None:
        raise ValueError(f"unknown payload flag {flag}")
    expected = rows * cols * np.dtype(dtype).itemsize
    body = data[_HEADER.size:]
    if len(body) != expected:
        raise ValueError(f"payload has {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype=dtype).reshape(rows, cols).copy()


def write_matrix_csv(path, matrix) -> None:
    """CSV with one row per matrix row; complex entries written as ``re+imj``."""
    m = matrix.matrix if isinstance(matrix, OperatorMatrix) else matrix
    if hasattr(m, "toarray"):
        m = m.toarray()
    m = np.asarray(m)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([repr(complex(x)) if np.iscomplexobj(m) else repr(float(x)) for x in row])
