"""Lattice transport kernels for deterministic flows.

For ``dq/dt = f(q)`` the propagator of both the density and the reduced
amplitude is concentrated on the flow map, so over one step it is a sparse
matrix ``K`` with ``x(t + dt) = K x(t)``.  Two constructions are offered:

``NEAREST``  each source site moves to the lattice site nearest its image,
             giving a 0/1 matrix (a permutation on resonant uniform steps).
``LINEAR``   conservative remap: target cell ``j`` is pulled back through
             the flow and a piecewise-linear (central slope) reconstruction of
             the source data is integrated over the preimage.  Columns sum to
             one, so mass is preserved, and the scheme is second order.

Also here: a midpoint-rule symplectic action for phase-space paths and a
harness that compares kernel transport against the phase-space evolution.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .beable import DEFAULT_DT, FlowField, flow_map
from .kvn import ConfigWavefunction, marginal_reference
from .lattice import Lattice, make_phase_lattice, quadrature
from .linalg import write_matrix


class Interpolation(str, enum.Enum):
    NEAREST = "nearest"
    LINEAR = "linear"


@dataclass(frozen=True, eq=False)
class TransportKernel:
    matrix: sp.csr_matrix
    delta_t: float
    field: FlowField
    order: Interpolation
    lattice: Lattice

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise ValueError(f"vector length {x.shape[0]} does not match kernel size {self.n}")
        return self.matrix @ x

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def export(self, path) -> None:
        """Binary matrix export, real64 payload."""
        write_matrix(path, self.dense())


def _nearest(field: FlowField, lattice: Lattice, delta_t: float, dt: float) -> sp.csr_matrix:
    n = lattice.n_points
    image = flow_map(field, lattice.points, delta_t, dt=dt, wrap=False)
    target = np.rint((image - lattice.start) / lattice.spacing).astype(np.int64) % n
    return sp.csr_matrix((np.ones(n), (target, np.arange(n))), shape=(n, n))


def _linear(field: FlowField, lattice: Lattice, delta_t: float, dt: float) -> sp.csr_matrix:
    n = lattice.n_points
    h = lattice.spacing
    # cell j is [q_j - h/2, q_j + h/2); work in units of h relative to q_0
    edges = lattice.start + (np.arange(n + 1) - 0.5) * h
    pre = (flow_map(field, edges, -delta_t, dt=dt, wrap=False) - lattice.start) / h
    rows, cols, vals = [], [], []
    for j in range(n):
        a, b = pre[j], pre[j + 1]
        for i in range(math.floor(a + 0.5), math.floor(b + 0.5) + 1):
            lo = max(a, i - 0.5) - i
            hi = min(b, i + 0.5) - i
            if hi - lo <= 1e-14:
                continue
            # integral over [lo, hi] of x_i + s (x_{i+1} - x_{i-1}) / 2
            m = 0.25 * (hi * hi - lo * lo)
            rows += [j, j, j]
            cols += [i % n, (i + 1) % n, (i - 1) % n]
            vals += [hi - lo, m, -m]
    k = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    k.sum_duplicates()
    k.data[np.abs(k.data) < 1e-15] = 0.0
    k.eliminate_zeros()
    return k


def build_transport_kernel(field: FlowField, lattice: Lattice, delta_t: float,
                           order=Interpolation.LINEAR, dt: float = DEFAULT_DT) -> TransportKernel:
    """One-step transport matrix ``K(delta_t)`` of the flow ``dq/dt = f(q)``."""
    order = Interpolation(order)
    if delta_t < 0:
        raise ValueError("delta_t must be non-negative")
    field.validate(lattice)
    if delta_t == 0:
        m = sp.identity(lattice.n_points, format="csr")
    elif order is Interpolation.NEAREST:
        m = _nearest(field, lattice, delta_t, dt)
    else:
        m = _linear(field, lattice, delta_t, dt)
    return TransportKernel(m, float(delta_t), field, order, lattice)


def propagate_both(kernel: TransportKernel, psi_tilde, rho_tilde):
    """Apply the same kernel to an amplitude and to a density."""
    amps = psi_tilde.amplitudes if isinstance(psi_tilde, ConfigWavefunction) else np.asarray(psi_tilde, dtype=complex)
    rho = np.asarray(rho_tilde, dtype=float)
    if amps.shape != (kernel.n,) or rho.shape != (kernel.n,):
        raise ValueError("input shapes do not match the kernel")
    return ConfigWavefunction(kernel.apply(amps), kernel.lattice), kernel.apply(rho)


def duality_error(kernel: TransportKernel, psi_tilde) -> float:
    """``max |(|K psi|^2 - K |psi|^2)|`` for a single application."""
    amps = psi_tilde.amplitudes if isinstance(psi_tilde, ConfigWavefunction) else np.asarray(psi_tilde, dtype=complex)
    out_psi, out_rho = propagate_both(kernel, amps, np.abs(amps) ** 2)
    return float(np.max(np.abs(np.abs(out_psi.amplitudes) ** 2 - out_rho)))


# -- symplectic action ---------------------------------------------------------

def symplectic_action(times, p, q, field: FlowField | None = None) -> float:
    """Midpoint rule for ``int (1/2 xi.omega.dxi/dt - H(xi)) dt`` with ``xi = (q, p)``.

    ``xi.omega.dxi/dt = p.dq/dt - q.dp/dt``.  ``p`` and ``q`` have shape
    ``(n_t,)`` or ``(n_t, d)``; ``H = sum_i p_i f(q_i)`` from ``field`` (zero
    when ``field`` is None).  For a closed counter-clockwise loop in the
    ``(q, p)`` plane the kinetic part equals minus the enclosed area.
    """
    t = np.asarray(times, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if t.ndim != 1 or p.shape != q.shape or p.shape[0] != t.shape[0]:
        raise ValueError("path arrays are ragged")
    if t.size < 3:
        raise ValueError("need at least three time points")
    steps = np.diff(t)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * abs(steps[0]):
        raise ValueError("time step must be uniform and positive")
    if p.ndim == 1:
        p, q = p[:, None], q[:, None]
    dq, dp = np.diff(q, axis=0), np.diff(p, axis=0)
    pm, qm = 0.5 * (p[1:] + p[:-1]), 0.5 * (q[1:] + q[:-1])
    kinetic = 0.5 * np.sum(pm * dq - qm * dp)
    if field is None:
        return float(kinetic)
    h = np.sum(field.hamiltonian(pm, qm), axis=1)
    return float(kinetic - np.sum(h * steps))


# -- kernel vs phase-space evolution -------------------------------------------

def standard_density(lattice: Lattice) -> np.ndarray:
    """``(1 + cos q) / 2 pi`` scaled to the lattice period."""
    x = 2 * np.pi * (lattice.points - lattice.start) / lattice.period
    return (1 + np.cos(x)) / lattice.period


@dataclass
class KernelComparison:
    times: np.ndarray
    l1: np.ndarray
    linf: np.ndarray
    mass_drift: np.ndarray
    kernel_density: np.ndarray
    reference_density: np.ndarray

    @property
    def cumulative_l1(self) -> float:
        return float(self.l1[-1])

    @property
    def cumulative_linf(self) -> float:
        return float(self.linf[-1])

    def to_dict(self) -> dict:
        return {
            "cumulative_l1": self.cumulative_l1,
            "cumulative_linf": self.cumulative_linf,
            "max_mass_drift": float(np.max(np.abs(self.mass_drift))),
            "times": [float(x) for x in self.times],
            "l1": [float(x) for x in self.l1],
            "linf": [float(x) for x in self.linf],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def kernel_vs_spectral(field: FlowField, lattice: Lattice, delta_t: float, n_steps: int,
                       order=Interpolation.LINEAR, density=None, n_p: int = 64,
                       p_max: float = 8.0) -> KernelComparison:
    """Step a density ``n_steps`` times with the kernel and compare with the
    q-marginal of the phase-space Liouville evolution at the same times.

    The marginal does not depend on the momentum profile, so a coarse p axis
    suffices for the reference.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    rho0 = standard_density(lattice) if density is None else np.asarray(density, dtype=float)
    k = build_transport_kernel(field, lattice, delta_t, order)
    phase = make_phase_lattice(lattice.n_points, n_p, p_max, lattice.period)
    times = delta_t * np.arange(1, n_steps + 1)
    ref = marginal_reference(field, phase, rho0, times)
    mass0 = quadrature(rho0, lattice)
    rho = rho0.copy()
    l1, linf, drift, hist = [], [], [], []
    for s in range(n_steps):
        rho = k.apply(rho)
        diff = np.abs(rho - ref[s])
        l1.append(float(quadrature(diff, lattice)))
        linf.append(float(np.max(diff)))
        drift.append(float(quadrature(rho, lattice) - mass0))
        hist.append(rho.copy())
    return KernelComparison(times, np.array(l1), np.array(linf), np.array(drift), np.array(hist), ref)
