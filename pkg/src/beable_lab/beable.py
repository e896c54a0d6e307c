"""Deterministic be-able dynamics: flow fields, RK4 trajectories, flow maps,
phase-space Poisson brackets and a Monte Carlo ensemble oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import erf

from .lattice import TWO_PI, Lattice, PhaseLattice, quadrature, spectral_derivative

DEFAULT_DT = 1e-3


class IntegrationError(RuntimeError):
    """Raised when a trajectory leaves the finite numbers."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class FlowField:
    """Velocity field ``f`` for ``dq/dt = f(q)`` plus an optional scalar ``g``.

    ``df`` is the analytic derivative of ``f``; when omitted a central
    difference is used.  ``g`` may be complex; its real part is the
    classical ``g`` that enters phase-space Hamiltonians.
    """

    f: Callable
    df: Optional[Callable] = None
    g: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    period: float = TWO_PI
    dimension: int = 1

    def velocity(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(np.asarray(self.f(q), dtype=float), q.shape).copy()

    def velocity_derivative(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.df is not None:
            return np.broadcast_to(np.asarray(self.df(q), dtype=float), q.shape).copy()
        h = 1e-6
        return (self.velocity(q + h) - self.velocity(q - h)) / (2 * h)

    def g_values(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.g is None:
            return np.zeros(q.shape, dtype=complex)
        return np.broadcast_to(np.asarray(self.g(q), dtype=complex), q.shape).copy()

    def classical_g(self, q) -> np.ndarray:
        return self.g_values(q).real

    def classical_g_derivative(self, q) -> np.ndarray:
        if self.g is None:
            return np.zeros(np.shape(q))
        h = 1e-6
        q = np.asarray(q, dtype=float)
        return (self.classical_g(q + h) - self.classical_g(q - h)) / (2 * h)

    def hamiltonian(self, p, q):
        """Classical ``H = p f(q) + Re g(q)``."""
        return np.asarray(p) * self.velocity(q) + self.classical_g(q)

    def validate(self, lattice: Lattice) -> None:
        if not math.isclose(lattice.period, self.period, rel_tol=1e-12):
            raise ValueError(
                f"field period {self.period} does not match lattice period {lattice.period}"
            )
        q = lattice.points
        v = self.velocity(q)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"field {self.name!r} is not finite on the lattice")
        if np.max(np.abs(self.velocity(q + self.period) - v)) > 1e-9 * (1 + np.max(np.abs(v))):
            raise ValueError(f"field {self.name!r} is not periodic with period {self.period}")
        if self.g is not None:
            g = self.g_values(q)
            if np.max(np.abs(self.g_values(q + self.period) - g)) > 1e-9 * (1 + np.max(np.abs(g))):
                raise ValueError(f"g of field {self.name!r} is not periodic")


# -- catalog -------------------------------------------------------------------

def uniform(omega: float = 1.0) -> FlowField:
    omega = float(omega)
    return FlowField(
        f=lambda q: np.full(np.shape(q), omega),
        df=lambda q: np.zeros(np.shape(q)),
        name="uniform",
        params={"omega": omega},
    )


def shifted_sine(a: float = 1.5, b: float = 1.0) -> FlowField:
    a, b = float(a), float(b)
    if not abs(b) < a:
        raise ValueError(f"shifted_sine needs |b| < a, got a={a}, b={b}")
    return FlowField(
        f=lambda q: a + b * np.sin(q),
        df=lambda q: b * np.cos(q),
        name="shifted_sine",
        params={"a": a, "b": b},
    )


def double_well_drift(a: float = 1.5, b: float = 0.5) -> FlowField:
    a, b = float(a), float(b)
    if not abs(b) < a:
        raise ValueError(f"double_well_drift needs |b| < a, got a={a}, b={b}")
    return FlowField(
        f=lambda q: a + b * np.sin(2 * q),
        df=lambda q: 2 * b * np.cos(2 * q),
        name="double_well_drift",
        params={"a": a, "b": b},
    )


CATALOG = {
    "uniform": uniform,
    "shifted_sine": shifted_sine,
    "double_well_drift": double_well_drift,
}


def make_field(name: str, **params) -> FlowField:
    try:
        builder = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown flow field {name!r}; known: {sorted(CATALOG)}") from None
    return builder(**params)


# -- integration ---------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    unwrapped_states: np.ndarray


def _rk4(field: FlowField, q0, t_final: float, dt: float, record: bool = False):
    q = np.array(q0, dtype=float, copy=True)
    n_steps = int(math.ceil(abs(t_final) / dt - 1e-9)) if t_final else 0
    h = t_final / n_steps if n_steps else 0.0
    path = [q.copy()] if record else None
    f = field.velocity
    for step in range(n_steps):
        k1 = f(q)
        k2 = f(q + 0.5 * h * k1)
        k3 = f(q + 0.5 * h * k2)
        k4 = f(q + h * k3)
        q = q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(q)):
            raise IntegrationError("non-finite state", (step + 1) * h)
        if record:
            path.append(q.copy())
    times = h * np.arange(n_steps + 1)
    return q, times, path


def integrate_trajectory(field: FlowField, q0: float, t_final: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Classic fixed-step RK4 for ``dq/dt = f(q)``.

    The step is shrunk to ``t_final / ceil(t_final / dt)`` so the last point
    lands on ``t_final``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    _, times, path = _rk4(field, float(q0), float(t_final), float(dt), record=True)
    unwrapped = np.array(path, dtype=float)
    states = np.mod(unwrapped, field.period)
    return Trajectory(times=times, states=states, unwrapped_states=unwrapped)


def flow_map(field: FlowField, q0, delta_t: float, dt: float = DEFAULT_DT, wrap: bool = True):
    """Endpoint ``F(q0, delta_t)`` of the flow; vectorised over ``q0``.

    Negative ``delta_t`` runs the autonomous flow backwards.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    q, _, _ = _rk4(field, q0, float(delta_t), float(dt))
    if wrap:
        q = np.mod(q, field.period)
    return float(q) if np.ndim(q) == 0 else q


# -- phase space ---------------------------------------------------------------

def _check_phase(a: np.ndarray, phase: PhaseLattice) -> np.ndarray:
    a = np.asarray(a)
    if a.shape != phase.shape:
        raise ValueError(f"array shape {a.shape} does not match phase lattice {phase.shape}")
    return a


def poisson_bracket(a, b, phase: PhaseLattice) -> np.ndarray:
    """``{A, B} = dA/dq dB/dp - dA/dp dB/dq`` with spectral derivatives.

    Arrays have shape ``(n_p, n_q)``; the result is real when both inputs are.
    """
    a = _check_phase(a, phase)
    b = _check_phase(b, phase)
    da_q = spectral_derivative(a, phase.q, axis=1)
    da_p = spectral_derivative(a, phase.p, axis=0)
    db_q = spectral_derivative(b, phase.q, axis=1)
    db_p = spectral_derivative(b, phase.p, axis=0)
    out = da_q * db_p - da_p * db_q
    if np.isrealobj(a) and np.isrealobj(b):
        return out.real
    return out


def momentum_window(phase: PhaseLattice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smooth periodic stand-in for the momentum coordinate.

    Returns ``(p_s, dp_s, band)`` sampled on the p axis: ``p_s = p * w(p)``
    with an erf window that is 1 on the interior band and vanishes (below
    1e-16) at the box edge, its analytic derivative, and the boolean band
    mask where ``p_s == p`` to machine precision.
    """
    p = phase.p.points
    p_max = phase.p_max
    edge = 0.3125 * p_max
    s = edge / 6.25
    c = p_max - edge
    w = 0.5 * (erf((p + c) / s) - erf((p - c) / s))
    dw = (np.exp(-(((p + c) / s) ** 2)) - np.exp(-(((p - c) / s) ** 2))) / (s * np.sqrt(np.pi))
    band = np.abs(p) <= c - edge
    return p * w, w + p * dw, band


def ensemble_sample(
    field: FlowField,
    density0,
    lattice: Lattice,
    n_samples: int,
    t_final: float,
    seed: int,
    dt: float = DEFAULT_DT,
) -> np.ndarray:
    """Monte Carlo push-forward of a lattice density.

    Initial points are drawn by inverse CDF over lattice cells (cell ``j``
    covers ``q_j +- dq/2``, uniform within the cell) with numpy's PCG64
    generator seeded by ``seed``.  Each point is carried by the RK4 flow map
    and binned to its nearest lattice site.
    """
    density0 = np.asarray(density0, dtype=float)
    if density0.shape != (lattice.n_points,):
        raise ValueError("density length does not match lattice")
    if np.any(density0 < 0):
        raise ValueError("density must be non-negative")
    mass = float(quadrature(density0, lattice))
    if mass <= 0:
        raise ValueError("density has zero total mass")
    if abs(mass - 1.0) > 1e-8:
        raise ValueError(f"density must integrate to 1, got {mass:.12g}")
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1000")

    rng = np.random.Generator(np.random.PCG64(seed))
    cdf = np.cumsum(density0 * lattice.spacing)
    cdf /= cdf[-1]
    u = rng.random(n_samples)
    site = np.minimum(np.searchsorted(cdf, u, side="right"), lattice.n_points - 1)
    jitter = rng.random(n_samples) - 0.5
    q0 = lattice.points[site] + jitter * lattice.spacing
    q = flow_map(field, q0, t_final, dt=dt, wrap=False)
    idx = np.rint((q - lattice.start) / lattice.spacing).astype(np.int64) % lattice.n_points
    counts = np.bincount(idx, minlength=lattice.n_points)
    return counts / (n_samples * lattice.spacing)
