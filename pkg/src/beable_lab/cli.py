"""Command-line runner: ``beable-lab <subcommand> <scenario> [--out DIR] [--override k=v ...]``.

Each subcommand writes ``<out>/<scenario name>/<subcommand>/`` containing
``result.json``, CSV tables and ``manifest.json``.  Exit status is 0 when
every tolerance gate passes, 1 when a gate fails and 2 on an error; in the
last two cases a JSON summary is also printed to stdout.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
import traceback
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .beable import ensemble_sample
from .emergent import (
    build_constraint,
    first_class_check,
    physical_energies,
    physical_subspace,
    split_hamiltonian,
    subspace_report,
)
from .kernel import Interpolation, build_transport_kernel, duality_error, kernel_vs_spectral, standard_density
from .kvn import BoundaryMassWarning, born_check, fourier_pair, marginal_reference
from .lattice import make_lattice, make_phase_lattice, quadrature
from .linalg import hermiticity_residual
from .operators import Ordering, build_hamiltonian, heisenberg_commutator_norm, spectrum
from .scenario import ScenarioError, parse_scenario

SUBCOMMANDS = ("spectrum", "split", "born-check", "kernel-compare", "ensemble")
HEISENBERG_T = 0.5
N_SWEEP = 9


class RunResult:
    """What one pipeline produces: a JSON payload, CSV tables and named gates."""

    def __init__(self):
        self.data: dict = {}
        self.tables: dict[str, tuple[list[str], list[list]]] = {}
        self.gates: dict[str, bool] = {}

    @property
    def passed(self) -> bool:
        return all(self.gates.values())


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def resolve_rho(scenario, h) -> float:
    """Numeric ``rho``; ``"eigenvalue:k"`` picks the k-th smallest positive eigenvalue of ``h``."""
    if not isinstance(scenario.rho, str):
        return float(scenario.rho)
    k = int(scenario.rho.partition(":")[2])
    w = np.sort(np.linalg.eigvalsh(0.5 * (h.matrix + h.matrix.conj().T)))
    positive = w[w > 1e-8 * np.max(np.abs(w))]
    if not 1 <= k <= positive.size:
        raise ScenarioError("emergent.rho", f"eigenvalue index {k} out of range 1..{positive.size}")
    return float(positive[k - 1])


# -- pipelines -----------------------------------------------------------------

def run_spectrum(sc) -> RunResult:
    out = RunResult()
    field = sc.make_field()
    lat = make_lattice(sc.n_q)
    h = build_hamiltonian(field, lat, Ordering.WEYL)
    w, _ = spectrum(h)
    herm = hermiticity_residual(h.matrix)
    out.data = {
        "n_q": sc.n_q,
        "ordering": "weyl",
        "hermiticity_residual": herm,
        "min_eigenvalue": float(w.real.min()),
        "max_eigenvalue": float(w.real.max()),
        "has_negative_eigenvalues": bool(np.any(w.real < -1e-9)),
        "heisenberg_t": HEISENBERG_T,
        "heisenberg_commutator_band": heisenberg_commutator_norm(h, lat.points, HEISENBERG_T),
        "heisenberg_commutator_full": heisenberg_commutator_norm(h, lat.points, HEISENBERG_T, band=None),
    }
    out.tables["eigenvalues.csv"] = (["index", "real", "imag"], [[i, z.real, z.imag] for i, z in enumerate(w)])
    out.gates = {"hermitian": herm <= 1e-8, "unbounded_below": out.data["has_negative_eigenvalues"]}
    return out


def run_split(sc) -> RunResult:
    out = RunResult()
    field = sc.make_field()
    lat = make_lattice(sc.n_q)
    h = build_hamiltonian(field, lat, Ordering.WEYL)
    rho = resolve_rho(sc, h)
    pair = split_hamiltonian(h, rho)
    ident = pair.identity_residual()
    mins = pair.min_eigenvalues()
    comms = pair.commutator_residuals()

    c = build_constraint(pair, sc.e_obs, sc.e_planck)
    sub = physical_subspace(c, sc.subspace_threshold)
    report = subspace_report(c, sub)
    energies = physical_energies(pair, sub)
    scale = pair.h_plus.norm()

    # dimension as the observer scale decreases from e_planck to e_obs
    scales = np.geomspace(sc.e_planck, sc.e_obs, N_SWEEP) if sc.e_obs < sc.e_planck else np.array([sc.e_planck])
    sweep = []
    for e in scales:
        ce = build_constraint(pair, float(e), sc.e_planck)
        sweep.append([float(e), ce.prefactor, physical_subspace(ce, sc.subspace_threshold).dimension])
    dims = [row[2] for row in sweep]

    phase = make_phase_lattice(sc.n_q, sc.n_p, sc.p_max)
    fc = first_class_check(pair, field, phase)

    out.data = {
        "rho": rho,
        "identity_residual": ident,
        "min_eigenvalue_h_plus": mins[0],
        "min_eigenvalue_h_minus": mins[1],
        "commutators": comms,
        "subspace": report,
        "energy_deviation_from_rho": float(np.max(np.abs(energies - rho))) if energies.size else None,
        "first_class": {"operator_residual": fc.operator_residual, "classical_residual": fc.classical_residual},
        "dimension_sweep": dims,
    }
    out.tables["dimension_sweep.csv"] = (["e_obs", "prefactor", "dimension"], sweep)
    out.tables["h_minus_eigenvalues.csv"] = (["index", "eigenvalue"], list(enumerate(report["eigenvalues_of_H_minus"])))
    out.gates = {
        "identity": ident <= 1e-10,
        "positivity": min(mins) >= -1e-8,
        "commutators": max(comms.values()) <= 1e-8,
        "dimension_monotone": all(a >= b for a, b in zip(dims, dims[1:])),
        "physical_energies_nonnegative": bool(np.all(energies >= -1e-8 * scale)),
        "first_class": fc.first_class,
    }
    if c.prefactor > 0 and energies.size:
        out.gates["physical_energies_equal_rho"] = out.data["energy_deviation_from_rho"] <= 1e-8
    return out


def run_born(sc) -> RunResult:
    out = RunResult()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundaryMassWarning)
        rep = born_check(sc)
    out.data = rep.to_dict()
    out.data["warnings"] = sorted({str(w.message) for w in caught})
    rows = [list(r) for r in zip(rep.times, rep.max_deviation, rep.norm_a, rep.norm_b, rep.mass_a, rep.mass_b)]
    out.tables["born.csv"] = (["t", "max_deviation", "norm_A", "norm_B", "mass_A", "mass_B"], rows)
    out.gates = {
        "born_deviation": rep.passed,
        "norm_A": bool(np.all(np.abs(rep.norm_a - 1) <= 1e-8)),
        "continuity": rep.continuity_residual <= 1e-4,
    }
    return out


def run_kernel(sc) -> RunResult:
    out = RunResult()
    field = sc.make_field()
    lat = make_lattice(sc.n_q)
    cmp = kernel_vs_spectral(field, lat, sc.kernel_delta_t, sc.kernel_steps, sc.kernel_order)
    k = build_transport_kernel(field, lat, sc.kernel_delta_t, sc.kernel_order)
    out.data = cmp.to_dict()
    out.data["order"] = Interpolation(sc.kernel_order).value
    out.data["delta_t"] = sc.kernel_delta_t
    out.data["duality_error"] = duality_error(k, fourier_pair(lat))
    out.tables["kernel_compare.csv"] = (
        ["step", "t", "l1", "linf", "mass_drift"],
        [[i + 1, t, a, b, d] for i, (t, a, b, d) in enumerate(zip(cmp.times, cmp.l1, cmp.linf, cmp.mass_drift))],
    )
    out.tables["density.csv"] = (
        ["q", "kernel", "reference"],
        [[q, a, b] for q, a, b in zip(lat.points, cmp.kernel_density[-1], cmp.reference_density[-1])],
    )
    out.gates = {"cumulative_l1": cmp.cumulative_l1 <= sc.kernel_l1}
    if Interpolation(sc.kernel_order) is Interpolation.LINEAR:
        out.gates["mass"] = bool(np.max(np.abs(cmp.mass_drift)) <= 1e-8 * sc.kernel_steps)
    return out


def run_ensemble(sc) -> RunResult:
    out = RunResult()
    field = sc.make_field()
    lat = make_lattice(sc.n_q)
    rho0 = standard_density(lat)
    t = sc.ensemble_t_final
    mc = ensemble_sample(field, rho0, lat, sc.ensemble_samples, t, sc.seed)
    ref = marginal_reference(field, make_phase_lattice(sc.n_q, 64, 8.0), rho0, [t])[0]
    n_steps = max(1, math.ceil(t / sc.kernel_delta_t - 1e-9)) if t > 0 else 1
    # the three-way comparison always uses the conservative Linear kernel;
    # Nearest is only meaningful on resonant steps
    k = build_transport_kernel(field, lat, t / n_steps, Interpolation.LINEAR)
    kern = rho0.copy()
    for _ in range(n_steps):
        kern = k.apply(kern)
    l1 = {
        "ensemble_vs_reference": float(quadrature(np.abs(mc - ref), lat)),
        "ensemble_vs_kernel": float(quadrature(np.abs(mc - kern), lat)),
        "kernel_vs_reference": float(quadrature(np.abs(kern - ref), lat)),
    }
    out.data = {"t_final": t, "n_samples": sc.ensemble_samples, "seed": sc.seed, "l1": l1}
    out.tables["ensemble.csv"] = (["q", "ensemble", "kernel", "reference"],
                                  [list(r) for r in zip(lat.points, mc, kern, ref)])
    out.gates = {key: val <= sc.ensemble_l1 for key, val in l1.items()}
    return out


PIPELINES = {
    "spectrum": run_spectrum,
    "split": run_split,
    "born-check": run_born,
    "kernel-compare": run_kernel,
    "ensemble": run_ensemble,
}


# -- artifacts -----------------------------------------------------------------

def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _manifest(sc, scenario_path: Path, subcommand: str, elapsed: float, threads) -> dict:
    return {
        "scenario": sc.name,
        "scenario_file": str(scenario_path),
        "scenario_file_sha256": hashlib.sha256(scenario_path.read_bytes()).hexdigest(),
        "scenario_resolved_sha256": sc.digest(),
        "subcommand": subcommand,
        "seed": sc.seed,
        "versions": {
            "beable_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "threads": {"requested": os.environ.get("BEABLE_LAB_THREADS") or None, "effective": threads,
                    "available_cores": _available_cores()},
        "elapsed_seconds": round(elapsed, 3),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def execute(subcommand: str, sc, scenario_path: Path, out_root: Path, threads=None) -> tuple[bool, dict]:
    """Run one pipeline and write its artifacts; returns (passed, summary)."""
    target = out_root / sc.name / subcommand
    target.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = PIPELINES[subcommand](sc)
    elapsed = time.perf_counter() - t0
    failed = sorted(k for k, ok in res.gates.items() if not ok)
    payload = {
        "scenario": sc.name,
        "subcommand": subcommand,
        "status": "pass" if not failed else "fail",
        "gates": res.gates,
        "failed_gates": failed,
        "result": res.data,
    }
    _write_json(target / "result.json", payload)
    for name, (header, rows) in res.tables.items():
        _write_csv(target / name, header, rows)
    _write_json(target / "manifest.json", _manifest(sc, scenario_path, subcommand, elapsed, threads))
    return not failed, {"status": payload["status"], "failed_gates": failed, "seconds": round(elapsed, 3)}


def _error_payload(exc: BaseException, subcommand: str, scenario: str) -> dict:
    return {
        "status": "error",
        "subcommand": subcommand,
        "scenario": scenario,
        "error_type": type(exc).__name__,
        "message": str(exc),
        "key": getattr(exc, "key", None),
    }


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="beable-lab", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS + ("all",))
    ap.add_argument("scenario", type=Path, help="scenario file (.toml or .json)")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output root (default: ./out)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="override a scenario entry, e.g. lattice.n_q=128 (repeatable)")
    return ap


def _threads():
    raw = os.environ.get("BEABLE_LAB_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ScenarioError("BEABLE_LAB_THREADS", f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ScenarioError("BEABLE_LAB_THREADS", f"expected a positive integer, got {raw!r}")
    # more BLAS threads than cores slows dense linear algebra by an order of magnitude
    return min(n, _available_cores())


def _available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    sc_name = str(args.scenario)
    try:
        threads = _threads()
        sc = parse_scenario(args.scenario, args.override)
        sc_name = sc.name
        subs = SUBCOMMANDS if args.subcommand == "all" else (args.subcommand,)
        summary = {}
        ok = True
        with threadpool_limits(limits=threads):
            for sub in subs:
                passed, info = execute(sub, sc, args.scenario, args.out, threads)
                summary[sub] = info
                ok = ok and passed
        if args.subcommand == "all":
            target = args.out / sc.name / "all"
            target.mkdir(parents=True, exist_ok=True)
            _write_json(target / "result.json", {
                "scenario": sc.name,
                "status": "pass" if ok else "fail",
                "subcommands": {k: {"status": v["status"], "failed_gates": v["failed_gates"]} for k, v in summary.items()},
            })
            _write_json(target / "manifest.json", _manifest(
                sc, args.scenario, "all", sum(v["seconds"] for v in summary.values()), threads))
        if not ok:
            print(json.dumps({"status": "fail", "scenario": sc.name, "subcommands": summary}, indent=2, sort_keys=True))
            return 1
        return 0
    except Exception as exc:  # every failure leaves structured output
        payload = _error_payload(exc, args.subcommand, sc_name)
        if os.environ.get("BEABLE_LAB_DEBUG"):
            payload["traceback"] = traceback.format_exc()
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 2


if __name__ == "__main__":
    sys.exit(main())
