"""Command-line driver: ``solve``, ``sweep`` and ``spectrum``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .assembly import (
    AssemblyError, PlaneWave, SourceSpec, flower_kappa0, load_medium, medium_preset,
)
from .kernels import KernelError
from .mesh import MeshError, disk_mesh, load_mesh
from .partition import (
    PartitionError, parse_skeleton_policy, partition_from_file, partition_grid, partition_pie,
)
from .solvers import DDMProblem, SolverConfig, solve, spectrum

SCHEMA_VERSION = 1

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "mesh", "partition", "n_sys", "config", "medium", "result"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "mesh": {
            "type": "object",
            "required": ["source", "n_vertices", "n_triangles", "n_edges"],
            "properties": {
                "n_vertices": {"type": "integer", "minimum": 1},
                "n_triangles": {"type": "integer", "minimum": 1},
                "n_edges": {"type": "integer", "minimum": 1},
            },
        },
        "partition": {
            "type": "object",
            "required": ["source", "J"],
            "properties": {"J": {"type": "integer", "minimum": 1}},
        },
        "n_sys": {"type": "integer", "minimum": 0},
        "config": {"type": "object"},
        "medium": {"type": "object", "required": ["name", "kappa"]},
        "result": {
            "type": "object",
            "required": ["iterations", "converged", "final_residual", "final_error", "pcg_iters_max"],
            "properties": {
                "iterations": {"type": "integer", "minimum": 0},
                "converged": {"type": "boolean"},
                "final_residual": {"type": "number"},
                "final_error": {"type": ["number", "null"]},
                "pcg_iters_max": {"type": "integer", "minimum": 0},
                "alpha_estimate": {"type": ["number", "null"]},
            },
        },
    },
}


class InputError(ValueError):
    pass


INPUT_ERRORS = (InputError, MeshError, PartitionError, AssemblyError, FileNotFoundError)


@dataclass
class RunSpec:
    mesh: str = "disk"
    radius: float = 1.0
    nlambda: float = 20.0
    kappa: float = 5.0
    partition: str = "pie:3"
    skeleton: str = "thin"
    inductance: str = "despres"
    interface_decouple: bool = False
    medium: str = "homogeneous"
    direction: tuple = (1.0, 0.0)
    threads: int = 1
    pcg_tol: float = 1e-12
    pcg_maxit: int = 500

    def validate(self):
        if self.nlambda < 5:
            raise InputError("--nlambda must be >= 5")
        if self.kappa <= 0:
            raise InputError("--kappa must be > 0")
        if self.radius <= 0:
            raise InputError("--radius must be > 0")
        if self.threads < 1:
            raise InputError("--threads must be >= 1")
        if self.mesh != "disk" and not Path(self.mesh).is_file():
            raise InputError(f"mesh file {self.mesh!r} not found")
        try:
            parse_skeleton_policy(self.skeleton)
        except PartitionError as exc:
            raise InputError(str(exc)) from exc
        if self.inductance not in ("despres", "schur", "schur-interface") and not self.inductance.startswith("scalar"):
            raise InputError(f"unknown inductance {self.inductance!r}")


def mesh_wavenumber(spec: RunSpec) -> float:
    """Wavenumber that sets the mesh size ``h = 2 pi / (k N_lambda)``.

    Flower media are meshed against the averaged medium ``kappa * kappa0``.
    """
    if spec.medium.startswith("flower"):
        return spec.kappa * flower_kappa0(disk_mesh(spec.radius, spec.radius / 40))
    return spec.kappa


def build_mesh_from_spec(spec: RunSpec, h=None):
    if spec.mesh == "disk":
        if h is None:
            h = 2 * math.pi / mesh_wavenumber(spec) / spec.nlambda
        return disk_mesh(spec.radius, h)
    return load_mesh(spec.mesh)


def build_partition(spec: RunSpec, mesh):
    kind, _, arg = spec.partition.partition(":")
    try:
        if kind == "pie":
            return partition_pie(mesh, int(arg))
        if kind == "grid":
            nx, _, ny = arg.lower().partition("x")
            return partition_grid(mesh, int(nx), int(ny or 1))
        if kind == "file":
            return partition_from_file(mesh, arg)
    except ValueError as exc:
        if isinstance(exc, PartitionError):
            raise
        raise InputError(f"bad partition {spec.partition!r}") from exc
    raise InputError(f"unknown partition {spec.partition!r}; use pie:J, grid:NxM or file:PATH")


def build_medium(spec: RunSpec, mesh):
    if spec.medium.endswith(".json"):
        return load_medium(spec.medium, mesh, spec.kappa)
    return medium_preset(spec.medium, mesh, spec.kappa)


def build_problem(spec: RunSpec, reference=True, mesh=None, partition=None):
    spec.validate()
    mesh = mesh if mesh is not None else build_mesh_from_spec(spec)
    partition = partition if partition is not None else build_partition(spec, mesh)
    medium = build_medium(spec, mesh)
    source = SourceSpec(plane_wave=PlaneWave(tuple(spec.direction)))
    return DDMProblem(
        mesh, partition, medium, source, spec.skeleton, spec.inductance,
        spec.interface_decouple, pcg_tol=spec.pcg_tol, pcg_maxit=spec.pcg_maxit,
        threads=spec.threads, reference=reference,
    )


# ------------------------------------------------------------------ outputs


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def history_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "residual", "error", "pcg_iters"])
    n = len(report.residual_history)
    for k in range(n):
        err = report.error_history[k] if k < len(report.error_history) else None
        pcg = report.pcg_history[k] if k < len(report.pcg_history) else 0
        w.writerow([k, _num(report.residual_history[k]), _num(err), int(pcg)])
    return buf.getvalue()


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


def make_report(spec: RunSpec, problem, config: SolverConfig, report) -> dict:
    mesh = problem.mesh
    doc = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "mesh": {
            "source": spec.mesh,
            "radius": spec.radius if spec.mesh == "disk" else None,
            "nlambda": spec.nlambda if spec.mesh == "disk" else None,
            "n_vertices": mesh.n_vertices,
            "n_triangles": mesh.n_triangles,
            "n_edges": mesh.n_edges,
        },
        "partition": {"source": spec.partition, "J": problem.J},
        "skeleton": {"policy": spec.skeleton, "n_gamma": int(len(problem.skeleton.gamma))},
        "n_sys": int(problem.n_sys),
        "config": {
            "method": config.method,
            "damping": config.damping,
            "restart": config.restart,
            "tol": config.tol,
            "max_iters": config.max_iters,
            "criterion": config.criterion,
            "inductance": spec.inductance,
            "interface_decouple": spec.interface_decouple,
            "threads": spec.threads,
            "pcg_tol": spec.pcg_tol,
        },
        "medium": {"name": problem.medium.name, "kappa": float(problem.medium.kappa),
                   **{k: float(v) for k, v in problem.medium.meta.items()}},
        "result": {
            "iterations": int(report.iterations),
            "converged": bool(report.converged),
            "final_residual": float(report.residual_history[-1]),
            "final_error": _finite_or_none(report.final_error),
            "pcg_iters_max": int(report.pcg_iters_max),
            "alpha_estimate": _finite_or_none(report.alpha_estimate),
            "wall_time": report.wall_time,
            "note": report.note,
        },
    }
    jsonschema.validate(doc, REPORT_SCHEMA)
    return doc


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- commands


def spec_from_args(args) -> RunSpec:
    return RunSpec(
        mesh=args.mesh, radius=args.radius, nlambda=args.nlambda, kappa=args.kappa,
        partition=args.partition, skeleton=args.skeleton, inductance=args.inductance,
        interface_decouple=args.interface_decouple, medium=args.medium,
        direction=tuple(args.direction), threads=args.threads, pcg_tol=args.pcg_tol,
    )


def config_from_args(args) -> SolverConfig:
    try:
        return SolverConfig(
            method=args.solver, damping=args.damping, restart=args.restart, tol=args.tol,
            max_iters=args.max_iters, criterion=args.criterion, reference=not args.no_reference,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_solve(args) -> int:
    spec = spec_from_args(args)
    config = config_from_args(args)
    problem = build_problem(spec, reference=config.reference)
    p, report = solve(problem, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(history_csv(report))
    _write_json(out / "report.json", make_report(spec, problem, config, report))
    if args.save_solution:
        from .solvers import recover_volume
        _, u = recover_volume(problem, p)
        _write_json(out / "solution.json", {"n_edges": int(len(u)), "real": u.real.tolist(), "imag": u.imag.tolist()})
    r = report
    err = "n/a" if r.final_error is None else f"{r.final_error:.3e}"
    print(f"{'converged' if r.converged else 'not converged'} after {r.iterations} iterations; "
          f"residual {r.residual_history[-1]:.3e}, error {err}")
    return 0 if report.converged else 2


def _parse_values(text, cast):
    try:
        vals = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad sweep values {text!r}") from exc
    if not vals:
        raise InputError("empty sweep values")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise InputError("sweep values must be strictly increasing")
    return vals


def sweep_runs(spec: RunSpec, axis: str, values):
    """Yield ``(value, spec, h)`` per sweep point; ``h=None`` means the spec default."""
    k_mesh = mesh_wavenumber(spec)
    for v in values:
        s = RunSpec(**vars(spec))
        h = None
        if axis == "nlambda":
            s.nlambda = float(v)
        elif axis == "kappa":
            # hold kappa^3 h^2 fixed at its value for the base run
            h0 = 2 * math.pi / k_mesh / spec.nlambda
            s.kappa = float(v)
            h = h0 * (spec.kappa / s.kappa) ** 1.5
        elif axis == "subdomains":
            s.partition = f"pie:{int(v)}"
            s.radius = spec.radius * math.sqrt(int(v))
            h = 2 * math.pi / k_mesh / spec.nlambda
        else:
            raise InputError(f"unknown sweep axis {axis!r}")
        yield v, s, h


def cmd_sweep(args) -> int:
    spec = spec_from_args(args)
    config = config_from_args(args)
    values = _parse_values(args.values, int if args.axis == "subdomains" else float)
    spec.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    all_ok = True
    for v, s, h in sweep_runs(spec, args.axis, values):
        row = {"value": v}
        pcg_max = 0
        try:
            mesh = build_mesh_from_spec(s, h)
            part = build_partition(s, mesh)
        except INPUT_ERRORS as exc:
            print(f"{args.axis}={v}: {exc}", file=sys.stderr)
            mesh = None
        for kind in ("despres", "schur"):
            key = f"iters_{kind}"
            if mesh is None:
                row[key] = float("nan")
                all_ok = False
                continue
            try:
                s.inductance = kind
                problem = build_problem(s, reference=config.reference, mesh=mesh, partition=part)
                _, rep = solve(problem, config)
                row[key] = rep.iterations if rep.converged else float("nan")
                all_ok &= rep.converged
                pcg_max = max(pcg_max, rep.pcg_iters_max)
            except (*INPUT_ERRORS, KernelError, ValueError) as exc:
                print(f"{args.axis}={v} {kind}: {exc}", file=sys.stderr)
                row[key] = float("nan")
                all_ok = False
        row["pcg_max"] = pcg_max
        rows.append(row)
        print(f"{args.axis}={v}: despres {row['iters_despres']}, schur {row['iters_schur']}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "iters_despres", "iters_schur", "pcg_max"])
    for r in rows:
        w.writerow([r["value"], *(_int_or_nan(r[k]) for k in ("iters_despres", "iters_schur")), r["pcg_max"]])
    (out / "sweep.csv").write_text(buf.getvalue())
    return 0 if all_ok else 2


def _int_or_nan(x):
    return "nan" if isinstance(x, float) and math.isnan(x) else int(x)


def cmd_spectrum(args) -> int:
    spec = spec_from_args(args)
    problem = build_problem(spec, reference=False)
    try:
        lam, alpha = spectrum(problem, "id+pis")
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["re", "im"])
    for z in lam:
        w.writerow([repr(float(z.real)), repr(float(z.imag))])
    (out / "spectrum.csv").write_text(buf.getvalue())
    summary = {
        "n_sys": int(problem.n_sys),
        "J": problem.J,
        "inductance": spec.inductance,
        "min_abs": float(np.min(np.abs(lam))) if len(lam) else None,
        "max_abs_one_minus": float(np.max(np.abs(1 - lam))) if len(lam) else None,
        "alpha_estimate": _finite_or_none(alpha),
    }
    _write_json(out / "summary.json", summary)
    print(f"n_sys {summary['n_sys']}: min|l| {summary['min_abs']}, max|1-l| {summary['max_abs_one_minus']}, "
          f"alpha {summary['alpha_estimate']}")
    return 0


# ------------------------------------------------------------------- parser


def _add_common(p):
    p.add_argument("--mesh", default="disk", help="'disk' or a .json/.msh mesh file")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--nlambda", type=float, default=20.0, help="points per wavelength for the disk mesh")
    p.add_argument("--kappa", type=float, default=5.0)
    p.add_argument("--partition", default="pie:3", help="pie:J, grid:NxM or file:PATH")
    p.add_argument("--skeleton", default="thin", help="thin, layers:k, with-boundary or layers:k+boundary")
    p.add_argument("--inductance", default="despres", help="despres, schur, schur-interface or scalar:a")
    p.add_argument("--interface-decouple", action="store_true")
    p.add_argument("--medium", default="homogeneous",
                   help="homogeneous, flower-heterogeneous, flower-dissipative, flower-averaged or a .json file")
    p.add_argument("--direction", type=float, nargs=2, default=(1.0, 0.0), metavar=("DX", "DY"))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--pcg-tol", type=float, default=1e-12)
    p.add_argument("--out", default="out")


def _add_solver(p):
    p.add_argument("--solver", choices=("gmres", "richardson"), default="gmres")
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--restart", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--criterion", choices=("residual", "error"), default="residual")
    p.add_argument("--no-reference", action="store_true", help="skip the direct reference solve")


def make_parser():
    parser = argparse.ArgumentParser(prog="skeleton-ddm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    ps = sub.add_parser("solve", help="solve one configuration")
    _add_common(ps)
    _add_solver(ps)
    ps.add_argument("--save-solution", action="store_true")
    ps.set_defaults(func=cmd_solve)
    pw = sub.add_parser("sweep", help="iteration counts over a parameter range")
    _add_common(pw)
    _add_solver(pw)
    pw.add_argument("--axis", choices=("nlambda", "kappa", "subdomains"), required=True)
    pw.add_argument("--values", required=True, help="comma-separated, increasing")
    pw.set_defaults(func=cmd_sweep)
    pe = sub.add_parser("spectrum", help="eigenvalues of the skeleton operator")
    _add_common(pe)
    pe.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
