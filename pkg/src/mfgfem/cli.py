"""Command line entry points: mesh audits, solves, studies, verification.

Exit codes: 0 success, 2 validation or audit failure, 3 I/O failure,
4 solver non-convergence.  All randomized property trials honour ``--seed``;
numbers are printed with 7 significant digits.  ``MFG_THREADS`` caps the
worker threads of a convergence study (0 = auto, unset = serial).
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .assembly import (
    assemble_consistent_mass,
    assemble_stiffness,
    build_fespace,
    build_stabilization,
    default_weights,
    dump_operator,
    lumped_norm,
)
from .hamiltonian import TransportField
from .mesh import (
    MeshIOError,
    audit,
    generate_uniform_unit_square,
    load_mesh,
)
from .problem import manufactured, trivial_problem
from .solver import (
    NonConvergenceError,
    SolverOptions,
    residual_audit,
    solve,
)
from .timestepping import SpaceTimeField, TimeGrid, ibp_defect, kfp_forward

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NONCONVERGENCE = 4

CSV_COLUMNS = (
    "level,n,h,tau,Nk,outer_iters,"
    "rel_u_L2H1,rel_b_L2L2,rel_m_L2L2,rel_m_L2H1,rel_u0_L2,rel_mT_L2"
)


def _fmt(x: float) -> str:
    return f"{float(x):.7g}"


@dataclass
class StudyConfig:
    """A convergence study over dyadic levels k (mesh n = 2**k)."""

    problem: str = "manufactured"
    levels: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    c_w: float = 1.0
    output: str | None = None

    def __post_init__(self):
        if not self.levels:
            raise ValueError("levels must be nonempty")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly ascending")


def level_grid(n: int, horizon: float = 1.0) -> TimeGrid:
    """Default time grid: tau = h / ((1 + 1/n) sqrt 2) = 1 / (n + 1) for T = 1."""
    return TimeGrid(horizon, int(round(horizon * (n + 1))))


def _problem(name: str):
    if name == "manufactured":
        spec, case = manufactured()
        return spec, case
    if name == "trivial":
        return trivial_problem(), None
    raise ValueError(f"unknown problem {name!r}")


def _solver_options(args) -> SolverOptions:
    return SolverOptions(
        tol_fp=args.tol_fp,
        max_outer=args.max_outer,
        relaxation=args.relax,
        tol_picard=args.tol_picard,
        max_picard=args.max_picard,
        lin_tol=args.lin_tol,
        c_w=args.cw,
    )


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol-fp", type=float, default=1e-9)
    p.add_argument("--max-outer", type=int, default=200)
    p.add_argument("--relax", type=float, default=1.0)
    p.add_argument("--tol-picard", type=float, default=1e-11)
    p.add_argument("--max-picard", type=int, default=100)
    p.add_argument("--lin-tol", type=float, default=1e-12)
    p.add_argument("--cw", type=float, default=1.0, help="stabilization weight factor")


# ----------------------------------------------------------------------


def cmd_mesh_check(args) -> int:
    try:
        if args.file is not None:
            mesh = load_mesh(args.file)
        else:
            mesh = generate_uniform_unit_square(args.uniform)
    except MeshIOError as exc:
        print(f"error: {exc}")
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}")
        return EXIT_VALIDATION
    rep = audit(mesh)
    verdict = "pass" if rep.xz_pass else "FAIL"
    print(f"cotangent audit: {verdict}")
    print(f"worst_edge_cot_sum: {_fmt(rep.worst_edge_cot_sum)}")
    print(f"shape_regularity_delta: {_fmt(rep.shape_regularity_delta)}")
    print(f"max_h: {_fmt(rep.max_h)}")
    return EXIT_OK if rep.xz_pass else EXIT_VALIDATION


def _run_level(problem_name: str, k: int, opts: SolverOptions):
    spec, case = _problem(problem_name)
    n = 2**k
    mesh = generate_uniform_unit_square(n)
    grid = level_grid(n, spec.horizon)
    sol = solve(spec, mesh, grid, opts=opts)
    if case is None:
        report = None
    else:
        report = analysis.error_norms(sol, case, sol.fes, grid)
    return sol, report


def cmd_solve(args) -> int:
    try:
        opts = _solver_options(args)
        k = args.level
        n = args.n if args.n is not None else 2**k
        spec, case = _problem(args.problem)
        mesh = generate_uniform_unit_square(n)
        grid = level_grid(n, spec.horizon)
        sol = solve(spec, mesh, grid, opts=opts)
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}")
        return EXIT_NONCONVERGENCE
    except ValueError as exc:
        print(f"error: {exc}")
        return EXIT_VALIDATION

    aud = residual_audit(sol, spec, sol.fes, grid)
    print(f"outer_iterations: {sol.outer_iterations}")
    print(f"final_residual: {_fmt(sol.residual_history[-1])}")
    print(f"kfp_residual: {_fmt(aud.kfp_residual_max)}")
    print(f"hjb_residual: {_fmt(aud.hjb_residual_max)}")
    print(f"min_m: {_fmt(aud.min_density)}")
    print(f"subgradient_slack: {_fmt(aud.subgradient_worst_slack)}")
    if case is not None:
        rep = analysis.error_norms(sol, case, sol.fes, grid)
        row = ",".join(_fmt(v) for v in rep.values())
        print(f"errors[{','.join(ErrorColumns())}]: {row}")
    else:
        # the all-zero problem has the zero pair as its exact solution
        du = max(lumped_norm(sol.fes, s) for s in sol.u.slabs)
        dm = max(lumped_norm(sol.fes, s) for s in sol.m.slabs)
        print(f"errors[u,m]: {_fmt(du)},{_fmt(dm)}")
    if args.dump_ops is not None:
        os.makedirs(args.dump_ops, exist_ok=True)
        stiff = assemble_stiffness(sol.fes, sol.stab.A)
        dump_operator(stiff, os.path.join(args.dump_ops, "diffusion.txt"))
        dump_operator(
            assemble_consistent_mass(sol.fes),
            os.path.join(args.dump_ops, "mass.txt"),
        )
    return EXIT_OK


def ErrorColumns():
    return analysis.ErrorReport.COLUMNS


def cmd_converge(args) -> int:
    try:
        if args.levels:
            levels = _parse_levels(args.levels)
        else:
            levels = list(range(1, 9)) if args.deep else list(range(1, 7))
        config = StudyConfig(
            problem=args.problem, levels=levels, c_w=args.cw, output=args.output
        )
    except ValueError as exc:
        print(f"error: {exc}")
        return EXIT_VALIDATION

    opts = _solver_options(args)
    workers = _worker_count(len(config.levels))

    def one(k):
        return _run_level(config.problem, k, opts)

    results: dict[int, tuple] = {}
    failures: dict[int, Exception] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {k: pool.submit(one, k) for k in config.levels}
        for k, fut in futs.items():
            try:
                results[k] = fut.result()
            except (NonConvergenceError, ValueError) as exc:
                failures[k] = exc
    else:
        for k in config.levels:
            try:
                results[k] = one(k)
            except (NonConvergenceError, ValueError) as exc:
                failures[k] = exc

    lines = [CSV_COLUMNS]
    reports = []
    done_levels = []
    for k in config.levels:
        if k not in results:
            continue
        sol, rep = results[k]
        reports.append(rep)
        done_levels.append(k)
        lines.append(
            f"{k},{rep.n},{_fmt(rep.h)},{_fmt(rep.tau)},{rep.num_slabs},"
            f"{sol.outer_iterations}," + ",".join(_fmt(v) for v in rep.values())
        )
    if len(reports) >= 2:
        rates = analysis.eoc(reports)
        for i in range(len(reports) - 1):
            vals = ",".join(
                _fmt(rates[c][i]) for c in analysis.ErrorReport.COLUMNS
            )
            lines.append(f"eoc_{done_levels[i]}_{done_levels[i + 1]},,,,,,{vals}")

    text = "\n".join(lines) + "\n"
    if config.output:
        try:
            with open(config.output, "w", encoding="ascii") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"error: {exc}")
            return EXIT_IO
    else:
        sys.stdout.write(text)

    for k, exc in sorted(failures.items()):
        print(f"level {k} failed: {exc}", file=sys.stderr)
    return EXIT_NONCONVERGENCE if failures else EXIT_OK


def _parse_levels(text: str) -> list[int]:
    levels: list[int] = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            levels.extend(range(int(lo), int(hi) + 1))
        else:
            levels.append(int(part))
    return levels


def _worker_count(njobs: int) -> int:
    env = os.environ.get("MFG_THREADS")
    if env is None:
        return 1
    workers = int(env)
    if workers == 0:
        workers = os.cpu_count() or 1
    return max(1, min(workers, njobs))


# ----------------------------------------------------------------------
# verification suite


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    n, nslabs = args.n, args.slabs
    checks: list[tuple[str, bool, str]] = []

    spec, case = manufactured()
    mesh = generate_uniform_unit_square(n)
    grid = TimeGrid(1.0, nslabs)
    fes = build_fespace(mesh)

    # stabilization weight precondition
    try:
        weights = default_weights(mesh, spec.hamiltonian.lipschitz, args.break_weights)
        detail = f"c_w={args.break_weights:g} admissible"
        ok = True
    except ValueError as exc:
        weights = None
        detail = str(exc)
        ok = False
    checks.append(("weight-precondition", ok, detail))
    if weights is None:
        _report(checks)
        return EXIT_VALIDATION
    stab = build_stabilization(mesh, weights, spec.nu)

    # residual gate of the closed-form data
    pts = rng.uniform(0.05, 0.95, size=(1000, 3))
    r1 = case.hjb_residual(pts[:, 0], pts[:, 1], pts[:, 2])
    keep = np.hypot(
        case.u_x(pts[:, 0], pts[:, 1], pts[:, 2]),
        case.u_y(pts[:, 0], pts[:, 1], pts[:, 2]),
    ) > 1e-2
    r2 = case.kfp_residual(pts[keep, 0], pts[keep, 1], pts[keep, 2])
    res = max(np.abs(r1).max(), np.abs(r2).max())
    checks.append(("data-residuals", res < 1e-10, f"max |r| = {_fmt(res)}"))

    gpts = rng.uniform(1e-3, 1.0 - 1e-3, size=(10000, 3))
    gmin = case.g_source(gpts[:, 0], gpts[:, 1], gpts[:, 2]).min()
    checks.append(("source-nonnegative", gmin >= -1e-12, f"min G = {_fmt(gmin)}"))

    # lumped norm dominates the L2 norm
    mass = assemble_consistent_mass(fes).matrix
    ok, worst = True, 0.0
    for _ in range(100):
        v = rng.standard_normal(fes.ndof)
        l2 = float(np.sqrt(v @ (mass @ v)))
        lump = lumped_norm(fes, v)
        worst = max(worst, l2 - lump)
        ok = ok and l2 <= lump
    checks.append(("lumped-dominates-L2", ok, f"worst defect {_fmt(worst)}"))

    # discrete integration by parts
    worst = 0.0
    for _ in range(50):
        v = SpaceTimeField(
            rng.standard_normal((nslabs, fes.ndof)), "forward",
            rng.standard_normal(fes.ndof),
        )
        w = SpaceTimeField(
            rng.standard_normal((nslabs, fes.ndof)), "backward",
            rng.standard_normal(fes.ndof),
        )
        worst = max(worst, ibp_defect(fes, grid, v, w))
    checks.append(("integration-by-parts", worst <= 1e-12, f"worst defect {_fmt(worst)}"))

    # stabilization off-diagonal identity
    defect = stabilization_offdiag_defect(mesh, weights)
    checks.append(("stabilization-offdiag", defect <= 1e-12, f"max defect {_fmt(defect)}"))

    # randomized positivity of the forward solver
    neg = dmp_trials(rng, trials=20)
    checks.append(("dmp-positivity", neg >= -1e-12, f"min value {_fmt(neg)}"))

    # weighted-norm identities
    ctx = analysis.WeightedNormContext(fes, stab, grid, spec.hamiltonian.lipschitz)
    gap_max, slack_min = 0.0, np.inf
    for _ in range(100):
        fld = SpaceTimeField(
            rng.standard_normal((nslabs, fes.ndof)), "forward",
            rng.standard_normal(fes.ndof),
        )
        _, _, gap = ctx.infsup_check(fld)
        gap_max = max(gap_max, gap)
        slack_min = min(slack_min, ctx.tech_slack(fld))
    checks.append(("inf-sup-identity", gap_max <= 1e-10, f"max gap {_fmt(gap_max)}"))
    checks.append(("weighted-L2-bound", slack_min >= -1e-10, f"min slack {_fmt(slack_min)}"))

    # a small coupled solve: certificate and equation residuals
    sol = solve(spec, mesh, level_grid(n), opts=SolverOptions())
    aud = residual_audit(sol, spec, sol.fes, sol.grid)
    checks.append((
        "subgradient-certificate",
        aud.subgradient_worst_slack >= -1e-10,
        f"worst slack {_fmt(aud.subgradient_worst_slack)}",
    ))
    resid = max(aud.kfp_residual_max, aud.hjb_residual_max)
    checks.append(("slab-residuals", resid <= 1e-8, f"max residual {_fmt(resid)}"))
    checks.append(("density-positivity", aud.min_density >= -1e-12,
                   f"min m {_fmt(aud.min_density)}"))

    _report(checks)
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_VALIDATION


def stabilization_offdiag_defect(mesh, weights) -> float:
    """Assembled stabilization entries vs the closed edge formula."""
    from .assembly import assemble_stiffness as _stiff

    fes = build_fespace(mesh, quadrature_degree=2)
    stab = build_stabilization(mesh, weights, nu=0.0)
    full = _stiff(fes, stab.D, include_boundary=True).matrix.tocsr()
    worst = 0.0
    for e in range(mesh.num_edges):
        i, j = mesh.edges[e]
        adj = mesh.edge_tris[e]
        area = mesh.tri_area[adj[adj >= 0]].sum()
        expected = -weights[e] / mesh.edge_length[e] ** 2 * area
        worst = max(worst, abs(full[i, j] - expected))
    return worst


def dmp_trials(rng, trials: int = 20, lipschitz: float = 1.0) -> float:
    """Forward solves with nonnegative data on random uniform meshes.

    Returns the most negative value over all slabs and trials (theoretically
    nonnegative by the M-matrix structure).
    """
    worst = np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        mesh = generate_uniform_unit_square(n)
        fes = build_fespace(mesh, quadrature_degree=2)
        weights = default_weights(mesh, lipschitz, 1.0)
        stab = build_stabilization(mesh, weights, nu=1.0)
        grid = TimeGrid(1.0, int(rng.integers(3, 8)))
        ang = rng.uniform(0, 2 * np.pi, size=(grid.num_slabs, mesh.num_triangles))
        mag = rng.uniform(0, lipschitz, size=ang.shape)
        b = TransportField(
            np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=-1), lipschitz
        )
        loads = rng.uniform(0.0, 1.0, size=(grid.num_slabs, fes.ndof))
        m0 = rng.uniform(0.0, 1.0, size=fes.ndof)
        fld = kfp_forward(fes, stab, grid, b, loads, m0)
        worst = min(worst, float(fld.slabs.min()))
    return worst


def _report(checks) -> None:
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")


# ----------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgfem",
        description="Monotone FEM solver for coupled value/density systems",
    )
    parser.add_argument("--config", help="flat key=value option file")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh-check", help="audit a mesh")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--uniform", type=int, help="uniform unit-square mesh with n subdivisions")
    g.add_argument("--file", help="mesh file to audit")
    p.set_defaults(func=cmd_mesh_check)

    p = sub.add_parser("solve", help="single coupled solve")
    p.add_argument("--problem", default="manufactured",
                   choices=["manufactured", "trivial"])
    p.add_argument("--level", type=int, default=1, help="dyadic level k (mesh n = 2^k)")
    p.add_argument("--n", type=int, default=None, help="mesh subdivisions (overrides --level)")
    p.add_argument("--dump-ops", default=None, help="directory for operator dumps")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("converge", help="convergence study with CSV output")
    p.add_argument("--problem", default="manufactured", choices=["manufactured"])
    p.add_argument("--levels", default=None, help="levels, e.g. 1-5 or 1,2,4")
    p.add_argument("--deep", action="store_true", help="extend default levels to 8")
    p.add_argument("--output", default=None, help="CSV path (default stdout)")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("verify", help="run the discrete property suite")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--slabs", type=int, default=5)
    p.add_argument("--break-weights", type=float, default=1.0,
                   help="weight factor handed to the precondition check")
    p.set_defaults(func=cmd_verify)
    return parser


def _apply_config(parser, argv):
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, encoding="ascii") as fh:
            pairs = dict(
                line.strip().split("=", 1)
                for line in fh
                if line.strip() and not line.startswith("#")
            )
    except OSError as exc:
        raise MeshIOError(f"cannot read config {known.config}: {exc}") from exc
    converted = {}
    for key, raw in pairs.items():
        dest = key.strip().replace("-", "_")
        raw = raw.strip()
        if raw.lower() in ("true", "false"):
            converted[dest] = raw.lower() == "true"
        else:
            try:
                converted[dest] = int(raw)
            except ValueError:
                try:
                    converted[dest] = float(raw)
                except ValueError:
                    converted[dest] = raw
    parser.set_defaults(**converted)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        _apply_config(parser, argv)
    except MeshIOError as exc:
        print(f"error: {exc}")
        return EXIT_IO
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
