"""Command-line front end: solve, verify, benchmark, export-mps, analytic.

Configuration comes from defaults, then an optional JSON file, then flags.
Every command prints one JSON document on stdout; failures print
``{"error": {...}}`` and exit 2 for configuration errors, 1 otherwise.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    MV_REVENUE,
    OneDimProblem,
    full_surplus,
    ironed_virtual,
    manelli_vincent,
    myerson_revenue,
    selling_separately,
    separate_sale_infeasible,
    virtual_value,
)
from .duality import certify_gap, check_certificate, extract_certificate, read_certificate_json, reconstruct_phi
from .grid import DEFAULT_MAX_CELLS, DensitySpec, build_grid
from .ic_engine import local_pairs, irreducible_pairs, all_pairs, solve_full, solve_iterative
from .lp_core import SolverOptions, assemble, export_mps, read_solution_json, solution_to_json
from .majorization import MODES, build_partition
from .mechanism import allocation_matrix_csv, check_majorization, extended_revenue, reduced_form

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
IC_MODES = ("full", "irreducible", "local_iterative")
OUTDIR_ENV = "OPTAUCTION_OUTDIR"


class ConfigError(ValueError):
    pass


@dataclass
class SolveConfig:
    B: int = 2
    I: int = 2
    n: int = 20
    M: int | None = None  # 1 when B = 1, else 50
    density: dict = field(default_factory=lambda: {"kind": "uniform"})
    partition: str = "exact"
    ic: str = "local_iterative"
    c: float = 2.5
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    tol_ic: float = 1e-8
    method: str = "ipm"
    max_rounds: int = 100
    max_cells: int = DEFAULT_MAX_CELLS
    outdir: str | None = None
    seed: int = 0

    def resolved(self) -> "SolveConfig":
        d = asdict(self)
        if d["M"] is None:
            d["M"] = 1 if self.B == 1 else 50
        if d["outdir"] is None:
            d["outdir"] = os.environ.get(OUTDIR_ENV, "optauction_out")
        out = SolveConfig(**d)
        out.validate()
        return out

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("B", "I", "n", "M", "max_rounds", "max_cells", "seed"):
            v = getattr(self, name)
            need(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer")
        need(self.B >= 1, "B must be >= 1")
        need(self.I in (1, 2, 3), "I must be 1, 2 or 3")
        need(self.n >= 1, "n must be >= 1")
        need(self.M >= 1, "M must be >= 1")
        need(not (self.B == 1 and self.M > 1), "B = 1 needs M = 1 (eta is a single atom)")
        need(self.partition in MODES, f"partition must be one of {MODES}")
        need(self.ic in IC_MODES, f"ic must be one of {IC_MODES}")
        need(self.method in ("simplex", "ipm"), "method must be simplex or ipm")
        need(self.c >= 1, "c must be >= 1")
        for name in ("feas_tol", "opt_tol", "tol_ic"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and v > 0 and math.isfinite(v), f"{name} must be positive")
        need(isinstance(self.density, dict), "density must be a JSON object")
        try:
            DensitySpec.from_dict(self.density, self.I)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"density: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("outdir")
        return d

    @classmethod
    def from_sources(cls, file_path=None, overrides: dict | None = None) -> "SolveConfig":
        data = {}
        if file_path:
            try:
                with open(file_path) as fh:
                    data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{file_path}: line {exc.lineno}: {exc.msg}") from exc
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**data).resolved()

    def solver_options(self) -> SolverOptions:
        return SolverOptions(feas_tol=self.feas_tol, opt_tol=self.opt_tol, method=self.method, seed=self.seed)


@dataclass
class SolveResult:
    config: SolveConfig
    grid: object
    partition: object
    primal: object
    dual: object
    plan: object
    certificate: object = None
    gap: object = None
    report: object = None
    majorization_violation: float = float("nan")

    @property
    def per_bidder_objective(self) -> float:
        return self.primal.objective

    @property
    def total_revenue(self) -> float:
        return self.config.B * self.primal.objective


def run_solve(cfg: SolveConfig) -> SolveResult:
    """Grid, partition, LP with the chosen ic handling, certificate and checks."""
    density = DensitySpec.from_dict(cfg.density, cfg.I)
    grid = build_grid(cfg.n, density, cfg.max_cells)
    partition = build_partition(cfg.B, cfg.M, cfg.partition)
    opts = cfg.solver_options()
    if cfg.ic == "local_iterative":
        primal, dual, plan = solve_iterative(grid, partition, cfg.c, opts, tol_ic=cfg.tol_ic,
                                             max_rounds=cfg.max_rounds)
    else:
        primal, dual, plan = solve_full(grid, partition, cfg.ic, opts)
    res = SolveResult(cfg, grid, partition, primal, dual, plan)
    if primal.status != "optimal":
        return res
    res.certificate = extract_certificate(dual, grid, partition)
    res.gap = certify_gap(primal.objective, res.certificate, partition)
    res.report = check_certificate(primal, res.certificate, grid, partition)
    res.majorization_violation = check_majorization(reduced_form(primal, grid, cfg.B), partition)
    return res


def benchmarks(density: DensitySpec, B: int) -> dict:
    try:
        return {"selling_separately": selling_separately(density, B), "full_surplus": full_surplus(density, B)}
    except ValueError as exc:
        return {"selling_separately": None, "full_surplus": None, "note": str(exc)}


def summary(res: SolveResult) -> dict:
    cfg = res.config
    out = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "status": res.primal.status,
        "per_bidder_objective": res.per_bidder_objective,
        "total_revenue": res.total_revenue,
        "revenue_convention": "total_revenue = B * per_bidder_objective",
        "dual_objective": res.dual.objective,
        "gap_report": res.gap.to_dict() if res.gap else None,
        "benchmarks": benchmarks(DensitySpec.from_dict(cfg.density, cfg.I), cfg.B),
        "rounds": [{"round": r, "added": a, "objective": o} for r, a, o in res.plan.rounds],
        "ic_rows": int(len(res.plan.pairs)),
        "majorization_violation": res.majorization_violation,
        "checks": res.report.to_dict() if res.report else None,
    }
    return out


def _write_cells(path, grid, name, values) -> None:
    values = np.asarray(values).reshape(grid.N, -1)
    cols = [name] if values.shape[1] == 1 else [f"{name}_{k + 1}" for k in range(values.shape[1])]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["j"] + [f"theta_{k + 1}" for k in range(grid.I)] + cols)
        for j in range(grid.N):
            wr.writerow([j] + [repr(float(v)) for v in grid.theta[j]] + [repr(float(v)) for v in values[j]])


def write_artifacts(res: SolveResult, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    cfg, grid = res.config, res.grid
    summ = summary(res)
    _dump_json(outdir / "summary.json", summ)
    sol = solution_to_json(res.primal, res.dual)
    sol["config"] = cfg.to_dict()
    _dump_json(outdir / "solution.json", sol)
    grid.to_csv(outdir / "grid.csv")
    res.partition.to_csv(outdir / "partition.csv")
    (outdir / "rounds.csv").write_text(res.plan.log_csv())
    if res.primal.status != "optimal":
        return summ
    _dump_json(outdir / "certificate.json", res.certificate.to_json())
    _write_cells(outdir / "u.csv", grid, "u", res.primal.u)
    _write_cells(outdir / "p.csv", grid, "p", res.primal.p)
    _write_cells(outdir / "c.csv", grid, "c", res.certificate.c)
    mech = reduced_form(res.primal, grid, cfg.B)
    mech.to_csv(outdir / "mechanism.csv")
    if grid.I == 2:
        for k in range(2):
            allocation_matrix_csv(mech, k, outdir / f"p_{k + 1}_matrix.csv")
    ts = np.linspace(0.0, 1.0, 1001)
    phis = [reconstruct_phi(res.certificate, k)(ts) for k in range(grid.I)]
    with open(outdir / "phi.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"phi_{k + 1}" for k in range(grid.I)])
        for i, t in enumerate(ts):
            wr.writerow([repr(float(t))] + [repr(float(ph[i])) for ph in phis])
    return summ


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --- commands -----------------------------------------------------------------

def _config_from_args(args) -> SolveConfig:
    overrides = {}
    for name in ("B", "I", "n", "M", "partition", "ic", "c", "feas_tol", "opt_tol", "tol_ic",
                 "method", "max_rounds", "max_cells", "outdir", "seed"):
        overrides[name] = getattr(args, name, None)
    if getattr(args, "density", None) is not None:
        try:
            overrides["density"] = json.loads(args.density)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--density: {exc.msg}") from exc
    return SolveConfig.from_sources(args.config, overrides)


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    res = run_solve(cfg)
    summ = write_artifacts(res, Path(cfg.outdir))
    _emit(summ)
    return 0 if res.primal.status == "optimal" else 1


def cmd_verify(args) -> int:
    try:
        with open(args.solution) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.solution}: line {exc.lineno}: {exc.msg}") from exc
    if "config" not in raw:
        raise ConfigError(f"{args.solution}: no config block; cannot rebuild the grid")
    cfg = SolveConfig.from_sources(None, raw["config"])
    primal = read_solution_json(args.solution)
    cert = read_certificate_json(args.certificate)
    grid = build_grid(cfg.n, DensitySpec.from_dict(cfg.density, cfg.I), cfg.max_cells)
    partition = build_partition(cfg.B, cfg.M, cfg.partition)
    if primal.u.shape != (grid.N,) or cert.c.shape != (grid.N, grid.I):
        raise ConfigError("solution or certificate does not match the configured grid")
    if primal.pi.shape != (grid.N, partition.M, grid.I):
        primal.pi = np.zeros((grid.N, partition.M, grid.I))
    report = check_certificate(primal, cert, grid, partition)
    viol = check_majorization(reduced_form(primal, grid, cfg.B), partition)
    out = report.to_dict()
    out["checks"]["majorization"] = {"passed": bool(viol <= 1e-6), "worst": viol, "where": None, "tol": 1e-6}
    out["passed"] = bool(report.passed and viol <= 1e-6)
    out["objective"] = float(np.sum(grid.mu * (np.einsum("jk,jk->j", grid.theta, primal.p) - primal.u)))
    out["schema_version"] = SCHEMA_VERSION
    if args.out:
        _dump_json(args.out, out)
    _emit(out)
    return 0 if out["passed"] else 1


def _parse_range(text: str) -> list:
    vals = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            vals.extend(range(int(a), int(b) + 1))
        elif part:
            vals.append(int(part))
    if not vals:
        raise ConfigError("empty B range")
    return vals


def run_benchmark(base: SolveConfig, Bs, mechanism_points: int = 0) -> list:
    """One row per bidder count. With ``mechanism_points`` the extended
    mechanism is also priced on a fine grid (a feasible lower bound when its
    majorization violation is <= 0)."""
    rows = []
    density = DensitySpec.from_dict(base.density, base.I)
    for B in Bs:
        row = {"B": B, "selling_separately": None, "lp_optimal": None, "full_surplus": None, "ratio": None,
               "lp_upper": None, "ratio_upper": None, "mechanism_revenue": None, "ratio_mechanism": None,
               "mechanism_majorization": None, "certificate_passed": None, "dual_gap": None, "error": ""}
        try:
            d = asdict(base)
            d.update(B=B, M=1 if B == 1 else base.M)
            cfg = SolveConfig(**d).resolved()
            bench = benchmarks(density, B)
            row["selling_separately"] = bench["selling_separately"]
            row["full_surplus"] = bench["full_surplus"]
            res = run_solve(cfg)
            if res.primal.status != "optimal":
                raise RuntimeError(f"LP status {res.primal.status}")
            row["lp_optimal"] = res.total_revenue
            row["certificate_passed"] = bool(res.report.passed)
            row["dual_gap"] = res.gap.weak_duality_residual
            ub = res.gap.upper_bound
            row["lp_upper"] = None if ub is None else B * ub
            ss = row["selling_separately"]
            if ss:
                row["ratio"] = row["lp_optimal"] / ss
                row["ratio_upper"] = None if ub is None else row["lp_upper"] / ss
            if mechanism_points:
                rev, viol = extended_revenue(res.primal, res.grid, density, B, mechanism_points)
                row["mechanism_revenue"] = rev
                row["mechanism_majorization"] = viol
                if ss:
                    row["ratio_mechanism"] = rev / ss
        except Exception as exc:  # one bad row must not sink the table
            log.error("benchmark row B=%s failed: %s", B, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


BENCH_COLUMNS = ("B", "selling_separately", "lp_optimal", "full_surplus", "ratio", "lp_upper", "ratio_upper",
                 "mechanism_revenue", "ratio_mechanism", "mechanism_majorization", "certificate_passed", "dual_gap",
                 "error")


def write_benchmark_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(BENCH_COLUMNS)
        for r in rows:
            wr.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                         for c in BENCH_COLUMNS])


def cmd_benchmark(args) -> int:
    cfg = _config_from_args(args)
    rows = run_benchmark(cfg, _parse_range(args.B_range), args.mechanism_points)
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_benchmark_csv(rows, outdir / "benchmark.csv")
    _emit({"schema_version": SCHEMA_VERSION, "rows": rows})
    return 0 if all(not r["error"] for r in rows) else 1


def cmd_export_mps(args) -> int:
    cfg = _config_from_args(args)
    grid = build_grid(cfg.n, DensitySpec.from_dict(cfg.density, cfg.I), cfg.max_cells)
    partition = build_partition(cfg.B, cfg.M, cfg.partition)
    if cfg.ic == "full":
        pairs = all_pairs(cfg.n, cfg.I)
    elif cfg.ic == "irreducible":
        pairs = irreducible_pairs(cfg.n, cfg.I)
    else:
        pairs = local_pairs(cfg.n, cfg.I, cfg.c) if cfg.n > 1 else np.zeros((0, 2), np.int64)
    lp = assemble(grid, partition, pairs)
    path = Path(args.out) if args.out else Path(cfg.outdir) / "model.mps"
    path.parent.mkdir(parents=True, exist_ok=True)
    export_mps(lp, path, n=cfg.n)
    _emit({"schema_version": SCHEMA_VERSION, "path": str(path), "columns": lp.n_cols, "rows": lp.n_rows})
    return 0


def cmd_analytic(args) -> int:
    density = DensitySpec.from_dict(json.loads(args.density) if args.density else {"kind": "uniform"},
                                    args.I)
    out = {"schema_version": SCHEMA_VERSION, "what": args.what}
    if args.what == "virtual":
        prob = OneDimProblem(density.items[0], args.B)
        iv = ironed_virtual(prob)
        out.update(x=args.x, virtual_value=float(virtual_value(prob, args.x)),
                   ironed_virtual_value=float(iv(np.array([args.x]))[0]),
                   ironed_intervals=iv.ironed_x, reserve=iv.reserve)
    elif args.what == "myerson":
        out["per_item"] = [myerson_revenue(OneDimProblem(d, args.B)) for d in density.items]
        out["selling_separately"] = float(sum(out["per_item"]))
    elif args.what == "full-surplus":
        out["full_surplus"] = full_surplus(density, args.B)
    elif args.what == "manelli-vincent":
        u, tag = manelli_vincent(args.x, args.y)
        out.update(x=args.x, y=args.y, u=u, region=tag, revenue=MV_REVENUE)
    elif args.what == "separate-sale":
        out.update(a=args.a, margin=separate_sale_infeasible(args.I, args.B, density, args.a))
    _emit(out)
    return 0


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--B", type=int)
    p.add_argument("--I", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--density", help='JSON, e.g. \'{"kind": "uniform"}\'')
    p.add_argument("--partition", help="uniform | quantile | exact")
    p.add_argument("--ic", help="full | irreducible | local_iterative")
    p.add_argument("--c", type=float, help="locality radius in lattice units")
    p.add_argument("--feas-tol", dest="feas_tol", type=float)
    p.add_argument("--opt-tol", dest="opt_tol", type=float)
    p.add_argument("--tol-ic", dest="tol_ic", type=float)
    p.add_argument("--method", help="ipm (with crossover) | simplex")
    p.add_argument("--max-rounds", dest="max_rounds", type=int)
    p.add_argument("--max-cells", dest="max_cells", type=int)
    p.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or ./optauction_out)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optauction", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance and write artifacts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="check a solution against a certificate")
    p.add_argument("solution")
    p.add_argument("certificate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("benchmark", help="revenue table over a range of bidder counts")
    _add_config_flags(p)
    p.add_argument("--B-range", dest="B_range", default="2..6", help="e.g. 2..6 or 2,3,5")
    p.add_argument("--mechanism-points", dest="mechanism_points", type=int, default=0,
                   help="also price the extended mechanism on this many points (0 = skip)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("export-mps", help="write the LP as MPS")
    _add_config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_mps)

    p = sub.add_parser("analytic", help="evaluate a closed-form oracle")
    p.add_argument("what", choices=["virtual", "myerson", "full-surplus", "manelli-vincent", "separate-sale"])
    p.add_argument("--B", type=int, default=1)
    p.add_argument("--I", type=int, default=1)
    p.add_argument("--density")
    p.add_argument("--x", type=float, default=0.5)
    p.add_argument("--y", type=float, default=0.5)
    p.add_argument("--a", type=float, default=0.9)
    p.set_defaults(func=cmd_analytic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        _emit({"error": {"type": "ConfigError", "message": str(exc)}})
        return 2
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        _emit({"error": {"type": type(exc).__name__, "message": str(exc)}})
        return 1


if __name__ == "__main__":
    sys.exit(main())
