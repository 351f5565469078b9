"""Assembly and solution of the discretized auction LP.

Variables, in column order:

* ``u[j]``          interim utility at cell j            (N columns)
* ``p[j, k]``       allocation of item k at cell j        (N*I columns)
* ``pi[j, m, k]``   coupling mass of cell j and segment m (N*I*M columns)

Every row is stored as ``A x <= rhs``. Families:

* ``ic``   u_j - u_i + <theta_i - theta_j, p_j> <= 0   for each pair (i, j)
* ``mjT``  sum_j pi[j, m, k] <= w_m
* ``mjJ``  sum_m pi[j, m, k] <= mu_j
* ``mjE``  mu_j p[j, k] - sum_m t_m pi[j, m, k] <= 0

Bounds carry individual rationality (u >= 0), p >= 0 and pi >= 0. The
allocation upper bound p <= 1 is implied by the mj rows whenever mu_j > 0
and is only imposed on zero-weight cells.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .grid import TypeGrid
from .majorization import MajorizationPartition

log = logging.getLogger(__name__)

__all__ = [
    "FAMILIES",
    "AssemblyError",
    "SparseLP",
    "PrimalSolution",
    "DualSolution",
    "SolverOptions",
    "LPSession",
    "assemble",
    "export_mps",
    "ic_rows",
    "read_mps",
    "read_solution_json",
    "solution_to_json",
    "solve",
]

FAMILIES = ("ic", "mjT", "mjJ", "mjE")


class AssemblyError(ValueError):
    pass


@dataclass
class SparseLP:
    """Maximize ``cost @ x`` subject to ``A @ x <= rhs`` and column bounds."""

    N: int
    I: int
    M: int
    cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    A: sp.csr_matrix
    rhs: np.ndarray
    families: dict
    ic_pairs: np.ndarray
    mu: np.ndarray
    w: np.ndarray
    t: np.ndarray
    theta: np.ndarray

    @property
    def n_cols(self) -> int:
        return self.N * (1 + self.I + self.I * self.M)

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def u_col(self, j):
        return np.asarray(j)

    def p_col(self, j, k):
        return self.N + np.asarray(j) * self.I + np.asarray(k)

    def pi_col(self, j, m, k):
        return self.N * (1 + self.I) + (np.asarray(j) * self.I + np.asarray(k)) * self.M + np.asarray(m)

    def col_family(self, col: int) -> str:
        if col < self.N:
            return "u"
        if col < self.N * (1 + self.I):
            return "p"
        return "pi"

    def row_family(self, row: int) -> str:
        for fam, sl in self.families.items():
            if sl.start <= row < sl.stop:
                return fam
        raise IndexError(row)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.A.data)) or not np.all(np.isfinite(self.cost)):
            raise AssemblyError("non-finite coefficient")
        covered = sum(sl.stop - sl.start for sl in self.families.values())
        if covered != self.n_rows:
            raise AssemblyError("family tags do not cover all rows")
        A = self.A.tocoo()
        keys = A.row.astype(np.int64) * self.n_cols + A.col
        if len(np.unique(keys)) != len(keys):
            raise AssemblyError("duplicate (row, column) entries")
        used = np.zeros(self.n_cols, dtype=bool)
        used[A.col] = True
        used |= self.cost != 0
        if not used.all():
            raise AssemblyError(f"{int((~used).sum())} variables appear in no row and not in the objective")


def _check_pairs(pairs: np.ndarray, N: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs
    if pairs.min() < 0 or pairs.max() >= N:
        raise AssemblyError("ic pair index out of range")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise AssemblyError("ic pair with i == j")
    keys = pairs[:, 0] * N + pairs[:, 1]
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        dup = uniq[counts > 1][0]
        raise AssemblyError(f"duplicate ic pair ({dup // N}, {dup % N})")
    return pairs


def ic_rows(theta: np.ndarray, pairs: np.ndarray, n_cols: int) -> sp.csr_matrix:
    """Rows u_j - u_i + <theta_i - theta_j, p_j> <= 0 for pairs (i, j)."""
    N, I = theta.shape
    P = len(pairs)
    if P == 0:
        return sp.csr_matrix((0, n_cols))
    i, j = pairs[:, 0], pairs[:, 1]
    diff = theta[i] - theta[j]
    r = np.arange(P)
    rows = [r, r]
    cols = [i, j]
    vals = [-np.ones(P), np.ones(P)]
    for k in range(I):
        nz = diff[:, k] != 0
        rows.append(r[nz])
        cols.append(N + j[nz] * I + k)
        vals.append(diff[nz, k])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(P, n_cols)
    )


def assemble(grid: TypeGrid, partition: MajorizationPartition, ic_pairs) -> SparseLP:
    """Build the LP for ``grid``, ``partition`` and the given ordered ic pairs."""
    N, I, M = grid.N, grid.I, partition.M
    if grid.theta.shape != (N, I):
        raise AssemblyError("grid theta has the wrong shape")
    if len(partition.t) != M or len(partition.w) != M:
        raise AssemblyError("partition arrays disagree with M")
    pairs = _check_pairs(ic_pairs, N)
    mu, w, t = grid.mu, partition.w, partition.t
    n_cols = N * (1 + I + I * M)

    cost = np.zeros(n_cols)
    cost[:N] = -mu
    cost[N:N * (1 + I)] = (mu[:, None] * grid.theta).ravel()

    lower = np.zeros(n_cols)
    upper = np.full(n_cols, np.inf)
    # p <= 1 is implied by mjJ/mjE only where mu_j > 0
    zero = np.repeat(mu <= 0, I)
    upper[N:N * (1 + I)][zero] = 1.0

    jj, kk, mm = np.meshgrid(np.arange(N), np.arange(I), np.arange(M), indexing="ij")
    jj, kk, mm = jj.ravel(), kk.ravel(), mm.ravel()
    pi_cols = N * (1 + I) + (jj * I + kk) * M + mm  # == arange in column order

    blocks = [ic_rows(grid.theta, pairs, n_cols)]
    # mjT: row index m*I + k
    blocks.append(sp.csr_matrix((np.ones(len(pi_cols)), (mm * I + kk, pi_cols)), shape=(M * I, n_cols)))
    # mjJ: row index j*I + k
    blocks.append(sp.csr_matrix((np.ones(len(pi_cols)), (jj * I + kk, pi_cols)), shape=(N * I, n_cols)))
    # mjE: row index j*I + k
    jk = np.arange(N * I)
    e_rows = np.concatenate([jk, jj * I + kk])
    e_cols = np.concatenate([N + jk, pi_cols])
    e_vals = np.concatenate([np.repeat(mu, I), -t[mm]])
    keep = e_vals != 0
    blocks.append(sp.csr_matrix((e_vals[keep], (e_rows[keep], e_cols[keep])), shape=(N * I, n_cols)))

    A = sp.vstack(blocks, format="csr")
    P = len(pairs)
    rhs = np.concatenate([np.zeros(P), np.tile(w, (I, 1)).T.ravel(), np.repeat(mu, I), np.zeros(N * I)])
    families = {
        "ic": slice(0, P),
        "mjT": slice(P, P + M * I),
        "mjJ": slice(P + M * I, P + M * I + N * I),
        "mjE": slice(P + M * I + N * I, P + M * I + 2 * N * I),
    }
    return SparseLP(N, I, M, cost, lower, upper, A, rhs, families, pairs,
                    mu.copy(), w.copy(), t.copy(), grid.theta.copy())


@dataclass
class SolverOptions:
    """Solver settings. ``feas_tol``/``opt_tol`` are the acceptance tolerances
    used when validating a solution; ``primal_tol``/``dual_tol`` go to HiGHS."""

    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    primal_tol: float = 1e-9
    dual_tol: float = 1e-9
    method: str = "simplex"
    time_limit: float | None = None
    iteration_limit: int | None = None
    scale: bool = True
    seed: int = 0


@dataclass
class PrimalSolution:
    status: str
    objective: float
    u: np.ndarray
    p: np.ndarray
    pi: np.ndarray  # (N, M, I)
    max_violation: float = 0.0

    @classmethod
    def zeros(cls, N: int, I: int, M: int) -> "PrimalSolution":
        return cls("optimal", 0.0, np.zeros(N), np.zeros((N, I)), np.zeros((N, M, I)))


@dataclass
class DualSolution:
    """Row duals keyed by family (maximization sign convention: all >= 0) and
    bound duals kept apart under ``bounds``."""

    status: str
    objective: float
    rows: dict
    bounds: dict = field(default_factory=dict)
    ic_pairs: np.ndarray | None = None


_STATUS = {
    "kOptimal": "optimal",
    "kInfeasible": "infeasible",
    "kUnbounded": "unbounded",
    "kUnboundedOrInfeasible": "unbounded",
    "kIterationLimit": "iteration_limit",
    "kTimeLimit": "iteration_limit",
}


class LPSession:
    """A HiGHS model kept alive between solves so that added ic rows
    warm-start from the previous basis."""

    def __init__(self, lp: SparseLP, opts: SolverOptions | None = None):
        import highspy

        self.lp = lp
        self.opts = opts or SolverOptions()
        self._highspy = highspy
        self.h = highspy.Highs()
        h = self.h
        h.setOptionValue("output_flag", False)
        h.setOptionValue("primal_feasibility_tolerance", self.opts.primal_tol)
        h.setOptionValue("dual_feasibility_tolerance", self.opts.dual_tol)
        h.setOptionValue("random_seed", int(self.opts.seed))
        h.setOptionValue("threads", 1)
        if self.opts.method == "ipm":
            h.setOptionValue("solver", "ipm")
            h.setOptionValue("run_crossover", "on")
        else:
            h.setOptionValue("solver", "simplex")
        if self.opts.time_limit:
            h.setOptionValue("time_limit", float(self.opts.time_limit))
        if self.opts.iteration_limit:
            h.setOptionValue("simplex_iteration_limit", int(self.opts.iteration_limit))

        # Column scaling pi' = pi / mu_j keeps mj rows O(1) when mu_j ~ n^-I.
        self.col_scale = np.ones(lp.n_cols)
        if self.opts.scale:
            pi_mu = np.repeat(lp.mu, lp.I * lp.M)
            s = self.col_scale[lp.N * (1 + lp.I):]
            s[pi_mu > 0] = pi_mu[pi_mu > 0]
        A = lp.A @ sp.diags(self.col_scale)
        self._row_scale_h = self._row_scale(A)
        A = sp.diags(self._row_scale_h) @ A
        self._P0 = len(lp.ic_pairs)
        self._base_rows = lp.n_rows
        self._added = 0

        model = highspy.HighsLp()
        model.num_col_ = lp.n_cols
        model.num_row_ = lp.n_rows
        model.sense_ = highspy.ObjSense.kMaximize
        model.col_cost_ = lp.cost * self.col_scale
        model.col_lower_ = lp.lower / self.col_scale
        model.col_upper_ = np.where(np.isinf(lp.upper), highspy.kHighsInf, lp.upper / self.col_scale)
        model.row_lower_ = np.full(lp.n_rows, -highspy.kHighsInf)
        model.row_upper_ = lp.rhs * self._row_scale_h
        csc = A.tocsc()
        csc.sort_indices()
        model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        model.a_matrix_.start_ = csc.indptr.astype(np.int32)
        model.a_matrix_.index_ = csc.indices.astype(np.int32)
        model.a_matrix_.value_ = csc.data
        h.passModel(model)

    def _row_scale(self, A) -> np.ndarray:
        if not self.opts.scale or A.shape[0] == 0:
            return np.ones(A.shape[0])
        mx = np.asarray(abs(A).max(axis=1).todense()).ravel()
        return np.where(mx > 0, 1.0 / np.where(mx > 0, mx, 1.0), 1.0)

    def add_ic_pairs(self, pairs) -> None:
        """Append ic rows for new pairs; rejects pairs already present."""
        lp = self.lp
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs) == 0:
            return
        _check_pairs(np.vstack([lp.ic_pairs, pairs]), lp.N)
        rows = ic_rows(lp.theta, pairs, lp.n_cols)
        scaled = rows @ sp.diags(self.col_scale)
        rs = self._row_scale(scaled)
        scaled = (sp.diags(rs) @ scaled).tocsr()
        scaled.sort_indices()
        h = self.h
        inf = self._highspy.kHighsInf
        h.addRows(len(pairs), np.full(len(pairs), -inf), np.zeros(len(pairs)),
                  scaled.nnz, scaled.indptr[:-1].astype(np.int32),
                  scaled.indices.astype(np.int32), scaled.data)

        self._row_scale_h = np.concatenate([self._row_scale_h, rs])
        self._added += len(pairs)
        P_old = len(lp.ic_pairs)
        A = sp.vstack([lp.A[:P_old], rows, lp.A[P_old:]], format="csr")
        rhs = np.concatenate([lp.rhs[:P_old], np.zeros(len(pairs)), lp.rhs[P_old:]])
        shift = len(pairs)
        fam = {"ic": slice(0, P_old + shift)}
        for name in ("mjT", "mjJ", "mjE"):
            sl = lp.families[name]
            fam[name] = slice(sl.start + shift, sl.stop + shift)
        self.lp = replace(lp, A=A, rhs=rhs, families=fam, ic_pairs=np.vstack([lp.ic_pairs, pairs]))

    def _row_order(self) -> np.ndarray:
        # HiGHS keeps [initial ic, mjT, mjJ, mjE, added ic...]; the LP keeps all ic first
        return np.concatenate([np.arange(self._P0), self._base_rows + np.arange(self._added),
                               np.arange(self._P0, self._base_rows)])

    def solve(self) -> tuple[PrimalSolution, DualSolution]:
        lp, h = self.lp, self.h
        h.run()
        status = _STATUS.get(h.getModelStatus().name, "iteration_limit")
        if status not in ("optimal", "iteration_limit"):
            N, I, M = lp.N, lp.I, lp.M
            z = PrimalSolution(status, float("nan"), np.zeros(N), np.zeros((N, I)), np.zeros((N, M, I)))
            return z, DualSolution(status, float("nan"), {}, {}, lp.ic_pairs)
        sol = h.getSolution()
        x = np.asarray(sol.col_value) * self.col_scale
        # for a maximization HiGHS reports binding <= rows with duals >= 0
        y = (np.asarray(sol.row_dual) * self._row_scale_h)[self._row_order()]
        return _package(lp, status, x, y)


def _package(lp: SparseLP, status: str, x: np.ndarray, y: np.ndarray):
    N, I, M = lp.N, lp.I, lp.M
    u = x[:N].copy()
    p = x[N:N * (1 + I)].reshape(N, I).copy()
    pi = x[N * (1 + I):].reshape(N, I, M).transpose(0, 2, 1).copy()
    act = lp.A @ x - lp.rhs
    viol = max(0.0, float(act.max(initial=0.0)), float((lp.lower - x).max(initial=0.0)),
               float(np.max(x - lp.upper, initial=0.0)))
    primal = PrimalSolution(status, float(lp.cost @ x), u, p, pi, viol)

    red = lp.cost - lp.A.T @ y
    fam = lp.families
    rows = {
        "ic": y[fam["ic"]].copy(),
        "mjT": y[fam["mjT"]].reshape(M, I).copy(),
        "mjJ": y[fam["mjJ"]].reshape(N, I).copy(),
        "mjE": y[fam["mjE"]].reshape(N, I).copy(),
    }
    finite_ub = np.isfinite(lp.upper)
    ub_dual = np.where(finite_ub, np.maximum(red, 0.0), 0.0)
    bounds = {
        "u": red[:N].copy(),
        "p": red[N:N * (1 + I)].reshape(N, I).copy(),
        "pi": red[N * (1 + I):].reshape(N, I, M).transpose(0, 2, 1).copy(),
        "p_upper": ub_dual[N:N * (1 + I)].reshape(N, I).copy(),
    }
    dual_obj = float(lp.rhs @ y + np.sum(np.where(finite_ub, lp.upper, 0.0) * ub_dual))
    return primal, DualSolution(status, dual_obj, rows, bounds, lp.ic_pairs.copy())


def solve(lp: SparseLP, opts: SolverOptions | None = None) -> tuple[PrimalSolution, DualSolution]:
    """Solve ``lp`` with HiGHS; statuses are reported, never raised."""
    return LPSession(lp, opts).solve()


# --- MPS -------------------------------------------------------------------
# Names are a family letter plus a base-36 index, at most 8 characters:
# columns U<j>, P<j*I+k>, X<(j*I+k)*M+m>; rows C<r> (ic), T<m*I+k>, J<j*I+k>, E<j*I+k>.
# Numbers are written with repr() so the round trip is bit-exact; long values
# spill past the 12-character fixed-format fields and need a whitespace parser.

_B36 = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_ROW_TAG = {"ic": "C", "mjT": "T", "mjJ": "J", "mjE": "E"}


def _b36(x: int) -> str:
    if x == 0:
        return "0"
    out = []
    while x:
        x, r = divmod(x, 36)
        out.append(_B36[r])
    return "".join(reversed(out))


def _col_names(lp: SparseLP) -> list:
    N, I, M = lp.N, lp.I, lp.M
    names = ["U" + _b36(j) for j in range(N)]
    names += ["P" + _b36(r) for r in range(N * I)]
    names += ["X" + _b36(r) for r in range(N * I * M)]
    return names


def _row_names(lp: SparseLP) -> list:
    names = []
    for fam in FAMILIES:
        sl = lp.families[fam]
        names += [_ROW_TAG[fam] + _b36(r) for r in range(sl.stop - sl.start)]
    if any(len(x) > 8 for x in names):
        raise AssemblyError("model too large for 8-character MPS names")
    return names


def _num(v: float) -> str:
    return repr(float(v))


def export_mps(lp: SparseLP, path, n: int | None = None) -> None:
    """Write ``lp`` as fixed-layout MPS (maximization via OBJSENSE)."""
    cols, rows = _col_names(lp), _row_names(lp)
    if n is None:
        n = round(lp.N ** (1.0 / lp.I))
    A = lp.A.tocsc()
    A.sort_indices()
    out = [f"* auction LP n={n} I={lp.I} M={lp.M} N={lp.N} ic={len(lp.ic_pairs)}",
           "NAME          AUCTION", "OBJSENSE", "    MAX", "ROWS", " N  OBJ"]
    out += [f" L  {r}" for r in rows]
    out.append("COLUMNS")
    for c in range(lp.n_cols):
        name = cols[c]
        if lp.cost[c] != 0:
            out.append(f"    {name:<8}  {'OBJ':<8}  {_num(lp.cost[c]):>12}")
        for ptr in range(A.indptr[c], A.indptr[c + 1]):
            out.append(f"    {name:<8}  {rows[A.indices[ptr]]:<8}  {_num(A.data[ptr]):>12}")
    out.append("RHS")
    for r, v in enumerate(lp.rhs):
        if v != 0:
            out.append(f"    {'RHS':<8}  {rows[r]:<8}  {_num(v):>12}")
    out.append("BOUNDS")
    for c in np.nonzero(np.isfinite(lp.upper))[0]:
        out.append(f" UP {'BND':<8}  {cols[c]:<8}  {_num(lp.upper[c]):>12}")
    out.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_mps(path) -> SparseLP:
    """Re-import a file written by :func:`export_mps`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    m = re.match(r"\* auction LP n=(\d+) I=(\d+) M=(\d+) N=(\d+) ic=(\d+)", lines[0] if lines else "")
    if not m:
        raise AssemblyError(f"{path}: line 1: missing auction LP header")
    n, I, M, N, P = map(int, m.groups())
    n_cols = N * (1 + I + I * M)
    prefix_start = {"U": 0, "P": N, "X": N * (1 + I)}
    fam_start = {"C": 0, "T": P, "J": P + M * I, "E": P + M * I + N * I}
    n_rows = P + M * I + 2 * N * I

    def col_index(name):
        return prefix_start[name[0]] + int(name[1:], 36)

    def row_index(name):
        return fam_start[name[0]] + int(name[1:], 36)

    cost = np.zeros(n_cols)
    upper = np.full(n_cols, np.inf)
    rhs = np.zeros(n_rows)
    ri, ci, vals = [], [], []
    section = None
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("*"):
            continue
        if not line[0].isspace():
            section = line.split()[0]
            continue
        f = line.split()
        try:
            if section == "COLUMNS":
                c = col_index(f[0])
                for rn, v in zip(f[1::2], f[2::2]):
                    if rn == "OBJ":
                        cost[c] = float(v)
                    else:
                        ri.append(row_index(rn))
                        ci.append(c)
                        vals.append(float(v))
            elif section == "RHS":
                for rn, v in zip(f[1::2], f[2::2]):
                    rhs[row_index(rn)] = float(v)
            elif section == "BOUNDS":
                if f[0] != "UP":
                    raise AssemblyError(f"unsupported bound type {f[0]}")
                upper[col_index(f[2])] = float(f[3])
        except (KeyError, ValueError, IndexError) as exc:
            raise AssemblyError(f"{path}: line {lineno}: cannot parse {line.strip()!r}") from exc
    A = sp.csr_matrix((vals, (ri, ci)), shape=(n_rows, n_cols))
    A.sort_indices()

    ic = A[:P].tocoo()
    i_of = np.full(P, -1)
    j_of = np.full(P, -1)
    sel = ic.col < N
    neg = sel & (ic.data < 0)
    pos = sel & (ic.data > 0)
    i_of[ic.row[neg]] = ic.col[neg]
    j_of[ic.row[pos]] = ic.col[pos]
    pairs = np.stack([i_of, j_of], axis=1).astype(np.int64)
    mu = rhs[P + M * I:P + M * I + N * I].reshape(N, I)[:, 0].copy()
    w = rhs[P:P + M * I].reshape(M, I)[:, 0].copy()
    E = A[P + M * I + N * I:].tocoo()
    xs = E.col >= N * (1 + I)
    t = np.zeros(M)
    t[(E.col[xs] - N * (1 + I)) % M] = -E.data[xs]
    index = np.stack(np.unravel_index(np.arange(N), (n,) * I), axis=1)
    theta = (2.0 * index + 1.0) / (2.0 * n)
    families = {"ic": slice(0, P), "mjT": slice(P, P + M * I),
                "mjJ": slice(P + M * I, P + M * I + N * I),
                "mjE": slice(P + M * I + N * I, n_rows)}
    return SparseLP(N, I, M, cost, np.zeros(n_cols), upper, A, rhs, families, pairs, mu, w, t, theta)


# --- JSON solution dump -------------------------------------------------------

def solution_to_json(primal: PrimalSolution, dual: DualSolution | None = None) -> dict:
    out = {
        "status": primal.status,
        "objective": primal.objective,
        "u": primal.u.tolist(),
        "p": primal.p.tolist(),
        "pi": primal.pi.tolist(),
    }
    if dual is not None:
        out["dual_objective"] = dual.objective
        out["duals"] = {k: np.asarray(v).tolist() for k, v in dual.rows.items()}
        out["ic_pairs"] = np.asarray(dual.ic_pairs).tolist()
    return out


def read_solution_json(path) -> PrimalSolution:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        u = np.asarray(d["u"], dtype=float)
        p = np.asarray(d["p"], dtype=float).reshape(len(u), -1)
        pi = np.asarray(d.get("pi", np.zeros((len(u), 0, p.shape[1]))), dtype=float)
        return PrimalSolution(d["status"], float(d["objective"]), u, p, pi)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed solution: {exc}") from exc
