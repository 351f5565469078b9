"""Incentive-compatibility row management.

Cells live on the integer lattice {0..n-1}^I. A pair of cells is irreducible
when the segment between them contains no third cell, i.e. the gcd of the
lattice difference is 1; enforcing ic on irreducible pairs is enough for all
pairs. Local mode keeps irreducible directions of norm <= c and adds the
remaining violated pairs round by round.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import TypeGrid
from .lp_core import LPSession, SolverOptions, assemble
from .majorization import MajorizationPartition

log = logging.getLogger(__name__)

__all__ = [
    "ICPlan",
    "ICRoundLimitError",
    "all_pairs",
    "directions",
    "irreducible_fraction",
    "irreducible_pairs",
    "local_pairs",
    "pairs_for_directions",
    "scan_violations",
    "solve_full",
    "solve_iterative",
]

TOL_IC = 1e-8


class ICRoundLimitError(RuntimeError):
    def __init__(self, rounds: int, objective: float):
        super().__init__(f"ic iteration did not settle within {rounds} rounds (last objective {objective!r})")
        self.rounds = rounds
        self.objective = objective


@dataclass
class ICPlan:
    mode: str
    c: float | None
    pairs: np.ndarray
    rounds: list = field(default_factory=list)  # (round, added, objective)
    residual_violation: float = 0.0

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    @property
    def added(self) -> int:
        return int(sum(r[1] for r in self.rounds))

    def log_csv(self) -> str:
        lines = ["round,added,objective"]
        lines += [f"{r},{a},{obj!r}" for r, a, obj in self.rounds]
        return "\n".join(lines) + "\n"


def directions(I: int, radius: float, primitive: bool = True) -> np.ndarray:
    """Nonzero integer vectors with Euclidean norm <= radius (gcd 1 if primitive)."""
    r = int(math.floor(radius))
    out = []
    for d in itertools.product(range(-r, r + 1), repeat=I):
        if not any(d):
            continue
        if sum(x * x for x in d) > radius * radius + 1e-12:
            continue
        if primitive and math.gcd(*[abs(x) for x in d]) != 1:
            continue
        out.append(d)
    return np.array(out, dtype=np.int64).reshape(-1, I)


def pairs_for_directions(n: int, I: int, dirs: np.ndarray) -> np.ndarray:
    """Ordered pairs (i, j) with lattice(i) - lattice(j) in ``dirs``."""
    index = np.stack(np.unravel_index(np.arange(n ** I), (n,) * I), axis=1)
    out = []
    for d in dirs:
        tgt = index + d
        ok = np.all((tgt >= 0) & (tgt < n), axis=1)
        j = np.nonzero(ok)[0]
        i = np.ravel_multi_index(tuple(tgt[ok].T), (n,) * I)
        out.append(np.stack([i, j], axis=1))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def all_pairs(n: int, I: int) -> np.ndarray:
    N = n ** I
    i, j = np.nonzero(~np.eye(N, dtype=bool))
    return np.stack([i, j], axis=1).astype(np.int64)


def irreducible_pairs(n: int, I: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return np.zeros((0, 2), dtype=np.int64)
    return pairs_for_directions(n, I, directions(I, math.sqrt(I) * (n - 1)))


def irreducible_fraction(n: int, I: int) -> float:
    """Share of ordered distinct pairs that are irreducible, counted per
    difference vector without listing the pairs."""
    N = n ** I
    if N < 2:
        return 0.0
    span = np.arange(-(n - 1), n)
    grids = np.meshgrid(*([span] * I), indexing="ij")
    diffs = np.stack([g.ravel() for g in grids], axis=1)
    g = np.gcd.reduce(np.abs(diffs), axis=1)
    counts = np.prod(n - np.abs(diffs), axis=1)
    return float(counts[g == 1].sum()) / float(N * (N - 1))


def local_pairs(n: int, I: int, c: float) -> np.ndarray:
    if c < 1:
        raise ValueError("locality radius c must be >= 1")
    if c < math.sqrt(I):
        warnings.warn(f"c = {c} < sqrt(I): directional resolution is coarser than pi/4", stacklevel=2)
    return pairs_for_directions(n, I, directions(I, c))


def scan_violations(u, p, grid: TypeGrid, tol: float = TOL_IC, irreducible_only: bool = True,
                    chunk_cells: int = 4_000_000):
    """Pairs (i, j) with <theta_i - theta_j, p_j> - (u_i - u_j) > tol.

    Returns the violating pairs and the largest violation seen over all
    scanned pairs.
    """
    theta, index = grid.theta, grid.index
    N = grid.N
    tp = np.einsum("jk,jk->j", theta, p)
    block = max(1, chunk_cells // max(N, 1))
    found = []
    worst = -np.inf
    for s in range(0, N, block):
        e = min(N, s + block)
        V = theta[s:e] @ p.T - tp[None, :] - u[s:e, None] + u[None, :]
        ii = np.arange(s, e)
        V[ii - s, ii] = -np.inf
        if irreducible_only and grid.n > 1:
            g = np.gcd.reduce(np.abs(index[s:e, None, :] - index[None, :, :]), axis=2)
            V[g != 1] = -np.inf
        worst = max(worst, float(V.max(initial=-np.inf)))
        bi, bj = np.nonzero(V > tol)
        if len(bi):
            found.append(np.stack([bi + s, bj], axis=1))
    pairs = np.concatenate(found) if found else np.zeros((0, 2), dtype=np.int64)
    return pairs.astype(np.int64), worst


def solve_full(grid: TypeGrid, partition: MajorizationPartition, mode: str = "irreducible",
               opts: SolverOptions | None = None):
    """Solve with every ic pair (``full``) or every irreducible pair."""
    if mode == "full":
        pairs = all_pairs(grid.n, grid.I)
    elif mode == "irreducible":
        pairs = irreducible_pairs(grid.n, grid.I)
    else:
        raise ValueError(f"unknown ic mode {mode!r}")
    session = LPSession(assemble(grid, partition, pairs), opts)
    primal, dual = session.solve()
    plan = ICPlan(mode, None, pairs, [(0, len(pairs), primal.objective)])
    return primal, dual, plan


def solve_iterative(grid: TypeGrid, partition: MajorizationPartition, c: float | None = 2.5,
                    opts: SolverOptions | None = None, tol_ic: float = TOL_IC,
                    max_rounds: int = 100, initial_pairs=None, on_round=None):
    """Start from local ic rows, then add every violated pair until none is left.

    Returns ``(primal, dual, plan)``. ``on_round(round, added, objective)`` is
    called after each LP solve.
    """
    if initial_pairs is None:
        initial_pairs = local_pairs(grid.n, grid.I, c) if grid.n > 1 else np.zeros((0, 2), np.int64)
    session = LPSession(assemble(grid, partition, initial_pairs), opts)
    plan = ICPlan("local_iterative", c, np.asarray(initial_pairs, dtype=np.int64).reshape(-1, 2))
    present = set(map(tuple, plan.pairs.tolist()))
    primal = dual = None
    for rnd in range(max_rounds):
        primal, dual = session.solve()
        if primal.status != "optimal":
            plan.rounds.append((rnd, 0, primal.objective))
            return primal, dual, plan
        viol, worst = scan_violations(primal.u, primal.p, grid, tol_ic)
        new = np.array([pq for pq in map(tuple, viol.tolist()) if pq not in present],
                       dtype=np.int64).reshape(-1, 2)
        plan.residual_violation = max(worst, 0.0)
        plan.rounds.append((rnd, len(new), primal.objective))
        log.info("ic round %d: objective %.12g, %d violated pairs", rnd, primal.objective, len(new))
        if on_round is not None:
            on_round(rnd, len(new), primal.objective)
        if len(new) == 0:
            if len(viol):
                log.warning("%d present ic rows violated beyond tol_ic (max %.3g)", len(viol), worst)
            plan.pairs = session.lp.ic_pairs
            return primal, dual, plan
        session.add_ic_pairs(new)
        present.update(map(tuple, new.tolist()))
    raise ICRoundLimitError(max_rounds, primal.objective)
