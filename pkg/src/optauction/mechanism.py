"""From an LP solution to a mechanism: extended utility, reduced form,
transfers and an independent check of the majorization constraint."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import DensitySpec, TypeGrid
from .lp_core import PrimalSolution
from .majorization import MajorizationPartition, eta_hinge

__all__ = [
    "ExtendedUtility",
    "ReducedMechanism",
    "allocation_matrix_csv",
    "check_majorization",
    "extend_u",
    "extended_revenue",
    "majorization_profile",
    "reduced_form",
]


class ExtendedUtility:
    """u_bar(x) = max(0, max_j (u_j + <x - theta_j, p_j>)), convex and monotone."""

    def __init__(self, u: np.ndarray, p: np.ndarray, theta: np.ndarray):
        self.slopes = np.asarray(p, dtype=float)
        self.intercepts = np.asarray(u, dtype=float) - np.einsum("jk,jk->j", theta, self.slopes)

    def __call__(self, x, chunk: int = 2_000_000):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        if len(self.intercepts) == 0:
            return out
        block = max(1, chunk // len(self.intercepts))
        for s in range(0, x.shape[0], block):
            vals = x[s:s + block] @ self.slopes.T + self.intercepts[None, :]
            out[s:s + block] = np.maximum(0.0, vals.max(axis=1))
        return out

    def gradient(self, x, chunk: int = 2_000_000):
        """A subgradient: the slope of the active piece (zero where u_bar = 0)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        if len(self.intercepts) == 0:
            return out
        block = max(1, chunk // len(self.intercepts))
        for s in range(0, x.shape[0], block):
            vals = x[s:s + block] @ self.slopes.T + self.intercepts[None, :]
            j = vals.argmax(axis=1)
            pos = vals[np.arange(len(j)), j] > 0
            out[s:s + block][pos] = self.slopes[j[pos]]
        return out


def extend_u(primal: PrimalSolution, grid: TypeGrid) -> ExtendedUtility:
    return ExtendedUtility(primal.u, primal.p, grid.theta)


@dataclass
class ReducedMechanism:
    grid: TypeGrid
    p: np.ndarray
    transfer: np.ndarray
    B: int

    @property
    def u(self) -> np.ndarray:
        return np.einsum("jk,jk->j", self.grid.theta, self.p) - self.transfer

    @property
    def per_bidder_revenue(self) -> float:
        return float(self.grid.mu @ self.transfer)

    @property
    def total_revenue(self) -> float:
        return self.B * self.per_bidder_revenue

    def to_csv(self, path) -> None:
        I = self.grid.I
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["j"] + [f"theta_{k + 1}" for k in range(I)] + [f"p_{k + 1}" for k in range(I)]
                        + ["transfer"])
            for j in range(self.grid.N):
                wr.writerow([j] + [repr(float(v)) for v in self.grid.theta[j]]
                            + [repr(float(v)) for v in self.p[j]] + [repr(float(self.transfer[j]))])


def reduced_form(primal: PrimalSolution, grid: TypeGrid, B: int) -> ReducedMechanism:
    transfer = np.einsum("jk,jk->j", grid.theta, primal.p) - primal.u
    return ReducedMechanism(grid, primal.p.copy(), transfer, B)


def majorization_profile(p: np.ndarray, mu: np.ndarray, B: int, t_grid_size: int = 1001):
    """violation[k, i] = sum_j mu_j max(0, p_jk - t_i) - int max(0, s - t_i) d eta.

    The slack mass is placed at allocation 0 and contributes nothing.
    """
    if t_grid_size < 100:
        raise ValueError("t_grid_size must be >= 100")
    ts = np.linspace(0.0, 1.0, t_grid_size)
    p = np.asarray(p, dtype=float)
    mu = np.asarray(mu, dtype=float)
    lhs = np.empty((p.shape[1], len(ts)))
    for k in range(p.shape[1]):
        order = np.argsort(p[:, k])
        pk, wk = p[order, k], mu[order]
        # tail sums of mu and mu * p over {p > t}
        tail_w = np.concatenate([np.cumsum(wk[::-1])[::-1], [0.0]])
        tail_wp = np.concatenate([np.cumsum((wk * pk)[::-1])[::-1], [0.0]])
        i = np.searchsorted(pk, ts, side="right")
        lhs[k] = np.maximum(0.0, tail_wp[i] - ts * tail_w[i])
    return ts, lhs - eta_hinge(B, ts)[None, :]


def check_majorization(mech: ReducedMechanism, partition: MajorizationPartition | int,
                       t_grid_size: int = 1001) -> float:
    """Largest hinge-test violation over items and thresholds (<= 0 when feasible)."""
    B = partition if isinstance(partition, int) else partition.B
    _, v = majorization_profile(mech.p, mech.grid.mu, B, t_grid_size)
    return float(v.max())


def allocation_matrix_csv(mech: ReducedMechanism, k: int, path) -> None:
    """p_k on the n x n grid: row = x_2 level, column = x_1 level."""
    g = mech.grid
    if g.I != 2:
        raise ValueError("contour matrices need I = 2")
    n = g.n
    mat = np.zeros((n, n))
    mat[g.index[:, 1], g.index[:, 0]] = mech.p[:, k]
    levels = (2.0 * np.arange(n) + 1.0) / (2.0 * n)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x2\\x1"] + [repr(float(v)) for v in levels])
        for r in range(n):
            wr.writerow([repr(float(levels[r]))] + [repr(float(v)) for v in mat[r]])


def extended_revenue(primal: PrimalSolution, grid: TypeGrid, density: DensitySpec, B: int,
                     points: int = 1_000_000) -> tuple[float, float]:
    """Total revenue of the extended mechanism (allocation = gradient of u_bar)
    on a fine midpoint grid, and that allocation's majorization violation.

    The extension is a genuine mechanism, so when the violation is <= 0 its
    revenue is a lower bound on the optimum, unlike the LP value.
    """
    I = grid.I
    r = max(2, int(round(points ** (1.0 / I))))
    c = (np.arange(r) + 0.5) / r
    x = np.stack([a.ravel() for a in np.meshgrid(*([c] * I), indexing="ij")], axis=1)
    w = density.pdf(x)
    w = w / w.sum()
    ubar = extend_u(primal, grid)
    u = ubar(x)
    grad = ubar.gradient(x)
    revenue = B * float(w @ (np.einsum("jk,jk->j", x, grad) - u))
    _, v = majorization_profile(grad, w, B, 2001)
    return revenue, float(v.max())
