"""Discretization of the majorizing law eta = law(xi^(B-1)), xi ~ U[0, 1].

A partition 0 = q_0 < ... < q_M = 1 yields segment masses w_m = eta([q_{m-1}, q_m])
and conditional means t_m. In ``exact`` mode the breakpoints are chosen so that
the rule sum_m phi(t_m) w_m integrates exactly every phi that is constant on
[0, t_1] and [t_M, 1] and linear between consecutive t_m.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize

__all__ = [
    "MajorizationPartition",
    "PartitionError",
    "build_partition",
    "partition_from_breakpoints",
    "eta_cdf",
    "eta_quantile",
    "eta_partial_mean",
    "eta_hinge",
    "integrate_piecewise_linear",
    "read_partition_csv",
]

MODES = ("uniform", "quantile", "exact")


class PartitionError(ValueError):
    """Invalid partition request or a non-converged exact construction."""


def eta_cdf(B: int, t):
    """CDF of eta: t^(1/(B-1)) for B >= 2, the unit atom at 1 for B = 1."""
    t = np.asarray(t, dtype=float)
    if B < 1:
        raise ValueError("B must be >= 1")
    if B == 1:
        return np.where(t >= 1.0, 1.0, 0.0)
    return np.power(np.clip(t, 0.0, 1.0), 1.0 / (B - 1))


def eta_quantile(B: int, u):
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    if B == 1:
        return np.ones_like(u)
    return np.power(u, B - 1.0)


def eta_partial_mean(B: int, t):
    """int_0^t s d eta(s)."""
    t = np.asarray(t, dtype=float)
    if B == 1:
        return np.where(t >= 1.0, 1.0, 0.0)
    return np.power(np.clip(t, 0.0, 1.0), B / (B - 1.0)) / B


def eta_hinge(B: int, t):
    """int max(0, s - t) d eta(s) = int_0^1 max(0, z^(B-1) - t) dz."""
    t = np.asarray(t, dtype=float)
    return (1.0 / B - eta_partial_mean(B, t)) - t * (1.0 - eta_cdf(B, t))


@dataclass(frozen=True)
class MajorizationPartition:
    B: int
    q: np.ndarray
    w: np.ndarray
    t: np.ndarray
    mode: str = "uniform"
    residual: float = 0.0

    @property
    def M(self) -> int:
        return len(self.w)

    @property
    def epsilon(self) -> float:
        """Largest segment width max_m (q_m - q_{m-1})."""
        return float(np.max(np.diff(self.q)))

    def tail_integral(self) -> float:
        """int_{t_M}^1 (t - t_M) d eta."""
        return float(eta_hinge(self.B, self.t[-1]))

    def refine(self, m: int) -> "MajorizationPartition":
        """Split segment ``m`` (0-based) at its midpoint."""
        q = np.insert(self.q, m + 1, 0.5 * (self.q[m] + self.q[m + 1]))
        return partition_from_breakpoints(self.B, q, mode=self.mode if self.B == 2 else "custom")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["m", "q_m", "w_m", "t_m"])
            wr.writerow([0, repr(float(self.q[0])), "", ""])
            for m in range(self.M):
                wr.writerow([m + 1, repr(float(self.q[m + 1])), repr(float(self.w[m])), repr(float(self.t[m]))])


def partition_from_breakpoints(B: int, q, mode: str = "custom") -> MajorizationPartition:
    q = np.asarray(q, dtype=float)
    if q[0] != 0.0 or q[-1] != 1.0 or np.any(np.diff(q) <= 0):
        raise PartitionError("breakpoints must increase strictly from 0 to 1")
    if B == 1:
        if len(q) != 2:
            raise PartitionError("B = 1 admits only the single-atom partition (M = 1)")
        return MajorizationPartition(1, q, np.array([1.0]), np.array([1.0]), mode)
    F = eta_cdf(B, q)
    w = np.diff(F)
    t = np.diff(eta_partial_mean(B, q)) / w
    return MajorizationPartition(B, q, w, t, mode)


def _exact_residual(B: int, interior: np.ndarray) -> np.ndarray:
    # For the clipped ramp between t_m and t_{m+1}: its eta-integral must equal
    # the mass that the rule assigns to it, 1 - F(q_m).
    q = np.concatenate([[0.0], interior, [1.0]])
    F = eta_cdf(B, q)
    w = np.diff(F)
    t = np.diff(eta_partial_mean(B, q)) / w
    a, b = t[:-1], t[1:]
    Fa, Fb = eta_cdf(B, a), eta_cdf(B, b)
    ramp = (eta_partial_mean(B, b) - eta_partial_mean(B, a) - a * (Fb - Fa)) / (b - a)
    return ramp - Fb + F[1:-1]


def _exact_fixed_point_step(B: int, q: np.ndarray) -> np.ndarray:
    F = eta_cdf(B, q)
    t = np.diff(eta_partial_mean(B, q)) / np.diff(F)
    a, b = t[:-1], t[1:]
    Fa, Fb = eta_cdf(B, a), eta_cdf(B, b)
    ramp = (eta_partial_mean(B, b) - eta_partial_mean(B, a) - a * (Fb - Fa)) / (b - a)
    out = q.copy()
    out[1:-1] = eta_quantile(B, Fb - ramp)
    return out


def build_partition(
    B: int,
    M: int,
    mode: str = "uniform",
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> MajorizationPartition:
    """Partition [0, 1] into M segments and discretize eta on it.

    ``uniform`` uses q_m = m/M, ``quantile`` uses eta-quantiles, ``exact``
    solves for the exact-integration breakpoints starting from the quantiles.
    """
    if M < 1:
        raise PartitionError("M must be >= 1")
    if B < 1:
        raise PartitionError("B must be >= 1")
    if mode not in MODES:
        raise PartitionError(f"unknown partition mode {mode!r}")
    if B == 1:
        if M != 1:
            raise PartitionError("B = 1 collapses eta to an atom at 1; use M = 1")
        return MajorizationPartition(1, np.array([0.0, 1.0]), np.array([1.0]), np.array([1.0]), mode)

    if mode == "uniform":
        return partition_from_breakpoints(B, np.linspace(0.0, 1.0, M + 1), mode)
    q = eta_quantile(B, np.linspace(0.0, 1.0, M + 1))
    q[0], q[-1] = 0.0, 1.0
    if mode == "quantile" or M == 1:
        return partition_from_breakpoints(B, q, mode)
    if B == 2:
        # eta is uniform; equal segments are exact
        return partition_from_breakpoints(B, np.linspace(0.0, 1.0, M + 1), "exact")

    # A few hundred fixed-point sweeps get close; a root-finding polish finishes
    # (the plain sweep contracts too slowly to reach 1e-10 in the iteration cap).
    step = 0.0
    for _ in range(min(max_iter, 300)):
        nq = _exact_fixed_point_step(B, q)
        step = float(np.max(np.abs(nq - q)))
        q = nq
        if step < tol:
            break
    res = float(np.max(np.abs(_exact_residual(B, q[1:-1]))))
    if res >= tol:
        sol = optimize.root(lambda x: _exact_residual(B, x), q[1:-1], method="hybr",
                            options={"xtol": 1e-15, "maxfev": 100 * M + max_iter})
        cand = np.concatenate([[0.0], sol.x, [1.0]])
        if np.all(np.diff(cand) > 0):
            q = cand
        res = float(np.max(np.abs(_exact_residual(B, q[1:-1]))))
    if res >= tol:
        raise PartitionError(f"exact partition did not converge: residual {res:.3e}")
    p = partition_from_breakpoints(B, q, "exact")
    return MajorizationPartition(p.B, p.q, p.w, p.t, "exact", res)


def integrate_piecewise_linear(partition: MajorizationPartition, values) -> float:
    """Exact eta-integral of the function equal to ``values[m]`` at t_m,
    constant beyond the first and last node and linear in between."""
    B, t = partition.B, partition.t
    v = np.asarray(values, dtype=float)
    if B == 1:
        return float(v[-1])
    total = v[0] * float(eta_cdf(B, t[0])) + v[-1] * (1.0 - float(eta_cdf(B, t[-1])))
    if len(t) > 1:
        a, b = t[:-1], t[1:]
        slope = np.diff(v) / (b - a)
        icpt = v[:-1] - slope * a
        total += float(np.sum(icpt * (eta_cdf(B, b) - eta_cdf(B, a))
                              + slope * (eta_partial_mean(B, b) - eta_partial_mean(B, a))))
    return total


def read_partition_csv(path, B: int, mode: str = "custom") -> MajorizationPartition:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    q = np.array([float(r[1]) for r in rows])
    w = np.array([float(r[2]) for r in rows[1:]])
    t = np.array([float(r[3]) for r in rows[1:]])
    return MajorizationPartition(B, q, w, t, mode)
