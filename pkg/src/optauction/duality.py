"""Dual certificates for the auction LP.

The duals of the three majorization families give, per item k, values
phi[m, k] of a convex cost at the segment means, a cell potential psi[j, k]
and a vector field c[j, k]. The piecewise-linear cost is rebuilt as
phi_k(t) = max(0, max_j (t c[j, k] - psi[j, k])).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import TypeGrid
from .ic_engine import scan_violations
from .lp_core import DualSolution, PrimalSolution
from .majorization import MajorizationPartition, eta_cdf

__all__ = [
    "CertificateError",
    "CheckResult",
    "CertificateReport",
    "DualCertificate",
    "GapReport",
    "PiecewiseLinearPhi",
    "certify_gap",
    "check_certificate",
    "extract_certificate",
    "read_certificate_json",
    "reconstruct_phi",
]

SIGN_TOL = 1e-7


class CertificateError(ValueError):
    pass


@dataclass
class DualCertificate:
    phi: np.ndarray  # (M, I)
    psi: np.ndarray  # (N, I)
    c: np.ndarray  # (N, I)
    t: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    bound_objective: float = 0.0  # upper-bound duals of zero-weight cells

    @property
    def dual_objective(self) -> float:
        return float(np.sum(self.phi * self.w[:, None]) + np.sum(self.psi * self.mu[:, None])
                     + self.bound_objective)

    @property
    def I(self) -> int:
        return self.c.shape[1]

    @classmethod
    def zeros(cls, grid: TypeGrid, partition: MajorizationPartition) -> "DualCertificate":
        N, I, M = grid.N, grid.I, partition.M
        return cls(np.zeros((M, I)), np.zeros((N, I)), np.zeros((N, I)),
                   partition.t.copy(), partition.w.copy(), grid.mu.copy())

    def lt_residual(self) -> np.ndarray:
        """phi[m, k] + psi[j, k] - t_m c[j, k] as an (N, M, I) array."""
        return self.phi[None, :, :] + self.psi[:, None, :] - self.t[None, :, None] * self.c[:, None, :]

    def to_json(self) -> dict:
        return {
            "phi": self.phi.tolist(),
            "psi": self.psi.tolist(),
            "c": self.c.tolist(),
            "dual_objective": self.dual_objective,
            "bound_objective": self.bound_objective,
            "t": self.t.tolist(),
            "w": self.w.tolist(),
            "mu": self.mu.tolist(),
        }


def read_certificate_json(path) -> DualCertificate:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    try:
        I = len(d["phi"][0]) if d["phi"] else len(d["c"][0])
        return DualCertificate(
            np.asarray(d["phi"], dtype=float).reshape(-1, I),
            np.asarray(d["psi"], dtype=float).reshape(-1, I),
            np.asarray(d["c"], dtype=float).reshape(-1, I),
            np.asarray(d["t"], dtype=float),
            np.asarray(d["w"], dtype=float),
            np.asarray(d["mu"], dtype=float),
            float(d.get("bound_objective", 0.0)),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed certificate: {exc}") from exc


def extract_certificate(dual: DualSolution, grid: TypeGrid, partition: MajorizationPartition,
                        upper=None) -> DualCertificate:
    """Read (phi, psi, c) off the tagged row duals.

    Raises :class:`CertificateError` when a family is missing or a dual has
    the wrong sign beyond ``SIGN_TOL``; tiny negative noise is zeroed.
    """
    if dual.status != "optimal":
        raise CertificateError(f"dual status is {dual.status!r}, not optimal")
    for fam in ("mjT", "mjJ", "mjE"):
        if fam not in dual.rows:
            raise CertificateError(f"dual lacks the {fam} family")
    N, I, M = grid.N, grid.I, partition.M
    phi = np.asarray(dual.rows["mjT"], dtype=float).reshape(M, I)
    psi = np.asarray(dual.rows["mjJ"], dtype=float).reshape(N, I)
    c = np.asarray(dual.rows["mjE"], dtype=float).reshape(N, I)
    for name, arr in (("phi", phi), ("psi", psi), ("c", c)):
        if arr.size and arr.min() < -SIGN_TOL:
            raise CertificateError(f"{name} has a negative dual {arr.min()!r}")
    bound = 0.0
    pu = dual.bounds.get("p_upper")
    if pu is not None:
        if upper is None:
            upper = np.where(grid.mu <= 0, 1.0, 0.0)[:, None] * np.ones((1, I))
        bound = float(np.sum(np.asarray(pu) * upper))
    return DualCertificate(np.clip(phi, 0, None), np.clip(psi, 0, None), np.clip(c, 0, None),
                           partition.t.copy(), partition.w.copy(), grid.mu.copy(), bound)


class PiecewiseLinearPhi:
    """t -> max(0, max_j (slope_j t - offset_j)) on [0, 1], stored as its upper envelope."""

    def __init__(self, slopes, offsets):
        a = np.concatenate([[0.0], np.asarray(slopes, dtype=float)])
        b = np.concatenate([[0.0], -np.asarray(offsets, dtype=float)])
        order = np.lexsort((b, a))
        a, b = a[order], b[order]
        # equal slopes: keep the largest intercept (last after lexsort)
        keep = np.ones(len(a), dtype=bool)
        keep[:-1] = a[1:] != a[:-1]
        a, b = a[keep], b[keep]
        hull_a, hull_b = [], []
        for ai, bi in zip(a, b):
            while len(hull_a) >= 2:
                a1, b1, a2, b2 = hull_a[-2], hull_b[-2], hull_a[-1], hull_b[-1]
                if (bi - b1) * (a2 - a1) >= (b2 - b1) * (ai - a1):
                    hull_a.pop()
                    hull_b.pop()
                else:
                    break
            hull_a.append(ai)
            hull_b.append(bi)
        a, b = np.array(hull_a), np.array(hull_b)
        x = (b[:-1] - b[1:]) / (a[1:] - a[:-1]) if len(a) > 1 else np.zeros(0)
        # clip to the unit interval
        lo = np.searchsorted(x, 0.0, side="right")
        hi = np.searchsorted(x, 1.0, side="left")
        self.slopes = a[lo:hi + 1]
        self.intercepts = b[lo:hi + 1]
        self.breaks = x[lo:hi]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breaks, t, side="right")
        # the zero line belongs to the envelope; a break that underflows to 0 can clip it out
        return np.maximum(0.0, self.slopes[idx] * t + self.intercepts[idx])

    def knots(self) -> np.ndarray:
        return np.concatenate([[0.0], self.breaks, [1.0]])


def reconstruct_phi(cert: DualCertificate, k: int) -> PiecewiseLinearPhi:
    return PiecewiseLinearPhi(cert.c[:, k], cert.psi[:, k])


def c_eta(B: int) -> float:
    """3 (1 + 1 / eta([1/2, 1]))."""
    top = 1.0 if B == 1 else 1.0 - float(eta_cdf(B, 0.5))
    return 3.0 * (1.0 + 1.0 / top)


def is_exact_partition(partition: MajorizationPartition) -> bool:
    if partition.B == 1 or partition.mode == "exact":
        return True
    # eta is uniform for B = 2 and equal segments are exact
    return partition.B == 2 and np.ptp(np.diff(partition.q)) <= 1e-12


@dataclass
class GapReport:
    primal_objective: float
    dual_objective: float
    epsilon: float
    C_eta: float
    linear_bound: float | None
    quadratic_bound: float | None
    tail_integral: float
    c_max_sum: float
    notes: list = field(default_factory=list)

    @property
    def weak_duality_residual(self) -> float:
        return self.dual_objective - self.primal_objective

    @property
    def upper_bound(self) -> float | None:
        vals = [v for v in (self.linear_bound, self.quadratic_bound) if v is not None]
        return min(vals) if vals else None

    @property
    def certified_gap(self) -> float | None:
        ub = self.upper_bound
        return None if ub is None else ub - self.primal_objective

    def to_dict(self) -> dict:
        return {
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "weak_duality_residual": self.weak_duality_residual,
            "epsilon": self.epsilon,
            "C_eta": self.C_eta,
            "linear_bound": self.linear_bound,
            "quadratic_bound": self.quadratic_bound,
            "tail_integral": self.tail_integral,
            "c_max_sum": self.c_max_sum,
            "upper_bound": self.upper_bound,
            "notes": list(self.notes),
        }


def certify_gap(primal_obj: float, cert: DualCertificate, partition: MajorizationPartition) -> GapReport:
    """Bracket the value of the un-discretized majorization program.

    The linear bound (1 + eps C) obj needs eps <= 1/6; the quadratic bound
    obj + tail * sum_k max_j c[j, k] needs an exact partition.
    """
    eps = partition.epsilon
    C = c_eta(partition.B)
    notes = []
    linear = None
    if eps <= 1.0 / 6.0:
        linear = (1.0 + eps * C) * primal_obj
    else:
        notes.append(f"linear bound omitted: epsilon {eps:.4g} > 1/6")
    tail = partition.tail_integral()
    csum = float(np.sum(cert.c.max(axis=0))) if cert.c.size else 0.0
    quad = None
    if is_exact_partition(partition):
        quad = primal_obj + tail * csum
    else:
        notes.append("quadratic bound omitted: partition is not exact")
    return GapReport(primal_obj, cert.dual_objective, eps, C, linear, quad, tail, csum, notes)


@dataclass
class CheckResult:
    passed: bool
    worst: float
    where: object = None
    tol: float = 0.0

    def to_dict(self) -> dict:
        w = self.where
        if isinstance(w, (tuple, list, np.ndarray)):
            w = [int(x) for x in w]
        elif isinstance(w, (np.integer,)):
            w = int(w)
        return {"passed": bool(self.passed), "worst": float(self.worst), "where": w, "tol": self.tol}


@dataclass
class CertificateReport:
    checks: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.checks.values())

    def failures(self) -> list:
        return [k for k, r in self.checks.items() if not r.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": {k: r.to_dict() for k, r in self.checks.items()}}


def _lower_check(values: np.ndarray, tol: float) -> CheckResult:
    """Pass when every value >= -tol; reports the smallest."""
    if values.size == 0:
        return CheckResult(True, 0.0, None, tol)
    i = int(np.argmin(values))
    where = np.unravel_index(i, values.shape) if values.ndim > 1 else i
    return CheckResult(bool(values.flat[i] >= -tol), float(values.flat[i]), where, tol)


def _abs_check(values: np.ndarray, tol) -> CheckResult:
    if values.size == 0:
        return CheckResult(True, 0.0, None, float(np.max(tol)) if np.size(tol) else 0.0)
    excess = np.abs(values) - tol
    i = int(np.argmax(excess))
    where = np.unravel_index(i, values.shape) if values.ndim > 1 else i
    t = float(np.broadcast_to(tol, values.shape).flat[i])
    return CheckResult(bool(excess.flat[i] <= 0), float(np.abs(values).flat[i]), where, t)


def check_certificate(primal: PrimalSolution, cert: DualCertificate, grid: TypeGrid,
                      partition: MajorizationPartition, tol: float = 1e-6,
                      mass_tol: float = 1e-6) -> CertificateReport:
    """Verify a primal/certificate pair; failures carry the worst offender.

    Checks: weak and strong duality, lt feasibility, phi monotonicity,
    ir, ic over all ordered pairs, mj-E slackness, the Fenchel condition where
    the coupling has mass, and the ex-post estimate <theta, p> - u - sum phi(p) >= 0.
    """
    N, I = grid.N, grid.I
    mu, t = grid.mu, partition.t
    u, p, pi = primal.u, primal.p, primal.pi
    primal_obj = float(np.sum(mu * (np.einsum("jk,jk->j", grid.theta, p) - u)))
    dual_obj = cert.dual_objective
    checks = {}
    checks["weak_duality"] = _lower_check(np.array([dual_obj - primal_obj]), 1e-7)
    checks["strong_duality"] = _abs_check(np.array([dual_obj - primal_obj]), tol)
    checks["lt_feasibility"] = _lower_check(cert.lt_residual(), 1e-7)
    checks["phi_monotone"] = _lower_check(np.diff(cert.phi, axis=0), 1e-7)
    checks["ir"] = _lower_check(u, 1e-7)
    _, worst_ic = scan_violations(u, p, grid, tol=np.inf, irreducible_only=False)
    checks["ic"] = CheckResult(bool(worst_ic <= 1e-7), float(max(worst_ic, 0.0)), None, 1e-7)

    has_pi = pi.size > 0 and pi.shape[1] == len(t)
    if has_pi:
        mass = pi.sum(axis=1)  # (N, I)
        supply = np.einsum("jmk,m->jk", pi, t)
        slack_e = supply - mu[:, None] * p
        row_scale = np.maximum(1.0, np.maximum(mu, t.max())[:, None])
        checks["slackness_E"] = _abs_check(cert.c * slack_e, tol * row_scale)
    else:
        mass = None

    phis = [reconstruct_phi(cert, k) for k in range(I)]
    phi_at_p = np.stack([phis[k](p[:, k]) for k in range(I)], axis=1) if N else np.zeros((0, I))
    fenchel = phi_at_p + cert.psi - p * cert.c
    if mass is not None:
        active = mass > mass_tol * np.maximum(mu, 1e-300)[:, None]
        active &= mu[:, None] > 0
        checks["fenchel"] = _abs_check(np.where(active, fenchel, 0.0), tol)
    expost = np.einsum("jk,jk->j", grid.theta, p) - u - phi_at_p.sum(axis=1)
    checks["ex_post"] = _lower_check(expost[mu > 0], tol)
    if checks["ex_post"].where is not None:
        checks["ex_post"].where = int(np.nonzero(mu > 0)[0][checks["ex_post"].where])
    return CertificateReport(checks)
