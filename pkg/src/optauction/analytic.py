"""Closed-form benchmarks for single- and two-item auctions.

Virtual values and ironing, Myerson's revenue, selling separately, the full
surplus, the Manelli-Vincent mechanism for two uniform items and the
test showing that the separate-sale vector field is infeasible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .grid import Density1D, DensitySpec

__all__ = [
    "IronedVirtual",
    "OneDimProblem",
    "full_surplus",
    "inverse_cdf",
    "ironed_virtual",
    "manelli_vincent",
    "manelli_vincent_revenue",
    "MV_PRICE",
    "MV_BUNDLE",
    "MV_REVENUE",
    "myerson_revenue",
    "selling_separately",
    "separate_sale_infeasible",
    "hinge_integral",
    "virtual_value",
]

MV_PRICE = 2.0 / 3.0
MV_BUNDLE = (4.0 - math.sqrt(2.0)) / 3.0
MV_REVENUE = (12.0 + 2.0 * math.sqrt(2.0)) / 27.0
_QUAD = {"epsabs": 1e-12, "epsrel": 1e-12, "limit": 500}


@dataclass(frozen=True)
class OneDimProblem:
    density: Density1D
    B: int = 1
    resolution: int = 20001

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.resolution < 1000:
            raise ValueError("ironing needs a resolution of at least 1000")
        xs = np.linspace(0.0, 1.0, 2001)
        if np.min(self.density.pdf(xs)) <= 0:
            raise ValueError("density must be bounded away from zero on [0, 1]")
        if np.any(np.diff(self.density.cdf(xs)) <= 0):
            raise ValueError("CDF must be strictly increasing")

    def pdf(self, x):
        return self.density.pdf(x)

    def cdf(self, x):
        return self.density.cdf(x)


def inverse_cdf(density: Density1D, t, iters: int = 64) -> np.ndarray:
    """Vectorized bisection for F^{-1}."""
    t = np.asarray(t, dtype=float)
    lo, hi = np.zeros_like(t), np.ones_like(t)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = density.cdf(mid) < t
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def virtual_value(prob: OneDimProblem, x):
    x = np.asarray(x, dtype=float)
    return x - (1.0 - prob.cdf(x)) / prob.pdf(x)


def _upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper concave hull (monotone chain), x increasing."""
    hull = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (y[b] - y[a]) * (x[i] - x[a]) <= (y[i] - y[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


@dataclass
class IronedVirtual:
    """Myerson-ironed virtual value V_bar(x) = -H'(F(x)) where H is the
    concave hull of G(t) = Q(t)(1 - t) = int_{Q(t)}^1 V rho dx.

    ``clipped`` gives max(0, V_bar), the derivative of the least
    non-negative non-increasing concave majorant of G.
    """

    prob: OneDimProblem
    t: np.ndarray
    G: np.ndarray
    hull_idx: np.ndarray
    ironed: list = field(default_factory=list)  # [(t_lo, t_hi, slope)]

    @property
    def ironed_x(self) -> list:
        d = self.prob.density
        return [(float(inverse_cdf(d, a)), float(inverse_cdf(d, b))) for a, b, _ in self.ironed]

    def _locate(self, tq: np.ndarray):
        slopes = np.full(tq.shape, np.nan)
        for a, b, s in self.ironed:
            inside = (tq >= a) & (tq <= b)
            slopes[inside] = s
        return slopes

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        v = virtual_value(self.prob, x)
        s = self._locate(self.prob.cdf(x))
        return np.where(np.isnan(s), v, -s)

    def hull(self, tq):
        """H(t): G where no ironing happens, the chord over ironed intervals."""
        tq = np.asarray(tq, dtype=float)
        out = inverse_cdf(self.prob.density, tq) * (1.0 - tq)
        for a, b, s in self.ironed:
            inside = (tq >= a) & (tq <= b)
            ga = float(inverse_cdf(self.prob.density, a)) * (1.0 - a)
            out = np.where(inside, ga + s * (tq - a), out)
        return out

    @property
    def reserve(self) -> float:
        """Smallest x with V_bar(x) >= 0."""
        f = lambda x: float(self(np.array([x]))[0])
        if f(0.0) >= 0:
            return 0.0
        return float(optimize.brentq(f, 0.0, 1.0, xtol=1e-14))

    def clipped(self, x):
        return np.maximum(0.0, self(x))

    def clipped_majorant(self, tq):
        """Least non-negative non-increasing concave majorant of G."""
        tq = np.asarray(tq, dtype=float)
        ts = float(self.prob.cdf(self.reserve))
        return np.where(tq >= ts, self.hull(tq), float(self.hull(np.array([ts]))[0]))


def ironed_virtual(prob: OneDimProblem, tol: float = 1e-10) -> IronedVirtual:
    t = np.linspace(0.0, 1.0, prob.resolution)
    G = inverse_cdf(prob.density, t) * (1.0 - t)
    idx = _upper_hull(t, G)
    ironed = []
    for a, b in zip(idx[:-1], idx[1:]):
        if b - a < 2:
            continue
        slope = (G[b] - G[a]) / (t[b] - t[a])
        gap = G[a] + slope * (t[a + 1:b] - t[a]) - G[a + 1:b]
        if gap.max() > tol:
            ironed.append((float(t[a]), float(t[b]), float(slope)))
    # merge touching intervals
    merged = []
    for iv in ironed:
        if merged and merged[-1][1] >= iv[0] and abs(merged[-1][2] - iv[2]) < 1e-9:
            merged[-1] = (merged[-1][0], iv[1], merged[-1][2])
        else:
            merged.append(iv)
    return IronedVirtual(prob, t, G, idx, merged)


def myerson_revenue(prob: OneDimProblem, ironed: IronedVirtual | None = None) -> float:
    """B int max(0, V_bar) F^(B-1) rho dx: optimal revenue for one item."""
    iv = ironed or ironed_virtual(prob)
    r = iv.reserve
    B = prob.B
    f = lambda x: float(iv(np.array([x]))[0] * prob.cdf(np.array([x]))[0] ** (B - 1) * prob.pdf(np.array([x]))[0])
    pts = sorted({p for pair in iv.ironed_x for p in pair if r < p < 1.0})
    val, _ = integrate.quad(f, r, 1.0, points=pts or None, **_QUAD)
    return B * val


def _items(densities) -> tuple:
    if isinstance(densities, DensitySpec):
        return densities.items
    if isinstance(densities, Density1D):
        return (densities,)
    return tuple(densities)


def selling_separately(densities, B: int) -> float:
    """Total revenue of running Myerson's auction item by item."""
    return float(sum(myerson_revenue(OneDimProblem(d, B)) for d in _items(densities)))


def full_surplus(densities, B: int) -> float:
    """sum_i E[max_b x_{b,i}] = sum_i B int x F_i^(B-1) rho_i dx."""
    total = 0.0
    for d in _items(densities):
        f = lambda x: x * float(d.cdf(np.array([x]))[0]) ** (B - 1) * float(d.pdf(np.array([x]))[0])
        total += B * integrate.quad(f, 0.0, 1.0, **_QUAD)[0]
    return total


def manelli_vincent(x, y):
    """Utility and region tag (Z, A, B, W) of the optimal one-bidder two-item
    uniform mechanism: items at 2/3 each or the bundle at (4 - sqrt 2)/3."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    opts = np.stack([np.zeros_like(x + y), x - MV_PRICE, y - MV_PRICE, x + y - MV_BUNDLE])
    k = np.argmax(opts, axis=0)
    u = np.take_along_axis(opts, k[None], axis=0)[0]
    tags = np.array(["Z", "A", "B", "W"])[k]
    if u.ndim == 0:
        return float(u), str(tags)
    return u, tags


_MV_GRAD = {"Z": (0.0, 0.0), "A": (1.0, 0.0), "B": (0.0, 1.0), "W": (1.0, 1.0)}


def manelli_vincent_allocation(x, y):
    _, tag = manelli_vincent(x, y)
    tag = np.asarray(tag)
    p1 = np.isin(tag, ["A", "W"]).astype(float)
    p2 = np.isin(tag, ["B", "W"]).astype(float)
    return p1, p2


def manelli_vincent_revenue(n: int = 2000) -> float:
    """Midpoint-rule integral of <x, grad u> - u over the unit square."""
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    u, _ = manelli_vincent(X, Y)
    p1, p2 = manelli_vincent_allocation(X, Y)
    return float(np.mean(X * p1 + Y * p2 - u))


def hinge_integral(densities, a: float) -> float:
    """int max(0, sum_i x_i - I a) rho(x) dx."""
    items = _items(densities)
    I = len(items)

    def partial_mean(d, L):
        # int_L^1 x rho dx
        return integrate.quad(lambda s: s * float(d.pdf(np.array([s]))[0]), L, 1.0, **_QUAD)[0]

    return _outer(items, a, lambda s, L, xs: (s - I * a) * (1.0 - float(items[-1].cdf(np.array([L]))[0]))
                  + partial_mean(items[-1], L))


def _outer(items, a, inner):
    """Integrate rho_{<I}(x) inner(sum x_{<I}, L) over the first I - 1 coordinates,
    L = max(0, I a - sum) being the lower limit on the last coordinate."""
    I = len(items)

    def at(*xs):
        s = float(sum(xs))
        L = I * a - s
        if L >= 1.0:
            return 0.0
        w = 1.0
        for d, x in zip(items[:-1], xs):
            w *= float(d.pdf(np.array([x]))[0])
        return w * inner(s, max(0.0, L), xs)

    if I == 1:
        return at()
    if I == 2:
        return integrate.quad(lambda x1: at(x1), max(0.0, 2 * a - 1.0), 1.0, **_QUAD)[0]
    opts = {"epsabs": 1e-11, "epsrel": 1e-11, "limit": 200}
    return integrate.nquad(lambda x2, x1: at(x1, x2),
                           [lambda x1: [max(0.0, 3 * a - 1.0 - x1), 1.0], [max(0.0, 3 * a - 2.0), 1.0]],
                           opts=[opts, opts])[0]


def separate_sale_infeasible(I: int, B: int, densities, a: float) -> float:
    """Margin LHS - RHS of the dual-feasibility test with u = max(0, sum x - I a).

    LHS = int (<x, grad u> - u) rho, RHS = sum_i int u_{x_i} V_bar_i rho with
    the per-item ironed virtual values (which do not depend on B). A positive
    margin means the separate-sale field cannot certify optimality.
    """
    items = _items(densities)
    if len(items) == 1 and I > 1:
        items = items * I
    if len(items) != I or not 1 <= I <= 3:
        raise ValueError(f"need 1..3 item densities matching I = {I}")
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0.0 < a < 1.0:
        raise ValueError("a must lie in (0, 1)")
    ivs = [ironed_virtual(OneDimProblem(d, B)) for d in items]
    for k, iv in enumerate(ivs):
        top = max([hi for _, hi in iv.ironed_x], default=0.0)
        if a <= top:
            raise ValueError(f"a = {a} does not clear the ironing of item {k} (up to {top:.6g})")
    last, iv_last = items[-1], ivs[-1]

    def inner(s, L, xs):
        F = float(last.cdf(np.array([L]))[0])
        mass = 1.0 - F
        vsum = sum(float(iv(np.array([x]))[0]) for iv, x in zip(ivs[:-1], xs))
        return I * a * mass - vsum * mass - float(iv_last.hull(np.array([F]))[0])

    return _outer(items, a, inner)
