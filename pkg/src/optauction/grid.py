"""Discretization of the type space [0, 1]^I into n^I equal cubes.

Each cube carries its center and a conservative weight: the minimum of the
density over the cube times the cube volume. The mass lost by taking minima
is collected in a slack weight ``mu0``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "Density1D",
    "DensitySpec",
    "DensityError",
    "ModelTooLargeError",
    "TypeGrid",
    "build_grid",
    "read_grid_csv",
]

DEFAULT_MAX_CELLS = 1_000_000


class DensityError(ValueError):
    """Raised when a density fails validation."""


class ModelTooLargeError(ValueError):
    """Raised when a grid would exceed the configured cell budget."""


def _erf_cdf(z):
    return 0.5 * (1.0 + special.erf(z / math.sqrt(2.0)))


@dataclass(frozen=True)
class Density1D:
    """A density on [0, 1] with its CDF.

    ``monotone`` is one of ``"none"``, ``"increasing"``, ``"decreasing"`` and
    lets the grid pick the exact cell minimum at an endpoint.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    cdf: Callable[[np.ndarray], np.ndarray]
    monotone: str = "none"
    family: str = "custom"
    params: dict = field(default_factory=dict)

    @classmethod
    def uniform(cls) -> "Density1D":
        return cls(
            pdf=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            cdf=lambda x: np.clip(np.asarray(x, dtype=float), 0.0, 1.0),
            monotone="increasing",  # constant; either endpoint is exact
            family="uniform",
        )

    @classmethod
    def linear(cls, slope: float) -> "Density1D":
        """rho(x) = 1 + slope * (x - 1/2), valid for |slope| <= 2."""
        if abs(slope) > 2.0:
            raise DensityError(f"linear density needs |slope| <= 2, got {slope}")

        def pdf(x):
            x = np.asarray(x, dtype=float)
            return 1.0 + slope * (x - 0.5)

        def cdf(x):
            x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
            return x + 0.5 * slope * (x * x - x)

        mono = "increasing" if slope >= 0 else "decreasing"
        return cls(pdf, cdf, mono, "linear", {"slope": float(slope)})

    @classmethod
    def power(cls, a: float) -> "Density1D":
        """rho(x) = (a + 1) x^a; vanishes at 0 for a > 0."""
        if a < 0:
            raise DensityError("power density needs a >= 0")

        def pdf(x):
            x = np.asarray(x, dtype=float)
            return (a + 1.0) * np.power(np.clip(x, 0.0, 1.0), a)

        def cdf(x):
            return np.power(np.clip(np.asarray(x, dtype=float), 0.0, 1.0), a + 1.0)

        return cls(pdf, cdf, "increasing", "power", {"a": float(a)})

    @classmethod
    def normal_mixture(
        cls,
        weights: Sequence[float],
        means: Sequence[float],
        sds: Sequence[float],
    ) -> "Density1D":
        """Mixture of normals truncated to [0, 1]."""
        w = np.asarray(weights, dtype=float)
        m = np.asarray(means, dtype=float)
        s = np.asarray(sds, dtype=float)
        if not (w.shape == m.shape == s.shape) or np.any(w < 0) or np.any(s <= 0):
            raise DensityError("normal_mixture needs matching non-negative weights and sds > 0")
        w = w / w.sum()
        lo = _erf_cdf((0.0 - m) / s)
        z = float(np.sum(w * (_erf_cdf((1.0 - m) / s) - lo)))

        def pdf(x):
            x = np.asarray(x, dtype=float)[..., None]
            dens = np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
            return np.sum(w * dens, axis=-1) / z

        def cdf(x):
            x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)[..., None]
            return np.sum(w * (_erf_cdf((x - m) / s) - lo), axis=-1) / z

        params = {"weights": w.tolist(), "means": m.tolist(), "sds": s.tolist()}
        return cls(pdf, cdf, "none", "normal_mixture", params)

    @classmethod
    def from_dict(cls, d: dict) -> "Density1D":
        family = d.get("family", "uniform")
        if family == "uniform":
            return cls.uniform()
        if family == "linear":
            return cls.linear(d["slope"])
        if family == "power":
            return cls.power(d["a"])
        if family == "normal_mixture":
            return cls.normal_mixture(d["weights"], d["means"], d["sds"])
        raise DensityError(f"unknown density family {family!r}")

    def to_dict(self) -> dict:
        if self.family == "custom":
            raise DensityError("custom densities cannot be serialized")
        return {"family": self.family, **self.params}

    def cell_minima(self, n: int) -> np.ndarray:
        """Minimum of the pdf on each interval [a/n, (a+1)/n]."""
        edges = np.linspace(0.0, 1.0, n + 1)
        left, right = self.pdf(edges[:-1]), self.pdf(edges[1:])
        if self.monotone == "increasing":
            return np.asarray(left, dtype=float)
        if self.monotone == "decreasing":
            return np.asarray(right, dtype=float)
        out = np.empty(n)
        frac = np.linspace(0.0, 1.0, 19)
        for a in range(n):
            lo, hi = edges[a], edges[a + 1]
            xs = lo + (hi - lo) * frac
            vals = self.pdf(xs)
            best = float(np.min(vals))
            i = int(np.argmin(vals))
            if 0 < i < len(xs) - 1:
                res = optimize.minimize_scalar(
                    lambda x: float(self.pdf(np.array([x]))[0]),
                    bounds=(xs[i - 1], xs[i + 1]),
                    method="bounded",
                    options={"xatol": 1e-12},
                )
                best = min(best, float(res.fun))
            out[a] = best
        return out


@dataclass(frozen=True)
class DensitySpec:
    """Product density on [0, 1]^I, one marginal per item."""

    items: tuple

    @classmethod
    def uniform(cls, I: int) -> "DensitySpec":
        return cls(tuple(Density1D.uniform() for _ in range(I)))

    @classmethod
    def from_dict(cls, d: dict, I: int | None = None) -> "DensitySpec":
        kind = d.get("kind", "uniform")
        if kind == "uniform":
            if I is None:
                raise DensityError("uniform density spec needs the item count")
            return cls.uniform(I)
        if kind == "product":
            items = tuple(Density1D.from_dict(x) for x in d["items"])
            if I is not None and len(items) != I:
                raise DensityError(f"density has {len(items)} marginals, expected {I}")
            return cls(items)
        raise DensityError(f"unknown density kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform"}
        return {"kind": "product", "items": [d.to_dict() for d in self.items]}

    @property
    def I(self) -> int:
        return len(self.items)

    @property
    def kind(self) -> str:
        if all(d.family == "uniform" for d in self.items):
            return "uniform"
        return "product"

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.ones(x.shape[0])
        for k, d in enumerate(self.items):
            out = out * d.pdf(x[:, k])
        return out

    def validate(self, samples: int = 1001) -> None:
        xs = np.linspace(0.0, 1.0, samples)
        for k, d in enumerate(self.items):
            vals = np.asarray(d.pdf(xs), dtype=float)
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise DensityError(f"item {k}: density has negative or non-finite samples")
            if not np.any(vals > 0):
                raise DensityError(f"item {k}: density vanishes identically")
            c = np.asarray(d.cdf(xs), dtype=float)
            if abs(c[0]) > 1e-9 or abs(c[-1] - 1.0) > 1e-9:
                raise DensityError(f"item {k}: CDF must run from 0 to 1")
            if np.any(np.diff(c) < -1e-12):
                raise DensityError(f"item {k}: CDF is not nondecreasing")
            total, _ = integrate.quad(lambda x: float(d.pdf(np.array([x]))[0]), 0.0, 1.0,
                                      epsabs=1e-13, epsrel=1e-13, limit=200)
            if abs(total - 1.0) > 1e-9:
                raise DensityError(f"item {k}: density integrates to {total!r}, not 1")


@dataclass(frozen=True)
class TypeGrid:
    """Cell centers ``theta`` (N x I), weights ``mu`` (N,), slack ``mu0``.

    Cells are ordered row-major by their lattice multi-index ``index``
    (last item varies fastest).
    """

    n: int
    I: int
    theta: np.ndarray
    mu: np.ndarray
    mu0: float
    index: np.ndarray

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["j"] + [f"theta_{k + 1}" for k in range(self.I)] + ["mu"])
            for j in range(self.N):
                wr.writerow([j] + [repr(float(v)) for v in self.theta[j]] + [repr(float(self.mu[j]))])


def _lattice(n: int, I: int) -> np.ndarray:
    return np.stack(np.unravel_index(np.arange(n ** I), (n,) * I), axis=1).astype(np.int64)


def _slack(mu: np.ndarray) -> float:
    s = 1.0 - math.fsum(mu.tolist())
    return 0.0 if s < 1e-12 else s


def build_grid(n: int, density: DensitySpec, max_cells: int = DEFAULT_MAX_CELLS) -> TypeGrid:
    """Build the n^I cube grid with weights min(rho over cell) / n^I."""
    if n < 1:
        raise ValueError("n must be >= 1")
    I = density.I
    if not 1 <= I <= 3:
        raise ValueError(f"supported item counts are 1..3, got {I}")
    if n ** I > max_cells:
        raise ModelTooLargeError(f"n^I = {n ** I} cells exceeds the budget of {max_cells}")
    density.validate()

    index = _lattice(n, I)
    theta = (2.0 * index + 1.0) / (2.0 * n)
    # product density: the cube minimum factorizes over items
    mins = [d.cell_minima(n) for d in density.items]
    mu = np.ones(n ** I)
    for k in range(I):
        mu = mu * mins[k][index[:, k]]
    mu = mu / float(n ** I)
    mu = np.clip(mu, 0.0, None)
    return TypeGrid(n=n, I=I, theta=theta, mu=mu, mu0=_slack(mu), index=index)


def read_grid_csv(path) -> TypeGrid:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    I = len(header) - 2
    theta = np.array([[float(v) for v in r[1:1 + I]] for r in body]).reshape(-1, I)
    mu = np.array([float(r[-1]) for r in body])
    n = round(len(body) ** (1.0 / I))
    index = np.rint(theta * n - 0.5).astype(np.int64)
    return TypeGrid(n=n, I=I, theta=theta, mu=mu, mu0=_slack(mu), index=index)
