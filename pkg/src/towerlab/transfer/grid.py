"""Collocation grids on the unit cube, multilinear interpolation and norm estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class CollocationGrid:
    """Uniform nodes i/(n-1) on [0, 1]^dim, flattened in C order."""

    dim: int
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs at least 3 nodes per axis")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def size(self) -> int:
        return self.n ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def points(self) -> np.ndarray:
        if self.dim == 1:
            return self.axis
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], -1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights for integrals against Lebesgue measure."""
        w1 = np.full(self.n, self.h)
        w1[[0, -1]] *= 0.5
        w = w1
        for _ in range(self.dim - 1):
            w = np.multiply.outer(w, w1)
        return np.ravel(w)

    def interp_matrix(self, pts: np.ndarray) -> sparse.csr_matrix:
        """Sparse matrix M with (M @ values) = multilinear interpolant at ``pts``.

        Points outside [0, 1]^dim are clamped to the boundary.
        """
        pts = np.asarray(pts, float)
        if self.dim == 1:
            pts = pts.reshape(-1, 1)
        m = pts.shape[0]
        x = np.clip(pts, 0.0, 1.0) / self.h
        i0 = np.clip(np.floor(x).astype(np.int64), 0, self.n - 2)
        fr = x - i0
        rows, cols, vals = [], [], []
        for corner in range(2 ** self.dim):
            bits = [(corner >> a) & 1 for a in range(self.dim)]
            idx = np.zeros(m, np.int64)
            w = np.ones(m)
            for a, bit in enumerate(bits):
                idx = idx * self.n + i0[:, a] + bit
                w = w * (fr[:, a] if bit else 1.0 - fr[:, a])
            rows.append(np.arange(m))
            cols.append(idx)
            vals.append(w)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(m, self.size))

    def interp(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        return self.interp_matrix(pts) @ values

    def dyadic_pairs(self):
        """Yield (index_a, index_b, distance) for node pairs at dyadic separations.

        Separations 2^j nodes along each axis and, in 2D, along the diagonal.
        """
        n, dim = self.n, self.dim
        ids = np.arange(self.size).reshape(self.shape)
        sep = 1
        while sep < n:
            if dim == 1:
                yield ids[:-sep], ids[sep:], sep * self.h
            else:
                yield ids[:-sep, :].ravel(), ids[sep:, :].ravel(), sep * self.h
                yield ids[:, :-sep].ravel(), ids[:, sep:].ravel(), sep * self.h
                yield ids[:-sep, :-sep].ravel(), ids[sep:, sep:].ravel(), sep * self.h * np.sqrt(2)
            sep *= 2


def holder_seminorm(grid: CollocationGrid, values: np.ndarray, alpha: float = 1.0) -> float:
    """max |v(x) - v(x')| / d(x, x')^alpha over dyadic node pairs (a lower bound)."""
    v = np.asarray(values)
    best = 0.0
    for a, b, d in grid.dyadic_pairs():
        diff = np.abs(v[b] - v[a])
        if diff.size:
            best = max(best, float(diff.max()) / d ** alpha)
    return best


@dataclass
class GridFunction:
    """Values on a collocation grid, interpolated multilinearly between nodes.

    Norm estimates are sampled and therefore lower bounds of the continuum norms.
    """

    grid: CollocationGrid
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.grid.size,):
            self.values = self.values.reshape(self.grid.size)

    @classmethod
    def from_callable(cls, grid: CollocationGrid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.points)))

    def __call__(self, pts):
        return self.grid.interp(self.values, pts)

    def sup(self) -> float:
        if "sup" not in self._cache:
            self._cache["sup"] = float(np.max(np.abs(self.values)))
        return self._cache["sup"]

    def seminorm(self, alpha: float = 1.0) -> float:
        key = ("semi", alpha)
        if key not in self._cache:
            self._cache[key] = holder_seminorm(self.grid, self.values, alpha)
        return self._cache[key]

    def integral(self, density: np.ndarray | None = None) -> complex | float:
        w = self.grid.weights if density is None else self.grid.weights * density
        return np.sum(w * self.values)


def holder_norms(v: GridFunction, b: float, alpha: float = 1.0) -> tuple[float, float, float]:
    """(|v|_inf, |v|_alpha estimate, ||v||_b = max{|v|_inf, |v|_alpha / (1 + |b|^alpha)})."""
    sup = v.sup()
    semi = v.seminorm(alpha)
    return sup, semi, max(sup, semi / (1.0 + abs(b) ** alpha))
