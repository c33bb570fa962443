"""Concrete expanding maps, roofs and skew factors.

Every model is a full-branch family of inverse branches on the unit cube
Y = (0, 1)^m together with a roof function and, optionally, a contracting
fibre map.  Branch data are closed-form so that derivative constants are
exact up to sampling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

GAUSS_TAIL_TOL = 1e-10


# ----------------------------------------------------------------------------
# point helpers
# ----------------------------------------------------------------------------

def as_points(y, dim: int) -> np.ndarray:
    """Return ``y`` as a float array of shape (N,) for dim 1 or (N, m)."""
    arr = np.asarray(y, dtype=float)
    if dim == 1:
        return arr.reshape(-1)
    return arr.reshape(-1, dim)


def _check_domain(y: np.ndarray, tol: float = 1e-12) -> None:
    if np.any(y < -tol) or np.any(y > 1 + tol) or not np.all(np.isfinite(y)):
        raise ValueError("point outside the closed unit cube")


# ----------------------------------------------------------------------------
# branch families
# ----------------------------------------------------------------------------

class BranchFamily:
    """Indexed family of inverse branches h_k : Y -> Y.

    Subclasses provide ``h``, ``deriv`` (scalar derivative in 1D, Jacobian
    matrix otherwise), ``logdet`` and ``forward``.
    """

    dim: int = 1
    alpha: float = 1.0
    countable: bool = False

    @property
    def n_branches(self) -> int | None:
        raise NotImplementedError

    def check_index(self, k: int) -> None:
        n = self.n_branches
        if not isinstance(k, (int, np.integer)) or k < 0 or (n is not None and k >= n):
            raise IndexError(f"invalid branch index {k!r}")

    def indices(self) -> range:
        if self.n_branches is None:
            raise TypeError("countable family has no finite index range")
        return range(self.n_branches)

    def h(self, k: int, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def deriv(self, k: int, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def logdet(self, k: int, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (F(x), branch index of x)."""
        raise NotImplementedError

    def sup_det(self, k: int) -> float:
        """Sup over Y of |det Dh_k| (closed form where possible)."""
        raise NotImplementedError


@dataclass(frozen=True)
class AffineBranch:
    matrix: np.ndarray  # (m, m)
    offset: np.ndarray  # (m,)


class AffineFamily(BranchFamily):
    """Finite family h_k(y) = A_k y + c_k."""

    def __init__(self, branches: Sequence[AffineBranch], alpha: float = 1.0):
        if not branches:
            raise ValueError("empty branch family")
        self.branches = tuple(
            AffineBranch(np.atleast_2d(np.asarray(b.matrix, float)),
                         np.atleast_1d(np.asarray(b.offset, float)))
            for b in branches)
        self.dim = self.branches[0].matrix.shape[0]
        self.alpha = alpha
        self._inv = [np.linalg.inv(b.matrix) for b in self.branches]
        self._logdet = [math.log(abs(np.linalg.det(b.matrix))) for b in self.branches]

    @classmethod
    def uniform(cls, base: int, dim: int) -> "AffineFamily":
        """Branches of y -> base*y mod 1 on the m-cube.

        Index i has digits (i // base**(m-1), ..., i % base) along the axes.
        """
        out = []
        for digits in itertools.product(range(base), repeat=dim):
            out.append(AffineBranch(np.eye(dim) / base, np.asarray(digits, float) / base))
        fam = cls(out)
        fam.base = base
        return fam

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def h(self, k, y):
        self.check_index(k)
        b = self.branches[k]
        if self.dim == 1:
            return b.matrix[0, 0] * y + b.offset[0]
        return y @ b.matrix.T + b.offset

    def deriv(self, k, y):
        self.check_index(k)
        b = self.branches[k]
        if self.dim == 1:
            return np.full(np.shape(y), b.matrix[0, 0])
        return np.broadcast_to(b.matrix, np.shape(y)[:-1] + b.matrix.shape).copy()

    def logdet(self, k, y):
        self.check_index(k)
        shape = np.shape(y) if self.dim == 1 else np.shape(y)[:-1]
        return np.full(shape, self._logdet[k])

    def sup_det(self, k):
        return math.exp(self._logdet[k])

    def forward(self, x):
        x = np.asarray(x, float)
        fx = np.full_like(x, np.nan)
        idx = np.full(x.shape[0] if x.ndim else 1, -1, dtype=np.int64)
        pts = x.reshape(-1, self.dim)
        fx_flat = fx.reshape(-1, self.dim)
        for k, b in enumerate(self.branches):
            pre = (pts - b.offset) @ self._inv[k].T
            inside = np.all((pre >= 0) & (pre < 1), axis=1) & (idx < 0)
            fx_flat[inside] = pre[inside]
            idx[inside] = k
        if np.any(idx < 0):
            raise ValueError("point not in the range of any branch")
        return fx.reshape(x.shape), idx


@dataclass(frozen=True)
class MobiusBranch:
    a: float
    b: float
    c: float
    d: float


class MobiusFamily(BranchFamily):
    """Finite 1D family of Möbius branches h(y) = (a y + b) / (c y + d)."""

    dim = 1

    def __init__(self, branches: Sequence[MobiusBranch], alpha: float = 1.0):
        self.branches = tuple(branches)
        self.alpha = alpha

    @property
    def n_branches(self):
        return len(self.branches)

    def _coef(self, k):
        self.check_index(k)
        m = self.branches[k]
        return m.a, m.b, m.c, m.d

    def h(self, k, y):
        a, b, c, d = self._coef(k)
        return (a * y + b) / (c * y + d)

    def deriv(self, k, y):
        a, b, c, d = self._coef(k)
        return (a * d - b * c) / (c * y + d) ** 2

    def logdet(self, k, y):
        return np.log(np.abs(self.deriv(k, y)))

    def sup_det(self, k):
        ys = np.linspace(0.0, 1.0, 257)
        return float(np.max(np.abs(self.deriv(k, ys))))

    def forward(self, x):
        x = np.asarray(x, float).reshape(-1)
        fx = np.full_like(x, np.nan)
        idx = np.full(x.shape, -1, dtype=np.int64)
        for k in range(self.n_branches):
            a, b, c, d = self._coef(k)
            pre = (d * x - b) / (a - c * x)
            inside = (pre >= 0) & (pre < 1) & (idx < 0)
            fx[inside] = pre[inside]
            idx[inside] = k
        if np.any(idx < 0):
            raise ValueError("point not in the range of any branch")
        return fx, idx


class GaussFamily(BranchFamily):
    """Countable family h_n(y) = 1/(n + y), n >= 1, of the Gauss map.

    Branch index n >= 1 labels h_n directly.  Indices above ``n_trunc`` are
    rejected; the omitted tail carries at most ``tail_mass(n_trunc)`` of the
    total |det Dh| mass.
    """

    dim = 1
    countable = True
    alpha = 1.0

    def __init__(self, tail_tol: float = GAUSS_TAIL_TOL):
        self.tail_tol = tail_tol
        # sum_{n > N} n^-2 < 1/N
        self.n_trunc = int(math.ceil(1.0 / tail_tol))

    @property
    def n_branches(self):
        return None

    def check_index(self, k):
        if not isinstance(k, (int, np.integer)) or k < 1 or k > self.n_trunc:
            raise IndexError(f"invalid branch index {k!r}")

    @staticmethod
    def tail_mass(n_trunc: int) -> float:
        """Certified bound on sum_{n > N} sup|det Dh_n| = sum_{n>N} n^-2."""
        return 1.0 / n_trunc

    def h(self, k, y):
        self.check_index(k)
        return 1.0 / (k + y)

    def deriv(self, k, y):
        self.check_index(k)
        return -1.0 / (k + y) ** 2

    def logdet(self, k, y):
        self.check_index(k)
        return -2.0 * np.log(k + y)

    def sup_det(self, k):
        return 1.0 / k ** 2

    def forward(self, x):
        x = np.asarray(x, float).reshape(-1)
        if np.any(x <= 0):
            raise ValueError("Gauss map undefined at 0")
        inv = 1.0 / x
        n = np.floor(inv)
        return inv - n, n.astype(np.int64)


# ----------------------------------------------------------------------------
# roofs
# ----------------------------------------------------------------------------

class RoofFunction:
    """Roof r : Y -> (0, inf) with closed-form gradient."""

    description = "roof"

    def __call__(self, y):
        raise NotImplementedError

    def grad(self, y):
        raise NotImplementedError

    @property
    def lower_bound(self) -> float:
        raise NotImplementedError

    def is_constant(self) -> bool:
        return False


@dataclass
class PolyTrigRoof(RoofFunction):
    """r(y) = sum_j poly[j] y_a^j + sum (c cos 2 pi k y_a + s sin 2 pi k y_a).

    Only the coordinate ``axis`` enters; ``poly[0]`` is the constant term.
    """

    poly: tuple = (2.0,)
    trig: tuple = ()  # (k, cos_coef, sin_coef)
    axis: int = 0
    dim: int = 1

    def _coord(self, y):
        y = np.asarray(y, float)
        return y if self.dim == 1 else y[..., self.axis]

    def __call__(self, y):
        x = self._coord(y)
        out = np.zeros_like(x)
        for j, c in enumerate(self.poly):
            out = out + c * x ** j
        for k, c, s in self.trig:
            out = out + c * np.cos(2 * np.pi * k * x) + s * np.sin(2 * np.pi * k * x)
        return out

    def dcoord(self, x):
        out = np.zeros_like(np.asarray(x, float))
        for j, c in enumerate(self.poly):
            if j:
                out = out + j * c * x ** (j - 1)
        for k, c, s in self.trig:
            w = 2 * np.pi * k
            out = out - c * w * np.sin(w * x) + s * w * np.cos(w * x)
        return out

    def grad(self, y):
        x = self._coord(y)
        d = self.dcoord(x)
        if self.dim == 1:
            return d
        g = np.zeros(np.shape(y), float)
        g[..., self.axis] = d
        return g

    @property
    def lower_bound(self):
        xs = np.linspace(0.0, 1.0, 20001)
        return float(np.min(self(xs if self.dim == 1 else _axis_points(xs, self.dim, self.axis))))

    def is_constant(self):
        return all(c == 0 for c in self.poly[1:]) and all(c == 0 and s == 0 for _, c, s in self.trig)

    @property
    def description(self):
        return f"poly={list(self.poly)} trig={list(self.trig)} axis={self.axis}"


def _axis_points(xs, dim, axis):
    pts = np.full((xs.size, dim), 0.5)
    pts[:, axis] = xs
    return pts


class LogRoof(RoofFunction):
    """r(y) = -log y + c (the Gauss-map roof)."""

    def __init__(self, const: float = 2.0):
        self.const = const
        self.description = f"-log(y)+{const:g}"

    def __call__(self, y):
        return -np.log(np.asarray(y, float)) + self.const

    def grad(self, y):
        return -1.0 / np.asarray(y, float)

    @property
    def lower_bound(self):
        return self.const


# ----------------------------------------------------------------------------
# skew factor
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SkewFactor:
    """Fibre map G(y, z) = contraction * z + shift * e(y_0), e(t) = (cos 2pi t, sin 2pi t).

    Z = [-1, 1]^2 with the Euclidean metric.
    """

    contraction: float = 0.25
    shift: float = 0.25
    fiber_dim: int = 2
    C: float = 1.0

    @property
    def gamma0(self) -> float:
        return abs(self.contraction)

    def G(self, y, z):
        y = np.asarray(y, float)
        t = y if y.ndim == 1 else y[..., 0]
        e = np.stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)], axis=-1)
        return self.contraction * np.asarray(z, float) + self.shift * e


# ----------------------------------------------------------------------------
# models
# ----------------------------------------------------------------------------

@dataclass
class ModelSystem:
    model_id: str
    label: str
    family: BranchFamily
    roof: RoofFunction
    skew: SkewFactor | None = None
    notes: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.family.dim

    def with_roof(self, roof: RoofFunction, model_id: str | None = None) -> "ModelSystem":
        return ModelSystem(model_id or f"{self.model_id}+roof", self.label, self.family,
                           roof, self.skew, self.notes, dict(self.extra))

    def forward(self, x):
        return self.family.forward(x)


MODEL_IDS = {
    "A": "doubling-quadratic",
    "B": "doubling-constant",
    "C": "solenoid-skew",
    "D": "gauss",
    "E": "planar-triple",
}


def quadratic_roof(dim: int = 1) -> PolyTrigRoof:
    return PolyTrigRoof(poly=(2.0, 1.0, -1.0), dim=dim)


def coboundary_roof(amp: float = 0.1, const: float = 2.0) -> PolyTrigRoof:
    """r = xi o F - xi + const for xi(y) = amp sin 2 pi y and F(y) = 2y mod 1."""
    return PolyTrigRoof(poly=(const,), trig=((2, 0.0, amp), (1, 0.0, -amp)))


def get_model(name: str) -> ModelSystem:
    key = name.strip()
    if key in MODEL_IDS:
        key = MODEL_IDS[key]
    if key == "doubling-quadratic":
        return ModelSystem(key, "A", AffineFamily.uniform(2, 1), quadratic_roof())
    if key == "doubling-constant":
        return ModelSystem(key, "B", AffineFamily.uniform(2, 1), PolyTrigRoof(poly=(2.0,)))
    if key == "solenoid-skew":
        return ModelSystem(key, "C", AffineFamily.uniform(2, 1), quadratic_roof(), SkewFactor())
    if key == "gauss":
        return ModelSystem(key, "D", GaussFamily(), LogRoof(2.0))
    if key == "planar-triple":
        return ModelSystem(key, "E", AffineFamily.uniform(3, 2), quadratic_roof(dim=2))
    if key == "doubling-coboundary":
        return ModelSystem(key, "A*", AffineFamily.uniform(2, 1), coboundary_roof())
    raise KeyError(f"unknown model {name!r}")


def list_models() -> list[dict]:
    out = []
    for label, mid in MODEL_IDS.items():
        m = get_model(mid)
        out.append({
            "label": label,
            "id": mid,
            "dimension": m.dim,
            "branches": "inf" if m.family.countable else m.family.n_branches,
            "countable": m.family.countable,
            "roof": m.roof.description,
            "skew_gamma0": None if m.skew is None else m.skew.gamma0,
        })
    return out


def load_model_toml(path) -> ModelSystem:
    """Load a custom model from TOML.

    Expected layout::

        id = "my-map"
        dimension = 1
        [[branches]]
        kind = "affine"          # or "mobius" (1D only)
        matrix = [[0.5]]
        offset = [0.0]
        [roof]
        poly = [2.0, 1.0, -1.0]
        trig = [[1, 0.0, 0.1]]
        axis = 0
    """
    from towerlab.config import load_toml

    data = load_toml(path)
    dim = int(data.get("dimension", 1))
    specs = data.get("branches", [])
    kinds = {b.get("kind", "affine") for b in specs}
    if kinds == {"affine"}:
        fam = AffineFamily([AffineBranch(np.asarray(b["matrix"], float), np.asarray(b["offset"], float))
                            for b in specs])
    elif kinds == {"mobius"} and dim == 1:
        fam = MobiusFamily([MobiusBranch(*map(float, b["coeffs"])) for b in specs])
    else:
        raise ValueError("branches must be all affine, or all mobius in dimension 1")
    if fam.dim != dim:
        raise ValueError("branch matrices disagree with dimension")
    r = data.get("roof", {})
    roof = PolyTrigRoof(poly=tuple(r.get("poly", [2.0])),
                        trig=tuple(tuple(t) for t in r.get("trig", [])),
                        axis=int(r.get("axis", 0)), dim=dim)
    if roof.lower_bound <= 0:
        raise ValueError("roof must be bounded below by a positive constant")
    return ModelSystem(str(data.get("id", "custom")), "custom", fam, roof)


# ----------------------------------------------------------------------------
# branch words
# ----------------------------------------------------------------------------

def _validate_word(model: ModelSystem, word) -> tuple[int, ...]:
    w = tuple(int(k) for k in word)
    if not w:
        raise ValueError("empty branch word")
    for k in w:
        model.family.check_index(k)
    return w


def branch_eval(model: ModelSystem, word, y):
    """Evaluate h_w = h_{w0} o ... o h_{w(n-1)} at y.

    Returns (h_w(y), Dh_w(y), log|det Dh_w(y)|).  In 1D the derivative is a
    scalar; otherwise it is the Jacobian matrix.
    """
    fam = model.family
    w = _validate_word(model, word)
    scalar = np.ndim(y) == 0 or (fam.dim > 1 and np.ndim(y) == 1)
    x = as_points(y, fam.dim)
    _check_domain(x)
    if fam.dim == 1:
        jac = np.ones_like(x)
    else:
        jac = np.broadcast_to(np.eye(fam.dim), x.shape[:-1] + (fam.dim, fam.dim)).copy()
    ld = np.zeros(x.shape[0])
    for k in reversed(w):
        d = fam.deriv(k, x)
        ld = ld + fam.logdet(k, x)
        jac = d * jac if fam.dim == 1 else d @ jac
        x = fam.h(k, x)
    if scalar:
        return (x[0] if fam.dim == 1 else x[0]), jac[0], float(ld[0])
    return x, jac, ld


def birkhoff_roof(model: ModelSystem, word, y):
    """r_n(h_w(y)) = sum_{j<n} r(F^j h_w y), accumulated along the word."""
    fam = model.family
    w = _validate_word(model, word)
    scalar = np.ndim(y) == 0 or (fam.dim > 1 and np.ndim(y) == 1)
    x = as_points(y, fam.dim)
    _check_domain(x)
    total = np.zeros(x.shape[0])
    for k in reversed(w):
        x = fam.h(k, x)
        total = total + model.roof(x)
    return float(total[0]) if scalar else total


def birkhoff_roof_grad(model: ModelSystem, word, y):
    """Gradient of y -> r_n(h_w(y)) by the chain rule."""
    fam = model.family
    w = _validate_word(model, word)
    x = as_points(y, fam.dim)
    if fam.dim == 1:
        jac = np.ones_like(x)
        g = np.zeros_like(x)
    else:
        jac = np.broadcast_to(np.eye(fam.dim), x.shape[:-1] + (fam.dim, fam.dim)).copy()
        g = np.zeros_like(x)
    for k in reversed(w):
        d = fam.deriv(k, x)
        jac = d * jac if fam.dim == 1 else d @ jac
        x = fam.h(k, x)
        gr = model.roof.grad(x)
        g = g + (gr * jac if fam.dim == 1 else np.einsum("ni,nij->nj", gr, jac))
    return g


# ----------------------------------------------------------------------------
# verifiers
# ----------------------------------------------------------------------------

@dataclass
class GibbsMarkovReport:
    """Sampled constants for conditions (i)-(iv).

    Suprema are sampled lower bounds of the continuum quantities.
    """

    model_id: str
    C1: float
    rho0: float
    derivative_sup: dict  # word length -> max |Dh_w|
    logdet_holder: float
    roof_derivative: float
    moment_eps: float
    moment_partial: float
    moment_tail_bound: float
    moment_core: float  # partial sum with the constant factor e^{eps inf r} removed (Gauss only)
    tiling_defect: float
    conditions: dict

    @property
    def ok(self) -> bool:
        return all(self.conditions.values())


def _sample_words(fam: BranchFamily, n: int, rng, n_samples: int) -> list[tuple[int, ...]]:
    if fam.n_branches is not None:
        nb = fam.n_branches
        if nb ** n <= n_samples:
            return list(itertools.product(range(nb), repeat=n))
        words = [tuple([k] * n) for k in range(nb)]
        words += [tuple(rng.integers(0, nb, n)) for _ in range(n_samples)]
        return words
    # countable: small indices dominate the sup
    words = [tuple([k] * n) for k in range(1, 5)]
    words += [tuple(rng.integers(1, 7, n)) for _ in range(n_samples // 2)]
    words += [tuple(rng.geometric(0.3, n)) for _ in range(n_samples // 2)]
    return words


def _grid_points(dim: int, res: int, inset: bool = True) -> np.ndarray:
    ax = (np.arange(res) + 0.5) / res if inset else np.linspace(0, 1, res)
    if dim == 1:
        return ax
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def holder_seminorm_samples(values_fn: Callable, dim: int, alpha: float, q: int = 12,
                            n_base: int = 4096, rng=None) -> float:
    """Max of |f(x) - f(x')| / |x - x'|^alpha over pairs at separations 2^-j, j = 2..q.

    A lower bound of the true seminorm.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    best = 0.0
    for j in range(2, q + 1):
        sep = 2.0 ** -j
        if dim == 1:
            x = rng.uniform(0, 1 - sep, n_base)
            x2 = x + sep
        else:
            direc = rng.normal(size=(n_base, dim))
            direc /= np.linalg.norm(direc, axis=1, keepdims=True)
            x = rng.uniform(sep, 1 - sep, (n_base, dim))
            x2 = x + sep * direc
        diff = np.abs(values_fn(x) - values_fn(x2))
        best = max(best, float(np.max(diff)) / sep ** alpha)
    return best


def verify_gibbs_markov(model: ModelSystem, grid_resolution: int, eps: float = 0.5,
                        max_word: int = 10, seed: int = 0,
                        gauss_partial: int = 10 ** 6) -> GibbsMarkovReport:
    """Estimate the constants of conditions (i)-(iv) for ``model``."""
    if grid_resolution < 64:
        raise ValueError("grid too coarse: need at least 64 points per axis")
    fam = model.family
    rng = np.random.default_rng(seed)
    dim = fam.dim
    # grid_resolution counts points per axis; sampling is thinned for speed
    res_axis = min(grid_resolution, 4096 if dim == 1 else 128)
    ys = _grid_points(dim, res_axis)
    ys_closed = ys

    # (i): sup |Dh_w| over sampled words
    sup_by_n = {}
    for n in range(1, max_word + 1):
        best = 0.0
        for w in _sample_words(fam, n, rng, 64):
            _, jac, _ = branch_eval(model, w, ys_closed[:: max(1, len(ys_closed) // 256)])
            if dim == 1:
                val = np.max(np.abs(jac))
            else:
                val = np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)))
            best = max(best, float(val))
        sup_by_n[n] = best
    tail_ns = [n for n in sup_by_n if n >= max(2, max_word // 2)]
    rho0 = max(sup_by_n[n] ** (1.0 / n) for n in tail_ns)
    C1_i = max(sup_by_n[n] / rho0 ** n for n in sup_by_n)

    # (ii) and (iii), per branch
    if fam.n_branches is not None:
        branch_ids = list(fam.indices())
    else:
        branch_ids = list(range(1, 65))
    ld_holder = 0.0
    roof_der = 0.0
    for k in branch_ids:
        ld_holder = max(ld_holder, holder_seminorm_samples(
            lambda x, k=k: fam.logdet(k, x), dim, fam.alpha, rng=rng, n_base=512))
        g = birkhoff_roof_grad(model, (k,), ys)
        roof_der = max(roof_der, float(np.max(np.abs(g) if dim == 1 else np.linalg.norm(g, axis=-1))))

    # (iv)
    if fam.n_branches is not None:
        total = 0.0
        for k in branch_ids:
            rsup = float(np.max(np.abs(model.roof(fam.h(k, ys)))))
            total += math.exp(eps * rsup) * fam.sup_det(k)
        partial, tail, core = total, 0.0, float("nan")
    else:
        const = getattr(model.roof, "const", 2.0)
        partial, tail = gauss_moment_series(eps, gauss_partial, const)
        core = partial / math.exp(eps * const)

    # tiling of Y by branch ranges
    tiling = _tiling_defect(fam, res_axis)

    C1 = max(1.0, C1_i, ld_holder, roof_der)
    conditions = {
        "i": bool(rho0 < 1.0 and np.isfinite(C1_i)),
        "ii": bool(np.isfinite(ld_holder) and ld_holder <= C1),
        "iii": bool(np.isfinite(roof_der) and roof_der <= C1),
        "iv": bool(np.isfinite(partial + tail)),
        "tiling": bool(tiling <= 1.0 / res_axis + 1e-12),
    }
    return GibbsMarkovReport(model.model_id, C1, rho0, sup_by_n, ld_holder, roof_der, eps,
                             partial, tail, core, tiling, conditions)


def gauss_moment_series(eps: float, n_partial: int, const: float = 2.0) -> tuple[float, float]:
    """Partial sum and tail bound of sum_n e^{eps sup r o h_n} sup|det Dh_n| for the Gauss map.

    sup_y r(h_n y) = log(n + 1) + const and sup|det Dh_n| = n^-2, so the terms are
    e^{eps const} (n+1)^eps n^-2.  For eps < 1 the tail beyond N is at most
    e^{eps const} 2^eps N^{eps-1} / (1 - eps).
    """
    if not 0 < eps < 1:
        raise ValueError("need 0 < eps < 1 for a summable series")
    n = np.arange(1, n_partial + 1, dtype=float)
    terms = math.exp(eps * const) * (n + 1) ** eps / n ** 2
    partial = float(np.sum(terms[::-1]))
    tail = math.exp(eps * const) * 2 ** eps * n_partial ** (eps - 1) / (1 - eps)
    return partial, tail


def _tiling_defect(fam: BranchFamily, res: int) -> float:
    """|Leb(union of sampled ranges) - Leb(Y)| measured on a grid."""
    xs = _grid_points(fam.dim, min(res, 1024 if fam.dim == 1 else 128))
    try:
        _, idx = fam.forward(xs)
    except ValueError:
        return 1.0
    covered = np.mean(idx >= 0)
    if fam.n_branches is not None:
        # every range counted once: ranges are disjoint when forward is single valued
        return float(abs(1.0 - covered))
    return float(abs(1.0 - covered))


@dataclass
class SkewReport:
    C: float
    gamma0: float
    ratios: np.ndarray  # per step, max over samples of d_Z(f^n)/d_Z(start)


def verify_skew_contraction(model: ModelSystem, n_pairs: int, n_steps: int, seed: int = 0,
                            skew: SkewFactor | None = None) -> SkewReport:
    """Estimate (C, gamma0) in d(f^n(y,z), f^n(y,z')) <= C gamma0^n d(z,z')."""
    sk = skew or model.skew
    if sk is None:
        raise ValueError(f"model {model.model_id} has no skew factor")
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, n_pairs)
    z = rng.uniform(-1, 1, (n_pairs, sk.fiber_dim))
    z2 = rng.uniform(-1, 1, (n_pairs, sk.fiber_dim))
    d0 = np.linalg.norm(z - z2, axis=1)
    # ratios of distances below ``floor`` are dominated by rounding of O(1) coordinates
    floor = 1e-4
    ratios = []
    step_max = 0.0
    prev = d0
    for _ in range(n_steps):
        z, z2 = sk.G(y, z), sk.G(y, z2)
        y, _ = model.family.forward(y)
        d = np.linalg.norm(z - z2, axis=1)
        ok = prev > floor
        if np.any(ok):
            step_max = max(step_max, float(np.max(d[ok] / prev[ok])))
        ratios.append(float(np.max(d / d0)))
        prev = d
    ratios = np.asarray(ratios)
    gamma0 = step_max
    steps = np.arange(1, n_steps + 1)
    usable = ratios * np.max(d0) > floor
    usable[0] = True
    C = float(np.max(ratios[usable] / gamma0 ** steps[usable]))
    return SkewReport(C, gamma0, ratios)
