"""Twisted and normalized transfer operators discretized on collocation grids."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import bernoulli

from towerlab.models import ModelSystem, birkhoff_roof, branch_eval, verify_gibbs_markov
from towerlab.transfer.grid import CollocationGrid, GridFunction, holder_norms

DEFAULT_EPS = 0.05
DEFAULT_RES = {1: 2 ** 14, 2: 512}
GAUSS_RES = 2049
GAUSS_EXPLICIT = 4096
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class TwistParameter:
    """s = sigma + i b with |sigma| below the abscissa eps."""

    sigma: float
    b: float = 0.0
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not abs(self.sigma) < self.eps:
            raise ValueError(f"|sigma| = {abs(self.sigma)} not below abscissa {self.eps}")

    @property
    def s(self) -> complex:
        return complex(self.sigma, self.b)


def as_twist(s, eps: float = DEFAULT_EPS) -> TwistParameter:
    if isinstance(s, TwistParameter):
        return s
    s = complex(s)
    return TwistParameter(s.real, s.imag, eps)


def hurwitz_zeta(a, q, terms: int = 6) -> tuple[np.ndarray, float]:
    """Complex Hurwitz zeta sum_{k>=0} (q+k)^-a by Euler-Maclaurin at q.

    Valid for Re a > 1 and q >= 1 large; returns (values, remainder bound).
    """
    a = complex(a)
    q = np.asarray(q, float)
    out = q ** (1 - a) / (a - 1) + 0.5 * q ** (-a)
    B = bernoulli(2 * terms + 2)
    rising = a
    for j in range(1, terms + 1):
        out = out + B[2 * j] / math.factorial(2 * j) * rising * q ** (-a - 2 * j + 1)
        rising *= (a + 2 * j - 1) * (a + 2 * j)
    nxt = abs(B[2 * terms + 2]) / math.factorial(2 * terms + 2) * abs(rising)
    bound = 2 * nxt * float(np.min(q)) ** (-a.real - 2 * terms - 1) * abs(a + 2 * terms + 1) \
        / (a.real + 2 * terms + 1)
    return out, bound


def _model_key(model: ModelSystem):
    return (model.model_id, type(model.family).__name__, model.family.n_branches,
            getattr(model.roof, "description", repr(model.roof)))


class TransferOperator:
    """P_s^n on a collocation grid, assembled from the length-n branch words.

    v o h_w is evaluated by multilinear interpolation of grid values.  For the
    Gauss family (single step only) branches n <= ``explicit`` are explicit and
    the rest are summed in closed form against the interpolant, which is
    affine on the first grid cell, via Hurwitz zeta values.
    """

    def __init__(self, model: ModelSystem, res: int | None = None, n_steps: int = 1,
                 explicit: int = GAUSS_EXPLICIT):
        self.model = model
        self.n_steps = int(n_steps)
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.countable = model.family.countable
        if res is None:
            res = GAUSS_RES if self.countable else DEFAULT_RES[model.dim]
        self.grid = CollocationGrid(model.dim, int(res))
        self._mats: dict = {}
        if self.countable:
            if self.n_steps != 1:
                raise ValueError("countable families support single-step operators only")
            self.explicit = int(explicit)
            if self.explicit + 1 <= 1.0 / self.grid.h:
                raise ValueError("explicit branch count too small for the grid")
            self.words = None
            self.tail_bound = 0.0
        else:
            fam = model.family
            self.words = list(itertools.product(range(fam.n_branches), repeat=self.n_steps))
            self._build_finite()

    # -- assembly -----------------------------------------------------------
    def _build_finite(self):
        pts = self.grid.points
        rows, cols, base, roof, ldet = [], [], [], [], []
        self.word_data = {}
        for w in self.words:
            x, _, ld = branch_eval(self.model, w, pts)
            r = birkhoff_roof(self.model, w, pts)
            M = self.grid.interp_matrix(x).tocoo()
            self.word_data[w] = (M.tocsr(), r, ld)
            rows.append(M.row)
            cols.append(M.col)
            base.append(M.data)
            roof.append(r[M.row])
            ldet.append(ld[M.row])
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self._base = np.concatenate(base)
        self._roof = np.concatenate(roof)
        self._ldet = np.concatenate(ldet)

    def _gauss_matrix(self, s: complex) -> np.ndarray:
        g = self.grid
        y = g.points
        N = g.size
        re = np.zeros(N * N)
        im = np.zeros(N * N)
        row = np.arange(N)
        for lo in range(1, self.explicit + 1, 256):
            n = np.arange(lo, min(lo + 256, self.explicit + 1))[:, None]
            t = n + y[None, :]
            wgt = np.exp(-2 * s) * t ** (-2 - s)
            x = 1.0 / t
            xi = x / g.h
            i0 = np.clip(np.floor(xi).astype(np.int64), 0, N - 2)
            fr = xi - i0
            for idx, ww in ((i0, wgt * (1 - fr)), (i0 + 1, wgt * fr)):
                flat = (row[None, :] * N + idx).ravel()
                re += np.bincount(flat, ww.real.ravel(), N * N)
                im += np.bincount(flat, ww.imag.ravel(), N * N)
        P = (re + 1j * im).reshape(N, N)
        q = self.explicit + 1 + y
        z0, e0 = hurwitz_zeta(2 + s, q)
        z1, e1 = hurwitz_zeta(3 + s, q)
        c = np.exp(-2 * s)
        # interpolant on [0, h] is v0 + (v1 - v0) x / h
        P[:, 0] += c * (z0 - z1 / g.h)
        P[:, 1] += c * z1 / g.h
        self.tail_bound = float(abs(c) * (e0 + e1 / g.h))
        return P

    def matrix(self, s):
        s = complex(s)
        if s not in self._mats:
            if len(self._mats) > 8:
                self._mats.clear()
            if self.countable:
                M = self._gauss_matrix(s)
            else:
                data = self._base * np.exp(self._ldet - s * self._roof)
                if s.imag == 0:
                    data = data.real
                M = sparse.csr_matrix((data, (self._rows, self._cols)), shape=(self.grid.size,) * 2)
            self._mats[s] = M
        return self._mats[s]

    def apply(self, s, values: np.ndarray) -> np.ndarray:
        return self.matrix(s) @ values

    def branch_apply(self, word, s, values: np.ndarray) -> np.ndarray:
        """A_{s,h_w} v = e^{-s r_n o h_w} |det Dh_w| v o h_w on the grid."""
        M, r, ld = self.word_data[tuple(word)]
        return np.exp(ld - complex(s) * r) * (M @ values)


_OPS: dict = {}


def get_operator(model: ModelSystem, res: int | None = None, n_steps: int = 1) -> TransferOperator:
    key = (_model_key(model), res, n_steps)
    if key not in _OPS:
        if len(_OPS) > 16:
            _OPS.clear()
        _OPS[key] = TransferOperator(model, res, n_steps)
    return _OPS[key]


def twisted_values(model: ModelSystem, s, v, pts, explicit: int = GAUSS_EXPLICIT) -> tuple[np.ndarray, float]:
    """Evaluate P_s v exactly at ``pts`` for a callable v.

    Returns (values, certified truncation bound).  For the Gauss family the
    branches beyond ``explicit`` use the third-order Taylor expansion of v at 0;
    the bound covers the neglected remainder.
    """
    s = complex(s)
    fam = model.family
    pts = np.asarray(pts, float)
    if not fam.countable:
        out = 0.0
        for k in fam.indices():
            x, _, ld = branch_eval(model, (k,), pts)
            out = out + np.exp(ld - s * model.roof(x)) * v(x)
        return np.asarray(out), 0.0
    y = pts.reshape(-1)
    real = s.imag == 0
    sr = s.real if real else s
    out = np.zeros(y.size, float if real else complex)
    for lo in range(1, explicit + 1, 512):
        n = np.arange(lo, min(lo + 512, explicit + 1))[:, None]
        t = n + y[None, :]
        vals = np.asarray(v((1.0 / t).ravel())).reshape(t.shape)
        out = out + np.sum(np.exp(-2 * sr) * t ** (-2 - sr) * vals, axis=0)
    # one-sided 5-point stencils for v'(0) and v''(0)
    eta = 1e-3
    f = v(eta * np.arange(5.0))
    d1 = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * eta)
    d2 = (35 * f[0] - 104 * f[1] + 114 * f[2] - 56 * f[3] + 11 * f[4]) / (12 * eta ** 2)
    q = explicit + 1 + y
    z0, e0 = hurwitz_zeta(2 + s, q)
    z1, e1 = hurwitz_zeta(3 + s, q)
    z2, e2 = hurwitz_zeta(4 + s, q)
    c = np.exp(-2 * s)
    tail = c * (f[0] * z0 + d1 * z1 + 0.5 * d2 * z2)
    if real and not np.iscomplexobj(out):
        tail = tail.real
    out = out + tail
    xs = np.linspace(0.0, 1.0 / explicit, 9)
    h3 = 1e-2
    third = np.max(np.abs(v(xs + 3 * h3) - 3 * v(xs + 2 * h3) + 3 * v(xs + h3) - v(xs))) / h3 ** 3
    # remainder <= sup|v'''| / 6 * sum (n+y)^-5, doubled to cover stencil error
    bound = float(2 * (third + 1.0) * abs(c) / (24.0 * explicit ** 4) + abs(c) * (e0 + e1 + e2))
    return out, bound


def _values(op: TransferOperator, v) -> np.ndarray:
    if isinstance(v, GridFunction):
        if v.grid != op.grid:
            raise ValueError("grid function lives on a different grid")
        return v.values
    if callable(v):
        return np.asarray(v(op.grid.points))
    arr = np.asarray(v)
    if arr.ndim == 0:
        return np.full(op.grid.size, arr)
    return arr.reshape(op.grid.size)


def apply_twisted(model: ModelSystem, s, v, res: int | None = None, n_steps: int = 1,
                  eps: float = DEFAULT_EPS) -> GridFunction:
    """P_s^n v on the grid; a callable v is sampled at the nodes first."""
    tw = as_twist(s, eps)
    op = get_operator(model, res, n_steps)
    vals = _values(op, v)
    if not np.all(np.isfinite(vals)):
        raise ValueError("v must be finite")
    out = op.apply(tw.s, vals)
    if op.countable and op.tail_bound > TAIL_TOL:
        raise ValueError(f"truncation tail bound {op.tail_bound:.3g} exceeds {TAIL_TOL}")
    return GridFunction(op.grid, out)


@dataclass
class EigenData:
    sigma: float
    lam: float
    f: GridFunction
    residual: float
    iterations: int
    tail_bound: float = 0.0
    n_steps: int = 1
    extra: dict = field(default_factory=dict)


_EIG: dict = {}


def leading_eigendata(model: ModelSystem, sigma: float = 0.0, res: int | None = None,
                      n_steps: int = 1, eps: float = DEFAULT_EPS, tol: float = 1e-13,
                      max_iter: int = 2000) -> EigenData:
    """Power iteration for the leading eigenpair of P_sigma^n, normalized to integral 1."""
    tw = as_twist(sigma, eps)
    if tw.b != 0:
        raise ValueError("leading_eigendata needs real sigma")
    key = (_model_key(model), float(sigma), res, n_steps)
    if key in _EIG:
        return _EIG[key]
    op = get_operator(model, res, n_steps)
    P = op.matrix(tw.sigma)
    P = P.real if not sparse.issparse(P) else P
    w = op.grid.weights
    f = np.ones(op.grid.size)
    lam = 0.0
    for it in range(1, max_iter + 1):
        g = np.real(P @ f)
        lam = float(np.sum(w * g))  # integral of f is 1
        g = g / lam
        diff = float(np.max(np.abs(g - f)))
        f = g
        if diff < tol:
            break
    else:
        raise RuntimeError(f"power iteration did not converge in {max_iter} steps (sigma={sigma})")
    if np.min(f) <= 0:
        raise RuntimeError("leading eigenfunction lost positivity")
    res_ = float(np.max(np.abs(np.real(P @ f) - lam * f)))
    ed = EigenData(float(sigma), lam, GridFunction(op.grid, f), res_, it,
                   getattr(op, "tail_bound", 0.0), n_steps)
    if len(_EIG) > 32:
        _EIG.clear()
    _EIG[key] = ed
    return ed


def apply_normalized(model: ModelSystem, s, v, eig: EigenData | None = None, res: int | None = None,
                     n_steps: int = 1, eps: float = DEFAULT_EPS) -> GridFunction:
    """L_s^n v = (lam_sigma^n f_sigma)^-1 P_s^n (f_sigma v), with eigendata of P_sigma^n."""
    tw = as_twist(s, eps)
    if eig is None:
        eig = leading_eigendata(model, tw.sigma, res, n_steps, eps)
    op = get_operator(model, res, n_steps)
    f = eig.f.values
    out = op.apply(tw.s, f * _values(op, v)) / (eig.lam * f)
    return GridFunction(op.grid, out)


# ----------------------------------------------------------------------------
# probes
# ----------------------------------------------------------------------------

def random_test_functions(grid: CollocationGrid, k: int, rng: np.random.Generator,
                          kmax: int = 64, complex_: bool = True) -> list[np.ndarray]:
    """Smooth random trig sums and bumps with frequencies up to ``kmax``."""
    pts = grid.points
    out = []
    for j in range(k):
        if grid.dim == 1:
            x = pts
        else:
            x = pts @ rng.normal(size=grid.dim)
        if j % 4 == 3:
            c = rng.uniform(0.1, 0.9)
            wid = 10.0 ** rng.uniform(-2.5, -0.5)
            v = np.exp(-((x - c) / wid) ** 2)
        else:
            terms = rng.integers(1, 5)
            v = np.zeros(grid.size, complex)
            for _ in range(terms):
                freq = rng.integers(-kmax, kmax + 1)
                v += (rng.normal() + 1j * rng.normal()) * np.exp(2j * np.pi * freq * x)
            v += rng.normal()
        out.append(v if complex_ else np.real(v))
    return out


def C2_chain(model: ModelSystem, grid_resolution: int = 256) -> float:
    """C1^2 / (1 - rho0), the chain-rule constant for Birkhoff sums of the roof."""
    rep = verify_gibbs_markov(model, grid_resolution)
    return rep.C1 ** 2 / (1.0 - rep.rho0)


@dataclass
class LYReport:
    n: int
    s: complex
    C3: float
    rho: float
    rho0: float
    slack: float
    trials: int
    ok: bool


def lasota_yorke_probe(model: ModelSystem, s, n: int, trials: int = 100, seed: int = 0,
                       slack: float = 0.05, alpha: float = 1.0, res: int | None = None,
                       eps: float = DEFAULT_EPS) -> LYReport:
    """Fit (C3, rho) in |L_s^n v|_a <= C3 (1+|b|^a)|v|_inf + C3 rho^n |v|_a.

    C3 is the smallest constant >= 1 valid for every trial with rho^n replaced
    by 1; rho is then the smallest value making all trials satisfy the bound.
    """
    tw = as_twist(s, eps)
    op = get_operator(model, res, 1)
    eig = leading_eigendata(model, tw.sigma, res, 1, eps)
    rng = np.random.default_rng(seed)
    funcs = [np.ones(op.grid.size, complex)]
    funcs += random_test_functions(op.grid, trials - 1, rng, kmax=max(8, op.grid.n // 64))
    X, Y, Z = [], [], []
    for v in funcs:
        gv = GridFunction(op.grid, v)
        w = v
        for _ in range(n):
            w = op.apply(tw.s, eig.f.values * w) / (eig.lam * eig.f.values)
        X.append((1 + abs(tw.b) ** alpha) * gv.sup())
        Y.append(gv.seminorm(alpha))
        Z.append(GridFunction(op.grid, w).seminorm(alpha))
    X, Y, Z = map(np.asarray, (X, Y, Z))
    den = X + Y
    C3 = max(1.0, float(np.max(np.where(den > 0, Z / np.where(den > 0, den, 1), 0.0))))
    rhs = np.where(Y > 0, (Z / C3 - X) / np.where(Y > 0, Y, 1), 0.0)
    rho = float(np.max(np.clip(rhs, 0, None)) ** (1.0 / n))
    rho0 = verify_gibbs_markov(model, 256).rho0 ** alpha
    return LYReport(n, tw.s, C3, rho, rho0, slack, len(funcs), bool(rho <= rho0 + slack))


def C3_ly(model: ModelSystem, s=0.0, n: int = 8, trials: int = 100, seed: int = 0) -> float:
    """Empirical Lasota-Yorke constant from ``lasota_yorke_probe``."""
    return lasota_yorke_probe(model, s, n, trials, seed).C3


def probe_dictionary(grid: CollocationGrid, b: float, size: int, rng: np.random.Generator,
                    C4: float = 2.0) -> list[np.ndarray]:
    """Trig polynomials across frequencies up to ~|b| plus cone-shaped functions e^{i b phi}."""
    pts = grid.points
    x = pts if grid.dim == 1 else pts[:, 0]
    out = [np.ones(grid.size, complex)]
    kmax = max(4, int(abs(b)))
    for j in range(size - 1):
        kind = j % 3
        if kind == 0:
            k = int(rng.integers(1, kmax + 1))
            out.append(np.exp(2j * np.pi * k * x + 1j * rng.uniform(0, 2 * np.pi)))
        elif kind == 1:
            v = np.zeros(grid.size, complex)
            for _ in range(3):
                k = int(rng.integers(0, kmax + 1))
                v += (rng.normal() + 1j * rng.normal()) * np.exp(2j * np.pi * k * x)
            out.append(v)
        else:
            # |d/dx (b phi)| <= C4 |b| / 2 with a slowly varying modulus
            phi = np.zeros(grid.size)
            for _ in range(3):
                k = int(rng.integers(1, 6))
                phi += rng.uniform(-1, 1) * np.sin(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi)) / (2 * np.pi * k)
            phi *= C4 / (2 * 3)
            mod = 1.0 + 0.3 * np.cos(2 * np.pi * x * rng.integers(1, 4))
            out.append(mod * np.exp(1j * abs(b) * phi + 1j * rng.uniform(0, 2 * np.pi)))
    return out


@dataclass
class NormProbe:
    s: complex
    table: dict  # n -> estimate of ||P_s^n||_b (a lower bound)
    estimate: float
    dictionary_size: int


def norm_contraction_probe(model: ModelSystem, s, n: int, size: int = 48, seed: int = 0,
                           alpha: float = 1.0, res: int | None = None,
                           eps: float = DEFAULT_EPS) -> NormProbe:
    """max over a test dictionary of ||P_s^k v||_b / ||v||_b for k = 1..n.

    Dictionary maximization only bounds the operator norm from below.
    """
    tw = as_twist(s, eps)
    op = get_operator(model, res, 1)
    rng = np.random.default_rng(seed)
    b = tw.b
    dic = probe_dictionary(op.grid, b, size, rng)
    V = np.stack(dic, 1)
    norms0 = np.array([holder_norms(GridFunction(op.grid, V[:, j]), b, alpha)[2] for j in range(V.shape[1])])
    P = op.matrix(tw.s)
    table = {}
    for k in range(1, n + 1):
        V = P @ V
        nk = [holder_norms(GridFunction(op.grid, V[:, j]), b, alpha)[2] for j in range(V.shape[1])]
        table[k] = float(np.max(np.asarray(nk) / norms0))
    return NormProbe(tw.s, table, table[n], len(dic))
