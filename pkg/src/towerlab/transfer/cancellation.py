"""UNI estimates, ball families, the cutoff chi and cone iterations for L_s^{n0}."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import brentq

from towerlab.models import ModelSystem, birkhoff_roof, birkhoff_roof_grad, branch_eval
from towerlab.transfer.grid import CollocationGrid, GridFunction, holder_seminorm
from towerlab.transfer.operators import (
    DEFAULT_EPS,
    EigenData,
    as_twist,
    get_operator,
    leading_eigendata,
)

UNTYPED, TYPE_H1, TYPE_H2 = 0, 1, 2


# ----------------------------------------------------------------------------
# UNI
# ----------------------------------------------------------------------------

def _unit_field(ell, dim: int):
    if ell is None:
        e = np.zeros(dim)
        e[0] = 1.0
        return lambda y: np.broadcast_to(e, (np.shape(y)[0], dim)) if dim > 1 else np.ones(np.shape(y)[0])
    if callable(ell):
        return ell
    e = np.asarray(ell, float).reshape(dim)
    e = e / np.linalg.norm(e)
    return lambda y: np.broadcast_to(e, (np.shape(y)[0], dim)) if dim > 1 else np.full(np.shape(y)[0], e[0])


def psi(model: ModelSystem, h1, h2, y):
    """psi_{h1,h2} = r_{n0} o h1 - r_{n0} o h2."""
    return birkhoff_roof(model, h1, y) - birkhoff_roof(model, h2, y)


def dpsi(model: ModelSystem, h1, h2, y):
    return birkhoff_roof_grad(model, h1, y) - birkhoff_roof_grad(model, h2, y)


@dataclass
class UniReport:
    E: float
    n0: int
    h1: tuple
    h2: tuple
    smoothed_ok: bool
    fd_rel_err: float
    dpsi_range: tuple

    @property
    def holds(self) -> bool:
        return self.E > 0


def uni_estimate(model: ModelSystem, h1, h2, n0: int | None = None, ell=None, res: int | None = None,
                 n_fd: int = 1000, seed: int = 0) -> UniReport:
    """E = inf over grid nodes of |D psi . ell|, with a finite-difference cross-check."""
    h1, h2 = tuple(h1), tuple(h2)
    if len(h1) != len(h2):
        raise ValueError("branch words must have equal length")
    if n0 is not None and len(h1) != n0:
        raise ValueError(f"branch words have length {len(h1)}, expected n0 = {n0}")
    dim = model.dim
    grid = CollocationGrid(dim, res or (2 ** 14 if dim == 1 else 256))
    pts = grid.points
    field_ = _unit_field(ell, dim)
    g = dpsi(model, h1, h2, pts)
    lv = field_(pts)
    proj = g * lv if dim == 1 else np.sum(g * lv, axis=1)
    E = float(np.min(np.abs(proj)))
    # smoothed field, renormalized
    lv_s = np.asarray(lv, float).reshape(grid.shape + ((dim,) if dim > 1 else ()))
    if dim == 1:
        lv_s = gaussian_filter(lv_s, 4.0, mode="nearest")
        lv_s = np.sign(lv_s) * np.maximum(np.abs(lv_s), 1e-300) / np.abs(lv_s)
        proj_s = g * lv_s.ravel()
    else:
        lv_s = np.stack([gaussian_filter(lv_s[..., a], 4.0, mode="nearest") for a in range(dim)], -1)
        lv_s = lv_s.reshape(-1, dim)
        lv_s /= np.linalg.norm(lv_s, axis=1, keepdims=True)
        proj_s = np.sum(g * lv_s, axis=1)
    smoothed_ok = bool(np.min(np.abs(proj_s)) >= 0.5 * E - 1e-15)
    rng = np.random.default_rng(seed)
    h = 1e-6
    if dim == 1:
        y = rng.uniform(0.01, 0.99, n_fd)
        fd = (psi(model, h1, h2, y + h) - psi(model, h1, h2, y - h)) / (2 * h)
        gy = dpsi(model, h1, h2, y)
    else:
        y = rng.uniform(0.01, 0.99, (n_fd, dim))
        fd = np.stack([(psi(model, h1, h2, y + h * e) - psi(model, h1, h2, y - h * e)) / (2 * h)
                       for e in np.eye(dim)], 1)
        gy = dpsi(model, h1, h2, y)
    scale = max(float(np.max(np.abs(gy))), 1e-2)
    fd_err = float(np.max(np.abs(fd - gy)) / scale)
    return UniReport(E, len(h1), h1, h2, smoothed_ok, fd_err, (float(np.min(proj)), float(np.max(proj))))


# ----------------------------------------------------------------------------
# setup
# ----------------------------------------------------------------------------

@dataclass
class CancellationSetup:
    """Everything fixed before a twist b is chosen: n0, the UNI pair, C4 and delta_c."""

    model: ModelSystem
    n0: int
    h1: tuple
    h2: tuple
    E: float
    C4: float = 2.0
    delta_c: float = 1.0
    ell: np.ndarray | None = None
    res: int | None = None
    eps: float = DEFAULT_EPS
    alpha: float = 1.0

    def __post_init__(self):
        if self.ell is None:
            self.ell = np.eye(self.model.dim)[0]
        self.ell = np.asarray(self.ell, float) / np.linalg.norm(self.ell)
        self.op = get_operator(self.model, self.res, self.n0)

    @property
    def grid(self) -> CollocationGrid:
        return self.op.grid

    def eig(self, sigma: float = 0.0) -> EigenData:
        return leading_eigendata(self.model, sigma, self.res, self.n0, self.eps)

    @property
    def mu_density(self) -> np.ndarray:
        return self.eig(0.0).f.values

    def psi(self, y):
        return psi(self.model, self.h1, self.h2, y)


def cancellation_setup(model: ModelSystem, n0: int | None = None, h1=None, h2=None, C4: float = 2.0,
                       delta_c: float = 1.0, res: int | None = None, eps: float = DEFAULT_EPS) -> CancellationSetup:
    """Default UNI pair: the extreme constant words (0,...,0) and (K-1,...,K-1).

    n0 defaults to 5 in 1D, where it makes 16 pi / E fall just below 40 for the
    quadratic doubling roof, and 1 in higher dimension.
    """
    fam = model.family
    if fam.countable:
        raise ValueError("cancellation apparatus needs a finite branch family")
    if n0 is None:
        n0 = 5 if model.dim == 1 else 1
    h1 = tuple(h1) if h1 is not None else (0,) * n0
    h2 = tuple(h2) if h2 is not None else (fam.n_branches - 1,) * n0
    rep = uni_estimate(model, h1, h2, n0, res=2 ** 12 if model.dim == 1 else 128)
    return CancellationSetup(model, n0, h1, h2, rep.E, C4, delta_c, None, res, eps)


# ----------------------------------------------------------------------------
# cone pairs
# ----------------------------------------------------------------------------

@dataclass
class ConeCheck:
    ok: bool
    positive: bool
    dominated: bool
    log_holder: float
    v_holder: float
    bound: float
    worst: dict = field(default_factory=dict)


@dataclass
class ConePair:
    u: GridFunction
    v: GridFunction
    C4: float
    b: float
    alpha: float = 1.0

    def check(self, slack: float = 1e-6) -> ConeCheck:
        """Grid form of the cone conditions; ratios are sampled on dyadic node pairs."""
        u, v, grid = self.u.values.real, self.v.values, self.u.grid
        bound = self.C4 * abs(self.b) ** self.alpha
        positive = bool(np.all(u > 0))
        excess = np.abs(v) - u
        dominated = bool(np.all(excess <= slack * u))
        worst = {}
        if not dominated:
            worst["dominated_at"] = int(np.argmax(excess / u))
        logu = np.log(np.where(u > 0, u, np.nan))
        lh = holder_seminorm(grid, logu, self.alpha) if positive else math.inf
        vh = 0.0
        for a, b_, d in grid.dyadic_pairs():
            dv = np.abs(v[b_] - v[a]) / d ** self.alpha
            r = np.maximum(dv / u[a], dv / u[b_])
            if r.size:
                j = int(np.argmax(r))
                if r[j] > vh:
                    vh = float(r[j])
                    worst["v_pair"] = (int(a[j]), int(b_[j]))
        ok = positive and dominated and lh <= bound * (1 + slack) and vh <= bound * (1 + slack)
        return ConeCheck(bool(ok), positive, dominated, lh, vh, bound, worst)


def _smooth_random(grid: CollocationGrid, rng, kmax: int, slope: float) -> np.ndarray:
    """Real trig sum with sup |gradient| scaled to ``slope`` (in 1/length units)."""
    pts = grid.points
    X = pts.reshape(-1, grid.dim)
    out = np.zeros(grid.size)
    grad_bound = 0.0
    for _ in range(4):
        k = rng.integers(-kmax, kmax + 1, size=grid.dim)
        if not np.any(k):
            k[0] = 1
        amp = rng.normal()
        out += amp * np.cos(2 * np.pi * (X @ k) + rng.uniform(0, 2 * np.pi))
        grad_bound += abs(amp) * 2 * np.pi * np.linalg.norm(k)
    return out * (slope / grad_bound)


def random_cone_pair(grid: CollocationGrid, b: float, C4: float, rng: np.random.Generator,
                     alpha: float = 1.0) -> ConePair:
    """A pair with |v| in [0.3 u, u], slowly varying log u and phase speed ~ C4|b|/4."""
    scale = C4 * abs(b) ** alpha
    for shrink in (1.0, 0.5, 0.25, 0.125):
        a = _smooth_random(grid, rng, 6, 0.2 * shrink * scale)
        u = np.exp(a - a.max())
        rho = 0.65 + 0.35 * np.tanh(_smooth_random(grid, rng, 3, 4.0))
        phi = _smooth_random(grid, rng, 3, 0.25 * shrink * scale)
        v = u * rho * np.exp(1j * phi)
        pair = ConePair(GridFunction(grid, u), GridFunction(grid, v), C4, b, alpha)
        if pair.check(0.0).ok:
            return pair
    raise RuntimeError("failed to draw a cone pair")


# ----------------------------------------------------------------------------
# ball family
# ----------------------------------------------------------------------------

def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def _step_slope() -> float:
    t = np.linspace(0.0, 1.0, 200001)
    return float(np.max(np.gradient(smooth_step(t), t)))


STEP_SLOPE = _step_slope()


def bump(rho):
    """1 on rho <= 1/2, 0 on rho >= 1, smooth in between."""
    return smooth_step(2.0 - 2.0 * np.asarray(rho, float))


@dataclass
class BallFamily:
    b: float
    delta_c: float
    E: float
    dim: int
    centers: np.ndarray
    shifted: np.ndarray
    types: np.ndarray
    how: list
    C_prime: float = 5.0
    omega_c1: float = 0.0

    @property
    def Delta(self) -> float:
        return 4 * math.pi / self.E

    @property
    def E_prime(self) -> float:
        return max(16 * math.pi / self.E, 2.0)

    @property
    def radius(self) -> float:
        return self.delta_c / abs(self.b)

    @property
    def half_radius(self) -> float:
        return 0.5 * self.delta_c / abs(self.b)

    @property
    def spacing(self) -> float:
        return (self.delta_c + self.Delta) / abs(self.b)

    @property
    def eta(self) -> float:
        return 1.0 - 1.0 / self.C_prime

    def __len__(self):
        return self.centers.shape[0]

    def omega(self, y, which: int) -> np.ndarray:
        """sum of bumps over balls of type ``which`` at points y of Y."""
        Y = np.asarray(y, float).reshape(-1, self.dim)
        out = np.zeros(Y.shape[0])
        for c, t in zip(self.shifted, self.types):
            if t == which:
                out += bump(np.linalg.norm(Y - c, axis=1) / self.radius)
        return out

    def in_half_balls(self, y) -> np.ndarray:
        Y = np.asarray(y, float).reshape(-1, self.dim)
        hit = np.zeros(Y.shape[0], bool)
        for c in self.shifted:
            hit |= np.linalg.norm(Y - c, axis=1) < self.half_radius
        return hit


def _greedy_centers(R: float, dim: int, lattice: int) -> np.ndarray:
    step = R / lattice
    ax = np.arange(R, 1.0 - R + 1e-15, step)
    if ax.size == 0:
        return np.zeros((0, dim))
    cand = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), -1).reshape(-1, dim)
    chosen = []
    for c in cand:
        if all(np.linalg.norm(c - o) >= 2 * R for o in chosen):
            chosen.append(c)
    return np.asarray(chosen).reshape(-1, dim)


def ball_family(b: float, delta_c: float, E: float, domain: int = 1, pair: ConePair | None = None,
                setup: CancellationSetup | None = None, sigma: float = 0.0, lattice: int = 8) -> BallFamily:
    """Maximal (delta_c + Delta)/|b|-separated centres on a lattice in Y = (0,1)^domain.

    With a cone pair and a setup, each ball also gets its shifted centre y''
    and a type (see ``assign_types``).
    """
    if not E > 0:
        raise ValueError("UNI constant E must be positive")
    Delta = 4 * math.pi / E
    E_prime = max(16 * math.pi / E, 2.0)
    if abs(b) < E_prime:
        raise ValueError(f"|b| = {abs(b)} below E' = {E_prime:.6g}")
    if not 0 < delta_c < Delta:
        raise ValueError("need 0 < delta_c < Delta")
    R = (delta_c + Delta) / abs(b)
    centers = _greedy_centers(R, int(domain), lattice)
    k = centers.shape[0]
    fam = BallFamily(float(b), float(delta_c), float(E), int(domain), centers, centers.copy(),
                     np.zeros(k, np.int64), ["none"] * k)
    if pair is not None:
        if setup is None:
            raise ValueError("typing balls needs a cancellation setup")
        assign_types(fam, setup, pair, sigma)
    return fam


# ----------------------------------------------------------------------------
# case analysis
# ----------------------------------------------------------------------------

@dataclass
class BranchTerms:
    """A_{sigma,h_m,n0}(f u) and A_{s,h_m,n0}(f v) on the grid for the UNI pair."""

    a1: np.ndarray
    a2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray


def branch_terms(setup: CancellationSetup, s: complex, pair: ConePair, eig: EigenData) -> BranchTerms:
    f = eig.f.values
    op = setup.op
    sigma = complex(s).real
    a1 = op.branch_apply(setup.h1, sigma, f * pair.u.values).real
    a2 = op.branch_apply(setup.h2, sigma, f * pair.u.values).real
    c1 = op.branch_apply(setup.h1, s, f * pair.v.values)
    c2 = op.branch_apply(setup.h2, s, f * pair.v.values)
    return BranchTerms(a1, a2, c1, c2)


def _ball_nodes(grid: CollocationGrid, center: np.ndarray, radius: float) -> np.ndarray:
    lo = np.maximum(np.ceil((center - radius) / grid.h).astype(int), 0)
    hi = np.minimum(np.floor((center + radius) / grid.h).astype(int), grid.n - 1)
    axes = [np.arange(a, b_ + 1) for a, b_ in zip(lo, hi)]
    if any(ax.size == 0 for ax in axes):
        return np.zeros(0, np.int64)
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], -1)
    d = np.linalg.norm(idx * grid.h - center, axis=1)
    flat = np.ravel_multi_index(tuple(idx[d < radius].T), grid.shape)
    return np.asarray(flat, np.int64)


def _case_holds(bt: BranchTerms, nodes: np.ndarray, which: int) -> bool:
    if nodes.size == 0:
        return True
    lhs = np.abs(bt.c1[nodes] + bt.c2[nodes])
    if which == TYPE_H1:
        rhs = 0.75 * bt.a1[nodes] + bt.a2[nodes]
    else:
        rhs = bt.a1[nodes] + 0.75 * bt.a2[nodes]
    return bool(np.all(lhs <= rhs * (1 + 1e-13)))


def _at(setup: CancellationSetup, values: np.ndarray, word, y: np.ndarray):
    x, _, _ = branch_eval(setup.model, word, y.reshape(-1, setup.model.dim) if setup.model.dim > 1 else y)
    return setup.grid.interp(values, x)


def _theta(setup, pair, b, y):
    v1 = _at(setup, pair.v.values, setup.h1, y)
    v2 = _at(setup, pair.v.values, setup.h2, y)
    return np.angle(v1) - np.angle(v2) - b * setup.psi(y)


def _pt(setup, y):
    return np.asarray(y, float).reshape(-1) if setup.model.dim == 1 else np.asarray(y, float).reshape(-1, setup.model.dim)


def _step3(setup: CancellationSetup, pair: ConePair, fam: BallFamily, y1: np.ndarray) -> np.ndarray | None:
    """Point y'' = y' + t ell, 0 <= t < Delta/|b|, with b(psi(y'') - psi(y')) = theta(y') - pi mod 2 pi."""
    b = fam.b
    th = float(_theta(setup, pair, b, _pt(setup, y1))[0])
    p0 = float(setup.psi(_pt(setup, y1))[0])
    ts = np.linspace(0.0, fam.Delta / abs(b), 2049)[:-1]
    pts = y1[None, :] + ts[:, None] * setup.ell[None, :]
    g = b * (setup.psi(_pt(setup, pts)) - p0) - (th - math.pi)
    k = np.floor(g / (2 * math.pi))
    if g[0] % (2 * math.pi) == 0:
        return y1.copy()
    jumps = np.flatnonzero(k[1:] != k[:-1])
    if jumps.size == 0:
        return None
    j = int(jumps[0])
    target = 2 * math.pi * max(k[j], k[j + 1])

    def fn(t):
        return b * (float(setup.psi(_pt(setup, y1 + t * setup.ell))[0]) - p0) - (th - math.pi) - target

    t = brentq(fn, ts[j], ts[j + 1], xtol=1e-15)
    return y1 + t * setup.ell


def assign_types(fam: BallFamily, setup: CancellationSetup, pair: ConePair, sigma: float = 0.0,
                 bt: BranchTerms | None = None) -> BallFamily:
    """Shift each centre and pick the case (h1 or h2) that holds on the whole ball.

    (1) if |v(h_m y')| <= u(h_m y')/2 for some m, keep y'' = y' and try type m;
    (3) otherwise move along ell to the point where the phase difference is
    pi to first order.  A type is accepted only if its inequality holds at every
    grid node of B_{delta/|b|}(y''); when neither holds there, nearby points of
    B_{Delta/|b|}(y') ordered by the actual phase are tried ("refined"), else
    the ball stays untyped (omega_i = 0).
    """
    s = complex(sigma, fam.b)
    eig = setup.eig(sigma)
    if bt is None:
        bt = branch_terms(setup, s, pair, eig)
    grid = setup.grid
    u, v = pair.u.values.real, pair.v.values
    for i, y1 in enumerate(fam.centers):
        y1p = _pt(setup, y1)
        small = [m for m, w in ((TYPE_H1, setup.h1), (TYPE_H2, setup.h2))
                 if not abs(_at(setup, v, w, y1p)[0]) > 0.5 * _at(setup, u, w, y1p)[0]]
        cands = []
        if small:
            cands.append((y1.copy(), small + [m for m in (TYPE_H1, TYPE_H2) if m not in small], "reduced"))
        else:
            y2 = _step3(setup, pair, fam, y1)
            if y2 is not None:
                n = _ball_nodes(grid, y2, fam.radius)
                m_small = TYPE_H1 if np.mean(np.abs(bt.c1[n]) if n.size else 0) <= \
                    np.mean(np.abs(bt.c2[n]) if n.size else 0) else TYPE_H2
                cands.append((y2, [m_small, 3 - m_small], "search"))
        done = False
        for y2, order, how in cands:
            nodes = _ball_nodes(grid, y2, fam.radius)
            for m in order:
                if _case_holds(bt, nodes, m):
                    fam.shifted[i], fam.types[i], fam.how[i] = y2, m, how
                    done = True
                    break
            if done:
                break
        if not done:
            R = fam.Delta / abs(fam.b)
            ts = np.linspace(-R, R, 129)[1:-1]
            pts = y1[None, :] + ts[:, None] * setup.ell[None, :]
            th = _theta(setup, pair, fam.b, _pt(setup, pts))
            order = np.argsort(np.abs(np.angle(np.exp(1j * (th - math.pi)))))
            for j in order[:24]:
                nodes = _ball_nodes(grid, pts[j], fam.radius)
                for m in (TYPE_H1, TYPE_H2):
                    if _case_holds(bt, nodes, m):
                        fam.shifted[i], fam.types[i], fam.how[i] = pts[j].copy(), m, "refined"
                        done = True
                        break
                if done:
                    break
        if not done:
            fam.shifted[i], fam.types[i], fam.how[i] = y1.copy(), UNTYPED, "untyped"
    _set_C_prime(fam, setup)
    return fam


def _set_C_prime(fam: BallFamily, setup: CancellationSetup) -> None:
    """C' = max{||omega||_C1 / |b|, 4} + 1 with omega = omega_i o F^{n0} on the typed ranges."""
    if not np.any(fam.types != UNTYPED):
        fam.omega_c1 = 0.0
        fam.C_prime = 5.0
        return
    grid = setup.grid
    sample = grid.points[:: max(1, grid.size // 4096)]
    expand = 0.0
    for m, w in ((TYPE_H1, setup.h1), (TYPE_H2, setup.h2)):
        if np.any(fam.types == m):
            _, jac, _ = branch_eval(setup.model, w, sample)
            if setup.model.dim == 1:
                expand = max(expand, float(np.max(1.0 / np.abs(jac))))
            else:
                smin = np.linalg.svd(jac, compute_uv=False)[:, -1]
                expand = max(expand, float(np.max(1.0 / smin)))
    fam.omega_c1 = 1.0 + STEP_SLOPE * 2 * abs(fam.b) / fam.delta_c * expand
    fam.C_prime = max(fam.omega_c1 / abs(fam.b), 4.0) + 1.0


def chi_cutoff(b: float, u: GridFunction, v: GridFunction, family: BallFamily | None,
               setup: CancellationSetup) -> GridFunction:
    """chi = 1 - omega/C' at the grid nodes, omega = omega_i o F^{n0} on the range of the typed branch."""
    grid = setup.grid
    if family is None or len(family) == 0 or not np.any(family.types != UNTYPED):
        return GridFunction(grid, np.ones(grid.size))
    if family.b != b:
        raise ValueError("ball family built for a different b")
    x = np.clip(grid.points, 0.0, 1.0 - 1e-12)
    word = []
    y = x
    for _ in range(setup.n0):
        y, idx = setup.model.forward(y)
        word.append(idx)
    word = np.stack(word, 1)
    chi = np.ones(grid.size)
    for m, w in ((TYPE_H1, setup.h1), (TYPE_H2, setup.h2)):
        on = np.all(word == np.asarray(w)[None, :], axis=1)
        if on.any():
            chi[on] = 1.0 - family.omega(y[on], m) / family.C_prime
    return GridFunction(grid, chi)


# ----------------------------------------------------------------------------
# one damped step and the cancellation check
# ----------------------------------------------------------------------------

def damped_step(setup: CancellationSetup, s: complex, pair: ConePair, fam: BallFamily | None,
                eig: EigenData | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(L_sigma^{n0}(chi u), L_s^{n0} v) on the grid, chi evaluated exactly at h_w(y)."""
    s = complex(s)
    if eig is None:
        eig = setup.eig(s.real)
    f, lam = eig.f.values, eig.lam
    op = setup.op
    fu = f * pair.u.values.real
    Pu = op.apply(s.real, fu).real
    if fam is not None and len(fam) and np.any(fam.types != UNTYPED):
        pts = setup.grid.points
        for m, w in ((TYPE_H1, setup.h1), (TYPE_H2, setup.h2)):
            om = fam.omega(pts, m)
            if np.any(om > 0):
                Pu = Pu - om / fam.C_prime * op.branch_apply(w, s.real, fu).real
    Pv = op.apply(s, f * pair.v.values)
    return Pu / (lam * f), Pv / (lam * f)


@dataclass
class CancellationResult:
    max_excess: float
    chi_min: float
    chi_max: float
    balls: int
    typed: int
    how: dict
    C_prime: float

    @property
    def ok(self) -> bool:
        return self.max_excess <= 1e-10 and self.chi_min >= 0.75 and self.chi_max <= 1.0


def cancellation_check(setup: CancellationSetup, s, pair: ConePair, fam: BallFamily | None = None) -> CancellationResult:
    """max over grid nodes of |L_s^{n0} v| - L_sigma^{n0}(chi u)."""
    tw = as_twist(s, setup.eps)
    if fam is None:
        fam = ball_family(tw.b, setup.delta_c, setup.E, setup.model.dim, pair, setup, tw.sigma)
    u1, v1 = damped_step(setup, tw.s, pair, fam)
    chi = chi_cutoff(tw.b, pair.u, pair.v, fam, setup).values
    how = {}
    for h in fam.how:
        how[h] = how.get(h, 0) + 1
    return CancellationResult(float(np.max(np.abs(v1) - u1)), float(chi.min()), float(chi.max()),
                              len(fam), int(np.sum(fam.types != UNTYPED)), how, fam.C_prime)


# ----------------------------------------------------------------------------
# cone iteration
# ----------------------------------------------------------------------------

@dataclass
class ConeStep:
    m: int
    l2_u: float
    l2_v: float
    cone_ok: bool
    dominated: bool
    balls: int
    typed: int
    worst: dict


@dataclass
class ConeRun:
    s: complex
    steps: list
    beta_hat: float
    beta_u: float
    degenerate: bool
    C_prime: list


def cone_iterate(model: ModelSystem, s, v0, m_max: int = 30, setup: CancellationSetup | None = None,
                 slack: float = 1e-6) -> ConeRun:
    """u_{m+1} = L_sigma^{n0}(chi_m u_m), v_{m+1} = L_s^{n0} v_m from u_0 = 1, v_0 = v/|v|_inf.

    beta_hat is the smallest beta with int |v_m|^2 dmu <= beta^m for 1 <= m <= m_max;
    beta_u is the same fit for int u_m^2 dmu.  With E = 0 no balls are built and the
    run is flagged UNI-degenerate.
    """
    if setup is None:
        setup = cancellation_setup(model)
    tw = as_twist(s, setup.eps)
    b = tw.b
    grid = setup.grid
    degenerate = not setup.E > 1e-12
    if not degenerate and abs(b) < max(16 * math.pi / setup.E, 1.0):
        raise ValueError(f"|b| = {abs(b)} below max(16 pi / E, 1)")
    if isinstance(v0, GridFunction):
        vals = v0.values.astype(complex)
    elif callable(v0):
        vals = np.asarray(v0(grid.points), complex)
    else:
        vals = np.broadcast_to(np.asarray(v0, complex), (grid.size,)).copy()
    vg = GridFunction(grid, vals)
    if vg.seminorm(setup.alpha) > setup.C4 * abs(b) ** setup.alpha * vg.sup() * (1 + slack):
        raise ValueError("v0 is too rough for the cone at this b")
    v = vals / vg.sup()
    u = np.ones(grid.size)
    mu = setup.mu_density * grid.weights
    eig = setup.eig(tw.sigma)
    steps, cps = [], []
    for m in range(m_max + 1):
        pair = ConePair(GridFunction(grid, u), GridFunction(grid, v), setup.C4, b, setup.alpha)
        chk = pair.check(slack)
        fam = None
        if not degenerate:
            fam = ball_family(b, setup.delta_c, setup.E, model.dim, pair, setup, tw.sigma)
            cps.append(fam.C_prime)
        steps.append(ConeStep(m, float(np.sum(mu * u ** 2)), float(np.sum(mu * np.abs(v) ** 2)), chk.ok,
                              chk.dominated, 0 if fam is None else len(fam),
                              0 if fam is None else int(np.sum(fam.types != UNTYPED)), chk.worst))
        if m == m_max:
            break
        u, v = damped_step(setup, tw.s, pair, fam, eig)
    l2v = np.array([st.l2_v for st in steps])
    l2u = np.array([st.l2_u for st in steps])
    ms = np.arange(1, len(steps))
    beta = float(np.max(np.maximum(l2v[1:], 1e-300) ** (1.0 / ms))) if ms.size else 1.0
    beta_u = float(np.max(l2u[1:] ** (1.0 / ms))) if ms.size else 1.0
    return ConeRun(tw.s, steps, beta, beta_u, degenerate, cps)


# ----------------------------------------------------------------------------
# measure of the half balls
# ----------------------------------------------------------------------------

@dataclass
class FedReport:
    b: float
    c1: float
    ratios: list
    balls: int


def fed_probe(setup: CancellationSetup, b: float, K: float = 1.0, trials: int = 100,
              seed: int = 0) -> FedReport:
    """min over random positive w (|log w|_a <= K|b|^a) of int_{B-hat} w dmu / int_Y w dmu.

    Shifted centres y'' are drawn uniformly on the ell-segment of B_{Delta/|b|}(y').
    """
    rng = np.random.default_rng(seed)
    grid = setup.grid
    fam = ball_family(b, setup.delta_c, setup.E, setup.model.dim)
    mu = setup.mu_density * grid.weights
    pts = grid.points
    ratios = []
    R = fam.Delta / abs(b)
    for _ in range(trials):
        t = rng.uniform(-R, R, len(fam)) * (1 - 1e-9)
        fam.shifted = fam.centers + t[:, None] * setup.ell[None, :]
        a = _smooth_random(grid, rng, 8, K * abs(b) ** setup.alpha)
        w = np.exp(a - a.max())
        inside = fam.in_half_balls(pts)
        ratios.append(float(np.sum(mu[inside] * w[inside]) / np.sum(mu * w)))
    return FedReport(float(b), float(min(ratios)), ratios, len(fam))
