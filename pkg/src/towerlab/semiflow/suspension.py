"""Suspension semiflows over the models, sampling of mu^r and correlation estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from towerlab.models import AffineFamily, ModelSystem, verify_gibbs_markov

N_BATCHES = 32
PAST_DEPTH = 64


@dataclass
class SuspensionSystem:
    """Y^r (or X^r when the model carries a skew factor) with mu^r = mu x Leb / rbar."""

    model: ModelSystem | None
    rbar: float
    r_inf: float
    r_sup: float
    density: Callable | None = None
    density_sup: float = 1.0
    inducing: object = None
    admissible_eps: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.model.dim if self.model is not None else self.inducing.ambient.dim

    @property
    def has_skew(self) -> bool:
        return self.model is not None and self.model.skew is not None

    def roof(self, y):
        if self.model is None:
            R, _ = self._replay(y)
            return R.astype(float)
        return self.model.roof(y)

    def _replay(self, y):
        from towerlab.inducing import replay_labels

        res = self.inducing
        p = res.ambient.p_arr
        return replay_labels(res.registry, np.atleast_2d(y) - p, res.state.n)

    def base_map(self, y):
        """(F y, branch index) for a model; (F y, R) for an inducing result."""
        if self.model is not None:
            return self.model.forward(y)
        amb = self.inducing.ambient
        R, _ = self._replay(y)
        if np.any(R == 0):
            raise ValueError("orbit left the finished region of the inducing result")
        out = np.empty_like(np.atleast_2d(y))
        for n in np.unique(R):
            sel = R == n
            _, disp = amb.image(np.atleast_2d(y)[sel] - amb.p_arr, int(n))
            out[sel] = amb.p_arr + disp
        return out, R


def _is_lebesgue_invariant(fam) -> bool:
    # full-branch affine families with constant Jacobians summing to 1 preserve Lebesgue
    return isinstance(fam, AffineFamily) and abs(sum(fam.sup_det(k) for k in fam.indices()) - 1) < 1e-12


def _mean_against(model: ModelSystem, density, fn) -> float:
    if model.dim == 1:
        val, _ = integrate.quad(lambda y: fn(np.array([y]))[0] * density(np.array([y]))[0],
                                0.0, 1.0, limit=200)
        return float(val)
    x, w = np.polynomial.legendre.leggauss(64)
    x, w = 0.5 * (x + 1), 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], 1)
    return float(np.sum(np.outer(w, w).ravel() * fn(pts) * density(pts)))


def _model_density(model: ModelSystem):
    if _is_lebesgue_invariant(model.family):
        return (lambda y: np.ones(np.shape(y)[0] if model.dim > 1 else np.size(y))), 1.0
    from towerlab.transfer import leading_eigendata

    eig = leading_eigendata(model, 0.0)
    f = eig.f
    return (lambda y: np.real(f(y))), float(np.max(np.real(f.values)))


def exponential_moment(n, leb_gt, eps: float) -> float:
    """sum_n e^{eps n} Leb(R = n) from a tail table Leb(R > n), n = 0, 1, ...

    The table is extended geometrically past its end with the last observed ratio.
    """
    n = np.asarray(n, float)
    leb_gt = np.asarray(leb_gt, float)
    mass = -np.diff(leb_gt)
    total = float(np.sum(np.exp(eps * n[1:]) * mass))
    q = leb_gt[-1] / leb_gt[-2] if leb_gt[-2] > 0 else 0.0
    if q * np.exp(eps) >= 1:
        return np.inf
    # Leb(R = m) ~ leb_gt[-1] (1-q) q^(m-N-1) for m > N
    total += leb_gt[-1] * (1 - q) * np.exp(eps * (n[-1] + 1)) / (1 - q * np.exp(eps))
    return total


def suspend(source, grid_resolution: int = 256) -> SuspensionSystem:
    """Suspension over a built-in model or over an inducing result (roof R, r0 = 0)."""
    from towerlab.inducing import InducingResult, fit_result_tail

    if isinstance(source, InducingResult):
        fit = fit_result_tail(source)
        if not fit.gamma < 1:
            raise ValueError(f"tail fit gamma = {fit.gamma:.4g} >= 1: exponential roof tail not certified")
        st = source.state
        fin = st.R > 0
        R = st.R[fin].astype(float)
        # normalised Lebesgue on the finished cells stands in for the base measure
        rbar = float(R.mean())
        return SuspensionSystem(None, rbar, float(R.min()), float(R.max()), inducing=source,
                                admissible_eps=float(-np.log(fit.gamma)),
                                extra={"gamma": fit.gamma, "r2": fit.r2})
    model: ModelSystem = source
    rep = verify_gibbs_markov(model, grid_resolution)
    if not rep.ok:
        bad = [k for k, v in rep.conditions.items() if not v]
        raise ValueError(f"model {model.model_id} fails the Gibbs-Markov checks: {bad}")
    r_inf = float(model.roof.lower_bound)
    if r_inf <= 0:
        raise ValueError("roof must be bounded away from zero")
    dens, dsup = _model_density(model)
    rbar = _mean_against(model, dens, model.roof)
    xs = np.linspace(0, 1, 4097)[1:-1]
    pts = xs if model.dim == 1 else np.stack(np.meshgrid(xs[::16], xs[::16], indexing="ij"), -1).reshape(-1, 2)
    r_sup = float(np.max(model.roof(pts)))
    if model.family.n_branches is None or not np.isfinite(r_sup):
        r_sup = np.inf
    return SuspensionSystem(model, rbar, r_inf, r_sup, dens, dsup)


# ----------------------------------------------------------------------------
# points and the flow
# ----------------------------------------------------------------------------

@dataclass
class SuspensionPoints:
    y: np.ndarray
    u: np.ndarray
    z: np.ndarray | None = None
    past: np.ndarray | None = None  # branch indices a_1, a_2, ... of the backward chain

    def __len__(self):
        return self.u.size

    def copy(self):
        return SuspensionPoints(self.y.copy(), self.u.copy(),
                                None if self.z is None else self.z.copy(),
                                None if self.past is None else self.past.copy())


def _sample_base(system: SuspensionSystem, n: int, rng) -> np.ndarray:
    dim = system.dim
    out, got = [], 0
    while got < n:
        m = max(2 * (n - got), 1024)
        y = rng.random(m) if dim == 1 else rng.random((m, dim))
        if system.density_sup != 1.0:
            keep = rng.random(m) * system.density_sup <= system.density(y)
            y = y[keep]
        out.append(y)
        got += y.shape[0]
    return np.concatenate(out)[:n]


def backward_chain(system: SuspensionSystem, y, rng, depth: int = PAST_DEPTH):
    """Random past itineraries with the conditional weights of mu, and the fibre point they generate.

    For affine families the weights are uniform.  z = G(y_-1, G(y_-2, ... G(y_-depth, 0))).
    """
    model = system.model
    fam = model.family
    n = y.shape[0]
    K = fam.n_branches
    if K is None:
        raise ValueError("backward chains need a finite branch family")
    if not _is_lebesgue_invariant(fam):
        raise NotImplementedError("backward chains implemented for Lebesgue-invariant affine families")
    past = rng.integers(0, K, size=(n, depth)).astype(np.int16)
    z = fibre_from_past(model, y, past) if model.skew is not None else None
    return past, z


def chain_points(model: ModelSystem, y, past, depth: int | None = None) -> list:
    """Base points y_-1, ..., y_-depth along the recorded inverse branches."""
    depth = past.shape[1] if depth is None else depth
    pts, cur = [], y
    for j in range(depth):
        a = past[:, j]
        nxt = np.empty_like(cur)
        for k in np.unique(a):
            sel = a == k
            nxt[sel] = model.family.h(int(k), cur[sel])
        pts.append(nxt)
        cur = nxt
    return pts


def fibre_from_past(model: ModelSystem, y, past) -> np.ndarray:
    chain = chain_points(model, y, past)
    z = np.zeros((y.shape[0], model.skew.fiber_dim))
    for yy in reversed(chain):
        z = model.skew.G(yy, z)
    return z


def sample_invariant(system: SuspensionSystem, n: int, seed: int = 0,
                     with_past: bool = False) -> SuspensionPoints:
    """n points distributed as mu^r; deterministic per seed."""
    if system.model is None:
        raise NotImplementedError("sampling is implemented for model suspensions")
    if not np.isfinite(system.r_sup):
        raise ValueError("unbounded roof: rejection sampling of the height has zero efficiency")
    rng = np.random.default_rng(seed)
    dim = system.dim
    if n == 0:
        return SuspensionPoints(np.empty((0,) if dim == 1 else (0, dim)), np.empty(0))
    eff = system.rbar / system.r_sup
    if eff < 0.01:
        raise ValueError(f"rejection efficiency {eff:.3g} below 1%")
    chunks, got = [], 0
    while got < n:
        m = int((n - got) / eff * 1.1) + 64
        y = _sample_base(system, m, rng)
        keep = rng.random(m) * system.r_sup <= system.roof(y)
        chunks.append(y[keep])
        got += int(keep.sum())
    y = np.concatenate(chunks)[:n]
    u = rng.random(n) * system.roof(y)
    pts = SuspensionPoints(y, u)
    if system.has_skew or with_past:
        pts.past, pts.z = backward_chain(system, y, rng)
    return pts


def flow_step(system: SuspensionSystem, pts: SuspensionPoints, t: float) -> SuspensionPoints:
    """F_t by exact roof crossing: (y, u) -> (F y, u - r(y)) while u >= r(y)."""
    if t < 0:
        raise ValueError("the semiflow is defined for t >= 0")
    out = pts.copy()
    out.past = None  # the flow forgets the recorded past
    out.u = out.u + t
    r = system.roof(out.y)
    act = np.flatnonzero(out.u >= r)
    while act.size:
        y = out.y[act]
        if out.z is not None:
            out.z[act] = system.model.skew.G(y, out.z[act])
        out.u[act] -= r[act]
        fy, _ = system.base_map(y)
        out.y[act] = fy
        r[act] = system.roof(fy)
        act = act[out.u[act] >= r[act]]
    return out


def first_return_decomposition(system: SuspensionSystem, y) -> tuple[np.ndarray, list]:
    """(N(x), [tau(g^l x)]) with r = sum_l tau(g^l x).

    Built-in models are their own first-return systems (g = f, tau = r, N = 1); an
    inducing result returns after R ambient steps of unit time each.
    """
    if system.model is not None:
        r = system.roof(y)
        return np.ones(np.size(r), int), [r]
    R, _ = system._replay(y)
    return R, [np.ones(R.size) * (R > j) for j in range(int(R.max(initial=0)))]


# ----------------------------------------------------------------------------
# observables
# ----------------------------------------------------------------------------

@dataclass
class Observable:
    name: str
    fn: Callable  # (system, points) -> values
    alpha: float = 1.0
    k: int = 1
    dt: Callable | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, system, pts):
        return self.fn(system, pts)

    def norm_estimate(self, system: SuspensionSystem, n: int = 4096, seed: int = 0) -> float:
        """sum_{j<=k} ||d_t^j v||_alpha on a sample (sup plus sampled Holder quotient)."""
        pts = sample_invariant(system, n, seed)
        total = 0.0
        funcs = [self.fn] + ([self.dt] if self.dt is not None and self.k >= 1 else [])
        eps = 1e-4
        for f in funcs:
            v = f(system, pts)
            p2 = pts.copy()
            p2.u = np.minimum(p2.u + eps, system.roof(p2.y) * (1 - 1e-12))
            dv = np.abs(f(system, p2) - v) / np.maximum(np.abs(p2.u - pts.u), 1e-300) ** self.alpha
            total += float(np.max(np.abs(v)) + np.max(dv[p2.u > pts.u]))
        return total


def _axis(system, y):
    return y if system.dim == 1 else y[:, getattr(system.model.roof, "axis", 0)]


def observable(name: str, **params) -> Observable:
    """Named catalog: height-bump, height-phase, height-cos, height-indicator, trig, coord, one."""
    k = params.get("k", 1)
    if name == "height-bump":
        # sin(2 pi k y) is odd about 1/2, so the bump is orthogonal to functions of a symmetric roof
        def f(s, p):
            return np.sin(np.pi * p.u / s.roof(p.y)) ** 2 * np.sin(2 * np.pi * k * _axis(s, p.y))

        def d(s, p):
            r = s.roof(p.y)
            return np.pi / r * np.sin(2 * np.pi * p.u / r) * np.sin(2 * np.pi * k * _axis(s, p.y))
        return Observable(name, f, dt=d, params={"k": k})
    if name == "height-phase":
        sign = params.get("sign", 1)

        def f(s, p):
            return np.exp(sign * 2j * np.pi * k * p.u / s.roof(p.y))

        def d(s, p):
            r = s.roof(p.y)
            return sign * 2j * np.pi * k / r * np.exp(sign * 2j * np.pi * k * p.u / r)
        return Observable(name, f, dt=d, params={"k": k, "sign": sign})
    if name == "height-cos":
        def f(s, p):
            return np.cos(2 * np.pi * k * p.u / s.roof(p.y))

        def d(s, p):
            r = s.roof(p.y)
            return -2 * np.pi * k / r * np.sin(2 * np.pi * k * p.u / r)
        return Observable(name, f, dt=d, params={"k": k})
    if name == "height-indicator":
        a = params.get("a", 1.0)
        return Observable(name, lambda s, p: (p.u < a).astype(float), alpha=0.0, k=0, params={"a": a})
    if name == "trig":
        return Observable(name, lambda s, p: np.cos(2 * np.pi * k * _axis(s, p.y)),
                          dt=lambda s, p: np.zeros(len(p)), params={"k": k})
    if name == "coord":
        return Observable(name, lambda s, p: _axis(s, p.y).astype(float), dt=lambda s, p: np.zeros(len(p)))
    if name == "one":
        return Observable(name, lambda s, p: np.ones(len(p)), dt=lambda s, p: np.zeros(len(p)))
    raise KeyError(f"unknown observable {name!r}")


OBSERVABLES = ("height-bump", "height-phase", "height-cos", "height-indicator", "trig", "coord", "one")


# ----------------------------------------------------------------------------
# correlations
# ----------------------------------------------------------------------------

@dataclass
class CorrelationSeries:
    t: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray
    n_samples: int
    batches: int = N_BATCHES

    def rows(self):
        # complex series are reported by modulus
        return [{"t": float(a), "rho": float(b) if np.isrealobj(self.rho) else float(abs(b)),
                 "stderr": float(c)}
                for a, b, c in zip(self.t, self.rho, self.stderr)]


def correlation_series(system: SuspensionSystem, v: Observable, w: Observable, t_grid,
                       n_samples: int, seed: int = 0, batches: int = N_BATCHES) -> CorrelationSeries:
    """rho(t) = int v w o F_t dmu^r - int v int w, by batch means over seeded streams."""
    t_grid = np.asarray(t_grid, float)
    if np.any(t_grid < 0):
        raise ValueError("correlation times must be nonnegative")
    order = np.argsort(t_grid, kind="stable")
    ts = t_grid[order]
    per = max(n_samples // batches, 1)
    S_vw = np.zeros((batches, ts.size), complex)
    S_w = np.zeros((batches, ts.size), complex)
    S_v = np.zeros(batches, complex)
    for b in range(batches):
        p = sample_invariant(system, per, seed=[seed, b])
        v0 = v(system, p)
        S_v[b] = v0.mean()
        last = 0.0
        for i, t in enumerate(ts):
            if t > last:
                p = flow_step(system, p, t - last)
                last = t
            wt = w(system, p)
            S_vw[b, i] = np.mean(v0 * wt)
            S_w[b, i] = wt.mean()
    pooled = S_vw.mean(0) - S_v.mean() * S_w.mean(0)
    per_batch = S_vw - S_v[:, None] * S_w
    se = np.sqrt(per_batch.real.var(0, ddof=1) + per_batch.imag.var(0, ddof=1)) / np.sqrt(batches)
    if not np.any(pooled.imag) and not np.any(S_v.imag):
        pooled = pooled.real
    rho = np.empty_like(pooled)
    err = np.empty_like(se)
    rho[order], err[order] = pooled, se
    return CorrelationSeries(t_grid, rho, err, per * batches, batches)


@dataclass
class DecayFit:
    c: float | None
    C: float | None
    r2: float | None
    verdict: str
    n_used: int


def decay_fit(series: CorrelationSeries, min_points: int = 10) -> DecayFit:
    """Least squares of log|rho| on the points with |rho| > 3 stderr (modulus for complex series)."""
    t = np.asarray(series.t, float)
    rho = np.abs(np.asarray(series.rho))
    se = np.asarray(series.stderr, float)
    use = np.abs(rho) > 3 * se
    if use.sum() < min_points:
        return DecayFit(None, None, None, "indeterminate", int(use.sum()))
    x, y = t[use], np.log(np.abs(rho[use]))
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot
    c = float(-slope)
    verdict = "exponential" if c > 0 and r2 >= 0.9 else "no-decay-detected"
    return DecayFit(c, float(np.exp(icpt)), r2, verdict, int(use.sum()))
