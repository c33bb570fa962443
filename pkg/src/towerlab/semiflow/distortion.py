"""Temporal distortion over skew products and the coboundary (UNI-failure) probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from towerlab.models import ModelSystem, SkewFactor, get_model
from towerlab.semiflow.suspension import PAST_DEPTH, chain_points, fibre_from_past


@dataclass
class SkewPoint:
    """x = (y, z) in X = Y x Z together with the inverse-branch past that produced z."""

    y: float
    z: np.ndarray
    past: np.ndarray


def _as_skew_model(model: ModelSystem) -> ModelSystem:
    if model.skew is not None:
        return model
    return ModelSystem(model.model_id + "+skew", model.label, model.family, model.roof, SkewFactor(),
                       model.notes, dict(model.extra))


def _contraction(model: ModelSystem) -> float:
    fam = model.family
    ys = np.linspace(0, 1, 1025)
    return float(max(np.max(np.abs(fam.deriv(k, ys))) for k in fam.indices()))


def _roof_lip(model: ModelSystem) -> float:
    ys = np.linspace(0, 1, 8193)
    return float(np.max(np.abs(model.roof.grad(ys))))


def sample_skew_points(model: ModelSystem, n: int, seed: int = 0, depth: int = PAST_DEPTH) -> list:
    model = _as_skew_model(model)
    if model.dim != 1:
        raise ValueError("skew points are implemented over one-dimensional bases")
    rng = np.random.default_rng(seed)
    y = rng.random(n)
    K = model.family.n_branches
    past = rng.integers(0, K, size=(n, depth)).astype(np.int16)
    z = fibre_from_past(model, y, past)
    return [SkewPoint(float(y[i]), z[i], past[i]) for i in range(n)]


def _cycling(K: int, start: int, n: int) -> np.ndarray:
    return (np.arange(start, start + n) % K).astype(np.int16)


def _extend_past(past: np.ndarray, K: int, depth: int) -> np.ndarray:
    """Recorded past, continued by the fixed cycling itinerary 0, 1, ..., K-1, 0, ..."""
    if past.size >= depth:
        return past[:depth]
    return np.concatenate([past, _cycling(K, 0, depth - past.size)])


def unstable_leaf(model: ModelSystem, x: SkewPoint, y_new: float, depth: int) -> SkewPoint:
    """The point of W^u(x) over base y_new: same past, fibre moved along the graph."""
    model = _as_skew_model(model)
    past = _extend_past(np.asarray(x.past), model.family.n_branches, depth)
    # G is affine in z with a common linear part, so the graph difference is exact
    ys = np.array([x.y, y_new])
    zz = fibre_from_past(model, ys, np.stack([past, past]))
    return SkewPoint(float(y_new), np.asarray(x.z) + zz[1] - zz[0], past)


def local_product(model: ModelSystem, x1: SkewPoint, x2: SkewPoint, depth: int) -> SkewPoint:
    """[x1, x2]: on the unstable leaf of x1 and the stable fibre {y2} x Z of x2."""
    model = _as_skew_model(model)
    _, i1 = model.forward(np.array([x1.y]))
    _, i2 = model.forward(np.array([x2.y]))
    if i1[0] != i2[0]:
        raise ValueError("local product undefined: base points lie in different partition elements")
    return unstable_leaf(model, x1, x2.y, depth)


def D0(model: ModelSystem, x: SkewPoint, xp: SkewPoint, depth: int) -> float:
    """sum_{j=1}^{depth} r(z_j) - r(z'_j) along the inverse-branch chain recorded in x."""
    model = _as_skew_model(model)
    past = _extend_past(np.asarray(x.past), model.family.n_branches, depth)
    chain = chain_points(model, np.array([x.y, xp.y]), np.stack([past, past]), depth)
    terms = [model.roof(c) for c in chain]
    return float(sum(t[0] - t[1] for t in terms))


@dataclass
class DistortionResult:
    D: float
    depth: int
    err_bound: float
    products: tuple


def temporal_distortion(model: ModelSystem, x1: SkewPoint, x2: SkewPoint, tol: float = 1e-12,
                        depth: int | None = None, max_depth: int = 200) -> DistortionResult:
    """D(x1, x2) = D0(x1, [x1, x2]) + D0(x2, [x2, x1]).

    Truncation after d terms leaves at most Lip(r) rho0^(d+1)/(1 - rho0) |y1 - y2| per series.
    """
    model = _as_skew_model(model)
    rho0 = _contraction(model)
    lip = _roof_lip(model)
    dy = abs(x1.y - x2.y)

    def bound(d):
        return 2 * lip * dy * rho0 ** (d + 1) / (1 - rho0)

    if depth is None:
        depth = 1
        while bound(depth) > tol and depth < max_depth:
            depth += 1
    p12 = local_product(model, x1, x2, depth)
    p21 = local_product(model, x2, x1, depth)
    D = D0(model, x1, p12, depth) + D0(model, x2, p21, depth)
    return DistortionResult(D, depth, bound(depth), (p12, p21))


def distortion_pairs(model: ModelSystem, n_pairs: int, seed: int = 0) -> list:
    """Random pairs of sampled skew points sharing a partition element."""
    model = _as_skew_model(model)
    pts = sample_skew_points(model, 4 * n_pairs + 8, seed)
    _, idx = model.forward(np.array([p.y for p in pts]))
    pairs, used = [], set()
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if i in used or j in used or idx[i] != idx[j]:
                continue
            pairs.append((pts[i], pts[j]))
            used |= {i, j}
            break
        if len(pairs) == n_pairs:
            break
    return pairs


# ----------------------------------------------------------------------------
# cohomology
# ----------------------------------------------------------------------------

@dataclass
class CohomologyFit:
    degree: int
    coef_cos: np.ndarray
    coef_sin: np.ndarray
    zeta: np.ndarray
    residual: float
    method: str

    def xi(self, y):
        y = np.asarray(y, float)
        k = np.arange(1, self.degree + 1)
        ang = 2 * np.pi * np.multiply.outer(y, k)
        return np.cos(ang) @ self.coef_cos + np.sin(ang) @ self.coef_sin


def _axis_coordinate(model: ModelSystem):
    """One-dimensional factor carrying the roof: (grid coordinate, F on it, branch label)."""
    if model.dim == 1:
        return lambda y: model.forward(y)
    axis = getattr(model.roof, "axis", 0)

    def fwd(y):
        pts = np.full((y.size, model.dim), 0.5)
        pts[:, axis] = y
        fy, idx = model.forward(pts)
        base = int(round(len(list(model.family.indices())) ** (1 / model.dim)))
        digit = (idx // base ** (model.dim - 1 - axis)) % base
        return fy[:, axis], digit
    return fwd


def cohomology_probe(model: ModelSystem, degree: int = 16, n_grid: int | None = None) -> CohomologyFit:
    """Fit r ~ xi o F - xi + zeta with xi a trig polynomial and zeta constant per branch.

    Least squares first; when that leaves a visible residual the sup-norm problem is
    solved as a linear program and the smaller residual is kept.
    """
    n_grid = n_grid or max(4096, 32 * degree)
    y = (np.arange(n_grid) + 0.5) / n_grid
    fwd = _axis_coordinate(model)
    fy, idx = fwd(y)
    pts = y if model.dim == 1 else np.column_stack([y if a == getattr(model.roof, "axis", 0) else
                                                   np.full(n_grid, 0.5) for a in range(model.dim)])
    r = model.roof(pts)
    labels, col = np.unique(idx, return_inverse=True)
    k = np.arange(1, degree + 1)
    A_cos = np.cos(2 * np.pi * np.multiply.outer(fy, k)) - np.cos(2 * np.pi * np.multiply.outer(y, k))
    A_sin = np.sin(2 * np.pi * np.multiply.outer(fy, k)) - np.sin(2 * np.pi * np.multiply.outer(y, k))
    Z = np.zeros((n_grid, labels.size))
    Z[np.arange(n_grid), col] = 1.0
    A = np.hstack([A_cos, A_sin, Z])
    sol, *_ = np.linalg.lstsq(A, r, rcond=None)
    res = float(np.max(np.abs(r - A @ sol)))
    method = "lstsq"
    if res > 1e-9:
        m = A.shape[1]
        c = np.zeros(m + 1)
        c[-1] = 1.0
        ones = np.ones((n_grid, 1))
        A_ub = np.vstack([np.hstack([A, -ones]), np.hstack([-A, -ones])])
        b_ub = np.concatenate([r, -r])
        lp = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * m + [(0, None)], method="highs")
        if lp.status == 0 and lp.x[-1] < res:
            sol, res, method = lp.x[:m], float(np.max(np.abs(r - A @ lp.x[:m]))), "minimax"
    zeta = np.full(labels.max() + 1, np.nan)
    zeta[labels] = sol[2 * degree:]
    return CohomologyFit(degree, sol[:degree], sol[degree:2 * degree], zeta, res, method)


def telescoping_gap(model: ModelSystem, fit: CohomologyFit, x: SkewPoint, xp: SkewPoint, n: int) -> float:
    """|sum_{j<=n} r(z_j) - r(z'_j) - [xi(x) - xi(x') - xi(z_n) + xi(z'_n)]|."""
    model = _as_skew_model(model)
    past = _extend_past(np.asarray(x.past), model.family.n_branches, n)
    chain = chain_points(model, np.array([x.y, xp.y]), np.stack([past, past]), n)
    lhs = sum(model.roof(c)[0] - model.roof(c)[1] for c in chain)
    xi = fit.xi
    rhs = xi(x.y) - xi(xp.y) - xi(chain[-1][0]) + xi(chain[-1][1])
    return float(abs(lhs - rhs))


def uni_cohomology_consistency(models, n_pairs: int = 20, degree: int = 16, seed: int = 0,
                               e_tol: float = 1e-3, res_tol: float = 1e-6, d_tol: float = 1e-8) -> list[dict]:
    """Cross-table of the UNI constant at n0 = 1, the coboundary residual and max |D|."""
    from towerlab.transfer import uni_estimate

    rows = []
    for m in models:
        model = get_model(m) if isinstance(m, str) else m
        K = model.family.n_branches
        E = uni_estimate(model, (0,), (K - 1,), n0=1).E
        fit = cohomology_probe(model, degree)
        Dmax = max(abs(temporal_distortion(model, a, b).D) for a, b in distortion_pairs(model, n_pairs, seed))
        flags = (E < e_tol, fit.residual < res_tol, Dmax < d_tol)
        rows.append({"model": model.model_id, "label": model.label, "E": float(E),
                     "residual": fit.residual, "basis_degree": degree, "max_D": Dmax,
                     "uni_fails": flags[0], "coboundary": flags[1], "D_zero": flags[2],
                     "consistent": len(set(flags)) == 1})
    return rows
