"""Ambient expanding system and the constant set of the inducing construction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from towerlab.models import AffineFamily, ModelSystem


@dataclass(frozen=True)
class AmbientSystem:
    """Torus map y -> base * y (mod 1) on T^dim, viewed through its lift.

    For an expanding map every disk is unstable, so phi_n acts on the lift as
    multiplication by base^n and the induced distance is the Euclidean distance
    of the lift.  The holonomy pi is the identity (C2 = C3 = 1, alpha = 1) but is
    still applied through ``project``.
    """

    base: int
    dim: int
    p: tuple = None
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    C4: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.base < 2:
            raise ValueError("base must be >= 2")
        p = (0.0,) * self.dim if self.p is None else tuple(float(v) for v in np.ravel(self.p))
        if len(p) != self.dim:
            raise ValueError("base point has wrong dimension")
        # p must be fixed by the map so that phi_n p = p for every n
        if any(abs((self.base * v) % 1.0 - v % 1.0) > 1e-12 for v in p):
            raise ValueError("base point must be a fixed point of y -> base*y mod 1")
        object.__setattr__(self, "p", p)

    @property
    def lam(self) -> float:
        return 1.0 / self.base

    @property
    def p_arr(self) -> np.ndarray:
        return np.asarray(self.p)

    def image(self, x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (integer lift key k, displacement g_n(x) - p) with |disp| minimal.

        ``x`` has shape (N, dim).  g_n(x) = base^n x - k lies within 1/2 of p
        in every coordinate.
        """
        s = float(self.base) ** n
        z = s * x - self.p_arr
        k = np.rint(z)
        return k.astype(np.int64), self.project(z - k)

    def project(self, disp: np.ndarray) -> np.ndarray:
        return disp

    def pullback(self, y_disp: np.ndarray, k: np.ndarray, n: int) -> np.ndarray:
        """Inverse of ``image`` on the branch with key k: x = (p + disp + k) / base^n."""
        return (self.p_arr + y_disp + k) / float(self.base) ** n

    def density_horizon(self, delta: float, n_cap: int = 12, probe: int = 64) -> int:
        """Least N1 with union_{i<=N1} of the i-th preimages of p delta-dense in T^dim.

        Scans the preimage lattice and measures the covering radius on a probe
        grid with a periodic k-d tree.
        """
        ax = (np.arange(probe) + 0.5) / probe
        mesh = np.stack([m.ravel() for m in np.meshgrid(*([ax] * self.dim), indexing="ij")], -1)
        pts = [self.p_arr % 1.0]
        for i in range(1, n_cap + 1):
            s = self.base ** i
            if s ** self.dim > 2_000_000:
                break
            lat = np.stack([m.ravel() for m in np.meshgrid(*([np.arange(s)] * self.dim),
                                                           indexing="ij")], -1)
            pts.append(((lat + self.p_arr) / s) % 1.0)
            tree = cKDTree(np.concatenate([np.atleast_2d(q) for q in pts]), boxsize=1.0)
            dist, _ = tree.query(mesh)
            if dist.max() < delta:
                return i
        raise ValueError("backward orbit of p not delta-dense within the scan horizon")


def ambient_for(model: ModelSystem | str, p=None) -> AmbientSystem:
    """Ambient torus system for a built-in model with uniform affine branches."""
    from towerlab.models import get_model

    m = get_model(model) if isinstance(model, str) else model
    fam = m.family
    base = getattr(fam, "base", None)
    if not isinstance(fam, AffineFamily) or base is None:
        raise ValueError(f"model {m.model_id} has no torus ambient (needs uniform affine branches)")
    return AmbientSystem(base=base, dim=fam.dim, p=p)


def D_ratio(d: int, lam: float, k: int) -> float:
    """Leb(union_{i>=k} I_i) / Leb(I_k) for the annuli I_k in dimension d.

    Both binomial differences are expanded in powers of u = lam^(k-1) so that
    large k does not cancel catastrophically.
    """
    u = lam ** (k - 1)
    num = sum(math.comb(d, j) * u ** j for j in range(1, d + 1))
    den = sum(math.comb(d, j) * u ** j * (1 - lam ** j) for j in range(1, d + 1))
    return num / den


def D_sup(d: int, lam: float, k_max: int = 400) -> float:
    """sup_k D(d, lam, k); the k -> infinity limit 1/(1 - lam) is included."""
    vals = [D_ratio(d, lam, k) for k in range(1, k_max + 1) if lam ** (k - 1) > 1e-250]
    return max(vals + [1.0 / (1.0 - lam)])


def least_L(C1: float, C2: float, d: int) -> int:
    L = 3
    while C1 * C2 ** 2 * (2 ** d - 1) / (L - 1) ** d >= 0.25:
        L += 1
    return L


@dataclass(frozen=True)
class InducingConstants:
    delta0: float
    delta1: float
    delta: float
    L: int
    eps: float
    N1: int
    N2: int
    C1: float
    C2: float
    C3: float
    C4: float
    d_u: int
    lam: float
    alpha: float
    D: float = field(init=False)
    a1: float = field(init=False)
    a0: float = field(init=False)

    def __post_init__(self):
        D = D_sup(self.d_u, self.lam ** self.alpha)
        a1 = 1.0 / (self.C1 * self.C2 ** 2 * D)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a0", (2 + a1) / (2 * a1))

    @property
    def N(self) -> int:
        return self.N1 + self.N2

    def violations(self) -> list[str]:
        """Names of the defining inequalities that fail."""
        c = self
        out = []
        if c.L < 3 or not c.C1 * c.C2 ** 2 * (2 ** c.d_u - 1) / (c.L - 1) ** c.d_u < 0.25:
            out.append("L")
        if not 0 < c.delta < c.delta1 < c.delta0:
            out.append("delta<delta1<delta0")
        if not c.C3 * (3 * c.delta) ** c.alpha < c.delta0 / 2:
            out.append("C3(3delta)^alpha<delta0/2")
        if not c.C4 * (c.L + 1) * c.delta < c.delta0:
            out.append("C4(L+1)delta<delta0")
        if not c.eps < (c.delta / c.C3) ** (1 / c.alpha):
            out.append("eps<(delta/C3)^(1/alpha)")
        if not c.eps < (c.delta * (c.lam ** -c.alpha - 1) / c.C3) ** (1 / c.alpha):
            out.append("eps<(delta(lam^-alpha-1)/C3)^(1/alpha)")
        if not 0 < c.eps < c.delta0 / 2:
            out.append("eps<delta0/2")
        if not c.L * c.delta + c.eps < c.delta0:
            out.append("L*delta+eps<delta0")
        if not c.lam ** c.N2 < c.eps / c.delta0:
            out.append("lam^N2<eps/delta0")
        return out

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(D=self.D, a1=self.a1, a0=self.a0, N=self.N)
        return d


def annulus_index(dist, delta: float, lam_alpha: float):
    """Index k >= 1 with delta(1 + lam^k) <= dist < delta(1 + lam^(k-1)).

    Works on scalars (returns int or None) and arrays (returns int64 array with
    0 for "no annulus").  Distances at or inside delta, or exactly at 2*delta,
    lie in no annulus.  Boundaries are matched with a relative tolerance of 1e-9
    on the logarithmic index so that decimal inputs such as 0.15 land on the
    closed end as written.
    """
    scalar = np.ndim(dist) == 0
    d = np.atleast_1d(np.asarray(dist, float))
    if np.any(d > 2 * delta * (1 + 1e-12)):
        raise ValueError("point outside D_2")
    x = d / delta - 1.0
    out = np.zeros(d.shape, dtype=np.int64)
    ok = (x > 0) & (x < 1 - 1e-12)
    r = np.log(x[ok]) / math.log(lam_alpha)
    near = np.abs(r - np.rint(r)) < 1e-9
    k = np.where(near, np.rint(r), np.ceil(r))
    out[ok] = np.clip(k, 1, 2 ** 62).astype(np.int64)
    if scalar:
        return int(out[0]) if out[0] > 0 else None
    return out


def derive_constants(ambient: AmbientSystem, overrides: dict | None = None,
                     delta0: float = 0.45, max_rungs: int = 60) -> InducingConstants:
    """Choose L, delta, eps, N1, N2 for ``ambient``.

    delta and eps are the largest values on the ladder delta0 * 2^-j that satisfy
    every defining inequality.  ``overrides`` may fix any field by name.
    """
    ov = dict(overrides or {})
    delta0 = float(ov.pop("delta0", delta0))
    C1, C2, C3, C4 = (float(ov.pop(k, getattr(ambient, k))) for k in ("C1", "C2", "C3", "C4"))
    alpha = float(ov.pop("alpha", ambient.alpha))
    lam = float(ov.pop("lam", ambient.lam))
    d_u = ambient.dim
    L = int(ov.pop("L", least_L(C1, C2, d_u)))
    delta1 = float(ov.pop("delta1", delta0 / 2))
    ladder = [delta0 * 2.0 ** -j for j in range(1, max_rungs + 1)]

    def ok_delta(dl):
        return dl < delta1 and C3 * (3 * dl) ** alpha < delta0 / 2 and C4 * (L + 1) * dl < delta0

    if "delta" in ov:
        delta = float(ov.pop("delta"))
    else:
        delta = next((dl for dl in ladder if ok_delta(dl)), None)
        if delta is None:
            raise ValueError("no admissible delta on the ladder")

    def ok_eps(e):
        return (e < (delta / C3) ** (1 / alpha)
                and e < (delta * (lam ** -alpha - 1) / C3) ** (1 / alpha)
                and e < delta0 / 2 and L * delta + e < delta0)

    if "eps" in ov:
        eps = float(ov.pop("eps"))
    else:
        eps = next((e for e in ladder if ok_eps(e)), None)
        if eps is None:
            raise ValueError("no admissible eps on the ladder")
    N1 = int(ov.pop("N1")) if "N1" in ov else ambient.density_horizon(delta)
    if "N2" in ov:
        N2 = int(ov.pop("N2"))
    else:
        N2 = 1
        while not lam ** N2 < eps / delta0:
            N2 += 1
    if ov:
        raise KeyError(f"unknown constant overrides: {sorted(ov)}")
    c = InducingConstants(delta0, delta1, delta, L, eps, N1, N2, C1, C2, C3, C4, d_u, lam, alpha)
    bad = c.violations()
    if bad:
        raise ValueError("constants violate: " + ", ".join(bad))
    return c


def with_overrides(c: InducingConstants, **kw) -> InducingConstants:
    return replace(c, **kw)
