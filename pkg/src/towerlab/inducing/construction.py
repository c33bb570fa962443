"""Generation-by-generation construction of the return time R on a cell grid.

Y = D_1 = B(p, delta) is covered by a box of 2^q cells per axis; a cell belongs
to Y when its centre does.  Each cell carries the label of its centre, so labels
are exact at the sample points even after components shrink below one cell.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from towerlab.inducing.constants import AmbientSystem, InducingConstants, annulus_index

log = logging.getLogger(__name__)

KIND_A, KIND_B, KIND_F = 0, 1, 2


@dataclass
class CellGrid:
    dim: int
    q: int
    delta: float
    p: np.ndarray

    def __post_init__(self):
        if self.q < 2:
            raise ValueError("resolution q must be >= 2")
        self.n_axis = 2 ** self.q
        self.h = 2 * self.delta / self.n_axis
        self.shape = (self.n_axis,) * self.dim
        ax = -self.delta + (np.arange(self.n_axis) + 0.5) * self.h
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        rel = np.stack([m.ravel() for m in mesh], -1)
        inside = np.linalg.norm(rel, axis=1) < self.delta
        self.flat = np.flatnonzero(inside)
        self.centers = rel[inside] + self.p
        self.cell_volume = self.h ** self.dim

    @property
    def n_cells(self) -> int:
        return self.flat.size

    def scatter(self, values, fill=0, dtype=None) -> np.ndarray:
        out = np.full(int(np.prod(self.shape)), fill, dtype=dtype or np.asarray(values).dtype)
        out[self.flat] = values
        return out.reshape(self.shape)

    def cell_of(self, rel: np.ndarray) -> np.ndarray:
        """Flat box index of the cell containing p + rel (rel shape (N, dim))."""
        idx = np.floor((rel + self.delta) / self.h).astype(np.int64)
        idx = np.clip(idx, 0, self.n_axis - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape)


@dataclass
class GenerationRegistry:
    """Accepted preimage keys of one generation (sorted by code)."""

    n: int
    codes: np.ndarray
    keys: np.ndarray
    ids: np.ndarray
    u1_cells: np.ndarray


@dataclass
class Registry:
    ambient: AmbientSystem
    consts: InducingConstants
    gens: dict = field(default_factory=dict)
    comp_gen: list = field(default_factory=list)
    comp_key: list = field(default_factory=list)
    clip: dict = field(default_factory=dict)  # id -> (normal, offset) restricting U to normal.(x-c) >= offset

    @property
    def n_components(self) -> int:
        return len(self.comp_gen)

    def center(self, cid: int) -> np.ndarray:
        n = self.comp_gen[cid]
        return (self.ambient.p_arr + np.asarray(self.comp_key[cid])) / float(self.ambient.base) ** n

    def key_offset(self, n: int) -> int:
        b = float(self.ambient.base) ** n
        return int(np.ceil(b * (self.consts.delta + np.max(np.abs(self.ambient.p_arr)) + 1.0))) + 2

    def encode(self, keys: np.ndarray, n: int) -> np.ndarray:
        K = self.key_offset(n)
        W = 2 * K + 1
        if W ** self.ambient.dim >= 2 ** 62:
            raise OverflowError("generation too deep for int64 key codes")
        code = np.zeros(keys.shape[0], dtype=np.int64)
        for i in range(keys.shape[1] - 1, -1, -1):
            code = code * W + (keys[:, i] + K)
        return code

    def lookup(self, codes: np.ndarray, n: int) -> np.ndarray:
        """Component id for each code at generation n, -1 if not accepted."""
        g = self.gens.get(n)
        out = np.full(codes.shape, -1, dtype=np.int64)
        if g is None or g.codes.size == 0:
            return out
        pos = np.searchsorted(g.codes, codes)
        pos = np.clip(pos, 0, g.codes.size - 1)
        hit = g.codes[pos] == codes
        out[hit] = g.ids[pos[hit]]
        return out


@dataclass
class PartitionState:
    n: int
    grid: CellGrid
    kind: np.ndarray
    t: np.ndarray
    R: np.ndarray
    cid: np.ndarray
    registry: Registry
    last: dict | None = None

    @property
    def consts(self) -> InducingConstants:
        return self.registry.consts

    @property
    def ambient(self) -> AmbientSystem:
        return self.registry.ambient

    def counts(self) -> dict:
        k = self.kind
        return {"A": int(np.sum(k == KIND_A)), "B": int(np.sum(k == KIND_B)),
                "F": int(np.sum(k == KIND_F))}

    def copy(self) -> "PartitionState":
        return PartitionState(self.n, self.grid, self.kind.copy(), self.t.copy(), self.R.copy(),
                              self.cid.copy(), self.registry, self.last)


def initial_state(ambient: AmbientSystem, consts: InducingConstants, q: int) -> PartitionState:
    grid = CellGrid(ambient.dim, q, consts.delta, ambient.p_arr)
    n = grid.n_cells
    return PartitionState(0, grid, np.zeros(n, np.int8), np.zeros(n, np.int64),
                          np.zeros(n, np.int32), np.full(n, -1, np.int64),
                          Registry(ambient, consts))


def eps_neighbourhood(state: PartitionState, n: int) -> np.ndarray:
    """Cells y of Y_{n-1} with d(phi_n y, phi_n A_{n-1}) < eps.

    phi_n scales lifted distances by base^n, so this is the set of cells within
    eps * base^-n of an A-cell centre.  Distances come from an exact Euclidean
    distance transform of the A mask.
    """
    grid = state.grid
    A = state.kind == KIND_A
    alive = state.kind != KIND_F
    thr = state.consts.eps / float(state.ambient.base) ** n
    if not A.any():
        return np.zeros_like(A)
    if thr <= grid.h:
        # distinct cell centres are at least h apart
        return A.copy()
    box = grid.scatter(~A, fill=True, dtype=bool)
    dist = ndimage.distance_transform_edt(box, sampling=grid.h).ravel()[grid.flat]
    return alive & (dist < thr)


def advance_generation(state: PartitionState, check_connectivity: bool = True) -> PartitionState:
    """Run generation n = state.n + 1 and return the new state (input untouched)."""
    c, amb, grid, reg = state.consts, state.ambient, state.grid, state.registry
    n = state.n + 1
    prev_kind, prev_t = state.kind, state.t
    A_prev = prev_kind == KIND_A
    B_prev = prev_kind == KIND_B
    aeps = eps_neighbourhood(state, n)

    keys, disp = amb.image(grid.centers, n)
    dist = np.linalg.norm(disp, axis=1)
    idxL = np.flatnonzero(dist < c.L * c.delta)
    codesL = reg.encode(keys[idxL], n)
    good = aeps[idxL]
    bad_codes = np.unique(codesL[~good])
    cand_codes, first = np.unique(codesL[good], return_index=True)
    cand_keys = keys[idxL[good][first]]
    b_n = float(amb.base) ** n
    centres = (amb.p_arr + cand_keys) / b_n
    contained = np.linalg.norm(centres - amb.p_arr, axis=1) + c.L * c.delta / b_n <= c.delta
    acc = contained & ~np.isin(cand_codes, bad_codes)
    acc_codes, acc_keys = cand_codes[acc], cand_keys[acc]
    base_id = reg.n_components
    ids = base_id + np.arange(acc_codes.size, dtype=np.int64)

    pos = np.searchsorted(acc_codes, codesL)
    pos = np.clip(pos, 0, max(acc_codes.size - 1, 0))
    hit = (acc_codes[pos] == codesL) if acc_codes.size else np.zeros(codesL.size, bool)
    cells = idxL[hit]
    comp = ids[pos[hit]] if acc_codes.size else np.zeros(0, np.int64)
    dcell = dist[cells]
    u1 = dcell < c.delta
    u2 = (dcell >= c.delta) & (dcell < 2 * c.delta)
    uLm1 = dcell < (c.L - 1) * c.delta

    u1_count = np.bincount(comp[u1] - base_id, minlength=acc_codes.size) if acc_codes.size else \
        np.zeros(0, np.int64)
    reg.gens[n] = GenerationRegistry(n, acc_codes, acc_keys, ids, u1_count)
    reg.comp_gen.extend([n] * acc_codes.size)
    reg.comp_key.extend(map(tuple, acc_keys))

    ambiguous = 0
    if check_connectivity and acc_codes.size and c.L * c.delta / b_n >= 2 * grid.h:
        mask = np.zeros(grid.n_cells, bool)
        mask[cells] = True
        lab, _ = ndimage.label(grid.scatter(mask, fill=False, dtype=bool))
        lab = lab.ravel()[grid.flat[cells]]
        pairs = np.unique(np.stack([comp, lab], 1), axis=0)
        split = np.sum(np.bincount(pairs[:, 0] - base_id) > 1)
        merged = np.sum(np.bincount(pairs[:, 1]) > 1)
        ambiguous = int(split + merged)
        if ambiguous:
            log.warning("generation %d: %d grid-connectivity conflicts (split %d, merged %d)",
                        n, ambiguous, split, merged)

    new = state.copy()
    new.n = n
    # B-remainder decrements; A-remainder keeps t = 0
    dec = B_prev.copy()
    dec[cells] = False
    new.t[dec] -= 1
    back = dec & (new.t == 0)
    new.kind[back] = KIND_A
    new.cid[back] = -1
    fin = cells[u1]
    new.kind[fin] = KIND_F
    new.R[fin] = n
    new.cid[fin] = comp[u1]
    new.t[fin] = 0
    col = cells[u2]
    new.kind[col] = KIND_B
    new.t[col] = annulus_index(dcell[u2], c.delta, c.lam ** c.alpha)
    new.cid[col] = comp[u2]

    vol = grid.cell_volume
    nk = new.kind
    rec = {
        "n": n,
        "A_prev": int(A_prev.sum()), "B_prev": int(B_prev.sum()),
        "AA": int(np.sum(A_prev & (nk == KIND_A))), "AB": int(np.sum(A_prev & (nk == KIND_B))),
        "AF": int(np.sum(A_prev & (nk == KIND_F))), "BA": int(np.sum(B_prev & (nk == KIND_A))),
        "BB": int(np.sum(B_prev & (nk == KIND_B))), "BF": int(np.sum(B_prev & (nk == KIND_F))),
        "A": int(np.sum(nk == KIND_A)), "B": int(np.sum(nk == KIND_B)),
        "R_eq_n": int(fin.size), "R_gt_n": int(np.sum(nk != KIND_F)),
        "aeps": int(aeps.sum()),
        "eps2a_violations": int(np.sum(aeps & (prev_t > 1))),
        "propeps_violations": int(np.sum(B_prev[cells[uLm1]])),
        "collar_refresh": int(np.sum(B_prev[col])),
        "components": int(acc_codes.size), "finished_components": int(np.sum(u1_count > 0)),
        "ambiguous": ambiguous,
        "cell_volume": vol,
    }
    new.last = rec
    return new


@dataclass
class InducingResult:
    state: PartitionState
    records: list
    censuses: list
    constants: InducingConstants
    ambient: AmbientSystem

    @property
    def registry(self) -> Registry:
        return self.state.registry

    def tail_table(self) -> list[dict]:
        vol = self.state.grid.cell_volume
        rows = [{"n": 0, "leb_R_gt_n": self.state.grid.n_cells * vol,
                 "leb_A_n": self.state.grid.n_cells * vol, "leb_B_n": 0.0,
                 "cells_R_gt_n": self.state.grid.n_cells, "cells_R_eq_n": 0}]
        for r in self.records:
            rows.append({"n": r["n"], "leb_R_gt_n": r["R_gt_n"] * vol, "leb_A_n": r["A"] * vol,
                         "leb_B_n": r["B"] * vol, "cells_R_gt_n": r["R_gt_n"],
                         "cells_R_eq_n": r["R_eq_n"]})
        return rows


def build_inducing(ambient: AmbientSystem, consts: InducingConstants, n_max: int, q: int = 10,
                   census: bool = True) -> InducingResult:
    from towerlab.inducing.reports import collar_census

    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    bad = consts.violations()
    if bad:
        raise ValueError("invalid constants: " + ", ".join(bad))
    state = initial_state(ambient, consts, q)
    records, censuses = [], []
    for _ in range(n_max):
        state = advance_generation(state)
        records.append(state.last)
        if census:
            censuses.append(collar_census(state))
    return InducingResult(state, records, censuses, consts, ambient)


def replay_labels(registry: Registry, points: np.ndarray, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise (R, component id) of arbitrary points from the accepted-key registry.

    A point finishes at the first generation whose accepted key owns it within
    g_n-distance delta (and inside any clip half-space).  R = 0 means unfinished.
    """
    amb, c = registry.ambient, registry.consts
    pts = np.atleast_2d(np.asarray(points, float))
    R = np.zeros(pts.shape[0], np.int32)
    cid = np.full(pts.shape[0], -1, np.int64)
    for n in range(1, n_max + 1):
        if n not in registry.gens:
            break
        todo = np.flatnonzero(R == 0)
        if todo.size == 0:
            break
        keys, disp = amb.image(pts[todo], n)
        near = np.linalg.norm(disp, axis=1) < c.delta
        sel = todo[near]
        ids = registry.lookup(registry.encode(keys[near], n), n)
        ok = ids >= 0
        if registry.clip:
            for j in np.flatnonzero(ok):
                cl = registry.clip.get(int(ids[j]))
                if cl is not None:
                    normal, off = cl
                    if np.dot(normal, pts[sel[j]] - registry.center(int(ids[j]))) < off:
                        ok[j] = False
        R[sel[ok]] = n
        cid[sel[ok]] = ids[ok]
    return R, cid
