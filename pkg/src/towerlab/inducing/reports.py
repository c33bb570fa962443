"""Empirical checks of the inequalities asserted along the inducing construction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from towerlab.inducing.construction import (
    KIND_B,
    InducingResult,
    PartitionState,
    replay_labels,
)
from towerlab.inducing.constants import annulus_index

GRID_SLACK = 0.02


def collar_census(state: PartitionState) -> dict:
    """Group B-cells by ancestor component and check the collar picture.

    For a collar born at generation m the geometric ring index k of a cell
    (its annulus under g_m) must satisfy t_n = k - (n - m); the outer ring is
    {k = n - m + 1} and the union of outer rings must equal {t_n = 1}.
    """
    n = state.n
    reg = state.registry
    B = np.flatnonzero(state.kind == KIND_B)
    out = {"n": n, "collars": 0, "by_birth": {}, "t_mismatch": 0, "outer_ring_mismatch": 0,
           "disjointness_violations": 0, "ok": True}
    if state.last is not None:
        out["disjointness_violations"] = state.last["propeps_violations"] + state.last["collar_refresh"]
    if B.size == 0:
        out["ok"] = out["disjointness_violations"] == 0
        return out
    cid = state.cid[B]
    gen = np.asarray(reg.comp_gen)[cid]
    keys = np.asarray(reg.comp_key)[cid]
    amb, c = reg.ambient, reg.consts
    kgeom = np.zeros(B.size, np.int64)
    for m in np.unique(gen):
        sel = gen == m
        _, disp = amb.image(state.grid.centers[B[sel]], int(m))
        # the cell's own key at generation m must be its collar's key
        kk, _ = amb.image(state.grid.centers[B[sel]], int(m))
        wrong = np.any(kk != keys[sel], axis=1)
        d = np.linalg.norm(disp, axis=1)
        kg = annulus_index(np.minimum(d, 2 * c.delta), c.delta, c.lam ** c.alpha)
        kg[wrong] = -1
        kgeom[sel] = kg
    t = state.t[B]
    outer_geom = kgeom == (n - gen + 1)
    out["t_mismatch"] = int(np.sum(t != kgeom - (n - gen)))
    out["outer_ring_mismatch"] = int(np.sum(outer_geom != (t == 1)))
    ucid, counts = np.unique(cid, return_counts=True)
    out["collars"] = int(ucid.size)
    births = np.asarray(reg.comp_gen)[ucid]
    for m in np.unique(births):
        sel = births == m
        out["by_birth"][int(m)] = {"collars": int(sel.sum()), "cells": int(counts[sel].sum()),
                                   "outer_cells": int(np.sum(outer_geom[gen == m]))}
    out["ok"] = (out["t_mismatch"] == 0 and out["outer_ring_mismatch"] == 0
                 and out["disjointness_violations"] == 0)
    return out


def ratio_report(result: InducingResult, slack: float = GRID_SLACK) -> list[dict]:
    """Per-generation measure ratios against the bounds the construction relies on."""
    c = result.constants
    a1, a0 = c.a1, c.a0
    rows = []
    for r in result.records:
        def frac(num, den):
            return None if den == 0 else num / den

        ra = frac(r["BA"], r["B_prev"])
        rb = frac(r["AB"], r["A_prev"])
        rc = frac(r["AF"], r["A_prev"])
        row = {
            "n": r["n"], "ratio_a": ra, "ratio_b": rb, "ratio_c": rc,
            "a_ok": None if ra is None else ra >= a1 - slack,
            "b_ok": None if rb is None else rb <= 0.25 + slack,
            "c_ok": None if rc is None else rc <= 0.25 + slack,
            "facts_a": r["AA"] >= 0.5 * r["A_prev"],
            "facts_b": r["BB"] <= (1 - a1) * r["B_prev"] + slack * max(r["B_prev"], 1),
            "facts_c": r["B"] <= 0.25 * r["A_prev"] + (1 - a1) * r["B_prev"]
            + slack * max(r["A_prev"], 1),
            "facts_d": r["A"] >= 0.5 * r["A_prev"] + a1 * r["B_prev"] - slack * max(r["A_prev"], 1),
            "facts2": r["B"] <= a0 * r["A"],
        }
        row["bound_ok"] = bool(row["b_ok"] is not False and row["c_ok"] is not False and row["facts2"])
        rows.append(row)
    return rows


@dataclass
class TailFit:
    gamma: float
    intercept: float
    r2: float
    residuals: dict
    window: tuple
    exponential: bool


def tail_fit(n, leb, counts=None, min_count: int = 100) -> TailFit:
    """Least squares of log Leb(R > n) against n.

    With ``counts`` (cells newly finished at each n) the fit uses the maximal
    suffix of generations whose counts exceed ``min_count``; otherwise every
    nonzero entry is used.
    """
    n = np.asarray(n, float)
    leb = np.asarray(leb, float)
    nz = leb > 0
    if nz.sum() < 6:
        raise ValueError("tail table needs at least 6 nonzero entries")
    use = nz.copy()
    if counts is not None:
        counts = np.asarray(counts)
        use = np.zeros_like(nz)
        i = len(n) - 1
        while i >= 0 and counts[i] > min_count and nz[i]:
            use[i] = True
            i -= 1
        if use.sum() < 3:
            raise ValueError("too few generations above the count threshold")
    x, y = n[use], np.log(leb[use])
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    gamma = float(np.exp(slope))
    resid = {int(a): float(b) for a, b in zip(x, y - pred)}
    return TailFit(gamma, float(icpt), r2, resid, (int(x.min()), int(x.max())),
                   bool(gamma < 1 - 1e-12))


def fit_result_tail(result: InducingResult, min_count: int = 100) -> TailFit:
    rows = result.tail_table()[1:]
    return tail_fit([r["n"] for r in rows], [r["leb_R_gt_n"] for r in rows],
                    [r["cells_R_eq_n"] for r in rows], min_count)


def keyfact_report(result: InducingResult) -> dict:
    """Smallest ratio Leb(union_{i<=N} {R = n+i}) / Leb(A_{n-1}) over observed n."""
    N = result.constants.N
    recs = result.records
    fin = np.array([r["R_eq_n"] for r in recs])
    ratios = {}
    for i, r in enumerate(recs):
        if i + N >= len(recs) or r["A_prev"] == 0:
            continue
        ratios[r["n"]] = float(fin[i:i + N + 1].sum() / r["A_prev"])
    c1 = min(ratios.values()) if ratios else None
    return {"N": N, "ratios": ratios, "c1": c1, "ok": c1 is not None and c1 > 0}


def _probe_points(result: InducingResult, n_probe: int) -> np.ndarray:
    cent = result.state.grid.centers
    step = max(1, cent.shape[0] // n_probe)
    return cent[::step] - result.ambient.p_arr


def markov_check(result: InducingResult, n_probe: int = 2048, n_roundtrip: int = 8,
                 onto_threshold: float = 0.99) -> list[dict]:
    """Onto / into / injectivity verdicts for every finished component.

    onto: fraction of Y probe cells whose pullback along the component's branch
    replays to the component.  Components whose U^1 ball cannot meet an older
    component and are unclipped are onto exactly; the rest are sampled.
    into: every cell of U is mapped by phi_n within delta0 of p and carries the
    component's key.  injective: distinct cells of U land in distinct Y cells,
    det Dg_n has constant sign, and g_n(h(y)) = y on probe points.
    """
    st, reg, amb, c = result.state, result.registry, result.ambient, result.constants
    grid = st.grid
    n_max = st.n
    probe = _probe_points(result, n_probe)
    rt = probe[:: max(1, probe.shape[0] // n_roundtrip)][:n_roundtrip]
    fin = np.flatnonzero(st.R > 0)
    out = []
    for n in range(1, n_max + 1):
        g = reg.gens.get(n)
        if g is None or g.codes.size == 0:
            continue
        has = g.u1_cells > 0
        ids, keys = g.ids[has], g.keys[has]
        if ids.size == 0:
            continue
        b_n = float(amb.base) ** n
        cells = fin[st.R[fin] == n]
        ccid = st.cid[cells]
        kk, disp = amb.image(grid.centers[cells], n)
        local = ccid - ids[0]
        order = np.searchsorted(ids, ccid)
        key_ok = np.all(kk == keys[order], axis=1)
        d = np.linalg.norm(disp, axis=1)
        into_bad = np.bincount(order[~key_ok | (d >= c.delta0)], minlength=ids.size)
        img = grid.cell_of(disp)
        pairs = np.unique(np.stack([order, img], 1), axis=0)
        distinct = np.bincount(pairs[:, 0], minlength=ids.size)
        ncell = np.bincount(order, minlength=ids.size)
        del local
        sign = np.sign(b_n ** amb.dim)
        # roundtrip on probe points for all components at once
        xs = amb.pullback(rt[None, :, :], keys[:, None, :], n).reshape(-1, amb.dim)
        k2, d2 = amb.image(xs, n)
        rt_err = np.max(np.abs(d2 - np.tile(rt, (ids.size, 1))), axis=1).reshape(ids.size, -1).max(1) \
            if amb.dim else None
        rt_key = np.all(k2 == np.repeat(keys, rt.shape[0], axis=0), axis=1).reshape(ids.size, -1).all(1)
        # onto screen: an older U^1 ball can only meet this one through the
        # nearest key of its own generation
        centres = (amb.p_arr + keys) / b_n
        flagged = np.zeros(ids.size, bool)
        for m in range(1, n):
            gm = reg.gens.get(m)
            if gm is None or gm.codes.size == 0:
                continue
            km, _ = amb.image(centres, m)
            hit = reg.lookup(reg.encode(km, m), m) >= 0
            if hit.any():
                cm = (amb.p_arr + km[hit]) / float(amb.base) ** m
                close = np.linalg.norm(cm - centres[hit], axis=1) < c.delta / float(amb.base) ** m \
                    + c.delta / b_n
                flagged[np.flatnonzero(hit)[close]] = True
        for cid in reg.clip:
            j = np.searchsorted(ids, cid)
            if j < ids.size and ids[j] == cid:
                flagged[j] = True
        onto = np.ones(ids.size)
        for j in np.flatnonzero(flagged):
            xs = amb.pullback(probe, keys[j], n)
            R, lab = replay_labels(reg, xs, n_max)
            onto[j] = float(np.mean((R == n) & (lab == ids[j])))
        for j in range(ids.size):
            out.append({
                "id": int(ids[j]), "birth_n": n, "cells": int(ncell[j]),
                "onto_fraction": float(onto[j]),
                "onto": bool(onto[j] >= onto_threshold),
                "into": bool(into_bad[j] == 0),
                "injective": bool(distinct[j] == ncell[j] and sign > 0 and rt_key[j]
                                  and rt_err[j] < 1e-9),
                "screened": not bool(flagged[j]),
            })
    return out
