from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from towerlab.inducing import (
    AmbientSystem,
    D_ratio,
    D_sup,
    advance_generation,
    ambient_for,
    annulus_index,
    build_inducing,
    collar_census,
    derive_constants,
    fit_result_tail,
    initial_state,
    keyfact_report,
    least_L,
    markov_check,
    ratio_report,
    replay_labels,
    tail_fit,
)
from towerlab.inducing.construction import KIND_A, KIND_B, KIND_F


@pytest.fixture(scope="module")
def run_e():
    amb = ambient_for("planar-triple")
    c = derive_constants(amb)
    return build_inducing(amb, c, 9, q=8)


def test_least_L():
    assert least_L(1, 1, 1) == 6
    assert least_L(1, 1, 2) == 5


def test_D_and_a_constants():
    # D(1, 1/2, k) = 1/(1 - 1/2) for every k
    assert all(D_ratio(1, 0.5, k) == pytest.approx(2.0) for k in range(1, 30))
    assert D_sup(1, 0.5) == pytest.approx(2.0)
    c = derive_constants(AmbientSystem(2, 1))
    assert (c.D, c.a1, c.a0) == (pytest.approx(2.0), pytest.approx(0.5), pytest.approx(2.5))
    # d = 2, lam = 1/3: sup approached from below by the limit 1/(1 - lam)
    assert D_sup(2, 1 / 3) == pytest.approx(1.5)
    assert D_ratio(2, 1 / 3, 1) == pytest.approx(1.35)


def test_derived_constants_satisfy_invariants():
    for amb in (AmbientSystem(3, 2), AmbientSystem(2, 1)):
        c = derive_constants(amb)
        assert c.violations() == []
        assert c.lam ** c.N2 < c.eps / c.delta0 and c.lam ** (c.N2 - 1) >= c.eps / c.delta0
        # ladder maximality: doubling delta or eps breaks an inequality
        with pytest.raises(ValueError):
            derive_constants(amb, {"delta": 2 * c.delta, "eps": c.eps})
    with pytest.raises(ValueError):
        derive_constants(AmbientSystem(3, 2), {"eps": 0.2})


def test_density_horizon():
    # union of the i-th preimages of 0 under y -> 3y is the lattice 3^-N1 Z^2
    amb = AmbientSystem(3, 2)
    n1 = amb.density_horizon(0.05625)
    assert np.sqrt(2) / 2 * 3.0 ** -n1 < 0.05625 <= np.sqrt(2) / 2 * 3.0 ** -(n1 - 1)


def test_annulus_index_examples():
    assert annulus_index(0.17, 0.1, 0.5) == 1
    assert annulus_index(0.15, 0.1, 0.5) == 1
    assert annulus_index(0.20, 0.1, 0.5) is None
    assert annulus_index(0.125, 0.1, 0.5) == 2
    with pytest.raises(ValueError):
        annulus_index(0.3, 0.1, 0.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0001, 1.9999), st.sampled_from([0.5, 1 / 3, 0.25]))
def test_annulus_index_defining_inequality(ratio, lam):
    delta = 0.1
    k = annulus_index(ratio * delta, delta, lam)
    assert k is not None
    tol = 1e-9
    assert delta * (1 + lam ** k) <= ratio * delta * (1 + tol)
    assert ratio * delta < delta * (1 + lam ** (k - 1)) * (1 + tol)


def test_nmax_zero_is_error():
    amb = ambient_for("E")
    with pytest.raises(ValueError):
        build_inducing(amb, derive_constants(amb), 0, q=6)


def _brute_force_gen1(amb, c, q):
    """Cells of {R = 1}: enumerate all lattice preimages of D_1 whose D_L preimage fits in Y."""
    st = initial_state(amb, c, q)
    y = st.grid.centers
    b = amb.base
    labels = np.zeros(y.shape[0], bool)
    rng = range(-b, b + 1)
    for k in np.array(np.meshgrid(*([list(rng)] * amb.dim), indexing="ij")).reshape(amb.dim, -1).T:
        centre = (amb.p_arr + k) / b
        if np.linalg.norm(centre - amb.p_arr) + c.L * c.delta / b > c.delta:
            continue
        labels |= np.linalg.norm(b * y - amb.p_arr - k, axis=1) < c.delta
    return st, labels


@pytest.mark.parametrize("amb", [AmbientSystem(3, 2), AmbientSystem(2, 1), AmbientSystem(7, 1),
                                 AmbientSystem(7, 2)])
def test_generation_one_matches_enumeration(amb):
    c = derive_constants(amb)
    st0, oracle = _brute_force_gen1(amb, c, 9 if amb.dim == 1 else 7)
    st1 = advance_generation(st0)
    assert np.array_equal(st1.kind == KIND_F, oracle)
    if amb.base == 7:
        assert oracle.any()
        res = build_inducing(amb, c, 1, q=9 if amb.dim == 1 else 7)
        mc = markov_check(res)
        assert mc and all(m["onto"] and m["into"] and m["injective"] for m in mc)


def test_empty_eps_neighbourhood_only_decrements():
    amb = ambient_for("E")
    c = derive_constants(amb)
    st = initial_state(amb, c, 6)
    st.kind[:] = KIND_B
    st.t[:] = 3
    st.cid[:] = 0
    new = advance_generation(st)
    assert new.last["components"] == 0
    assert np.all(new.t == 2) and np.all(new.kind == KIND_B)


def test_label_accounting(run_e):
    total = run_e.state.grid.n_cells
    prev_A = total
    for r in run_e.records:
        assert r["A"] + r["B"] + (total - r["R_gt_n"]) == total
        assert r["A_prev"] == r["AA"] + r["AB"] + r["AF"]
        assert r["B_prev"] == r["BA"] + r["BB"] + r["BF"]
        assert r["A_prev"] == prev_A
        prev_A = r["A"]


def test_tail_monotone_and_positive(run_e):
    rows = run_e.tail_table()
    leb = [r["leb_R_gt_n"] for r in rows]
    assert all(v > 0 for v in leb)
    assert all(a >= b for a, b in zip(leb, leb[1:]))
    assert any(r["cells_R_eq_n"] > 0 for r in rows)


def test_t_dynamics_stepwise():
    amb = ambient_for("E")
    c = derive_constants(amb)
    st = initial_state(amb, c, 8)
    for _ in range(7):
        new = advance_generation(st)
        was_B = st.kind == KIND_B
        stay = was_B & (new.kind != KIND_F)
        hit = stay & (new.cid != st.cid) & (new.kind == KIND_B)
        plain = stay & ~hit
        assert np.all(new.t[plain] == st.t[plain] - 1)
        assert np.all((new.kind[plain] == KIND_A) == (new.t[plain] == 0))
        # Y_n = Y_{n-1} minus {R = n}
        assert np.all((new.kind != KIND_F) == ((st.kind != KIND_F) & (new.R != new.n)))
        st = new


def test_collar_census(run_e):
    amb = ambient_for("E")
    c = derive_constants(amb)
    st0 = initial_state(amb, c, 6)
    cen0 = collar_census(st0)
    assert cen0["collars"] == 0 and cen0["ok"]
    for cen in run_e.censuses:
        assert cen["ok"], cen
        assert cen["outer_ring_mismatch"] == 0 and cen["disjointness_violations"] == 0
    # union of outer rings equals {t = 1} at the final state
    st = run_e.state
    assert collar_census(st)["outer_ring_mismatch"] == 0


def test_ratio_report(run_e):
    rows = ratio_report(run_e)
    assert rows[0]["ratio_a"] is None  # B_0 is empty
    for r in rows:
        assert r["bound_ok"]
        assert r["ratio_b"] <= 0.27 and r["ratio_c"] <= 0.27
    for rec in run_e.records:
        assert rec["B"] <= run_e.constants.a0 * rec["A"]
        assert rec["eps2a_violations"] == 0


def test_tail_fit_examples():
    n = np.arange(1, 13)
    f = tail_fit(n, 2.0 ** -n)
    assert f.gamma == pytest.approx(0.5) and f.r2 == pytest.approx(1.0)
    f = tail_fit(n, np.full(12, 0.3))
    assert f.gamma == pytest.approx(1.0) and not f.exponential
    with pytest.raises(ValueError):
        tail_fit(n[:5], 2.0 ** -n[:5])


def test_tail_fit_run(run_e):
    f = fit_result_tail(run_e)
    assert f.gamma < 1 and f.r2 >= 0.95


def test_keyfact(run_e):
    kf = keyfact_report(run_e)
    assert kf["ok"] and kf["c1"] > 0


def test_markov_all_pass_and_truncation_fails(run_e):
    mc = markov_check(run_e)
    assert mc and all(m["onto"] and m["into"] and m["injective"] for m in mc)
    # cut one component in half through its centre
    victim = mc[len(mc) // 2]["id"]
    reg = run_e.registry
    reg.clip[victim] = (np.array([1.0, 0.0]), 0.0)
    try:
        mc2 = {m["id"]: m for m in markov_check(run_e)}
        assert not mc2[victim]["onto"]
        assert 0.4 < mc2[victim]["onto_fraction"] < 0.6
    finally:
        reg.clip.clear()


def test_replay_agrees_with_grid_labels(run_e):
    st = run_e.state
    R, cid = replay_labels(run_e.registry, st.grid.centers, st.n)
    assert np.array_equal(R, st.R)
    fin = st.R > 0
    assert np.array_equal(cid[fin], st.cid[fin])


def test_resolution_stability():
    amb = ambient_for("E")
    c = derive_constants(amb)
    lo = build_inducing(amb, c, 6, q=7, census=False).tail_table()
    hi = build_inducing(amb, c, 6, q=8, census=False).tail_table()
    # boundary of D_1 plus component boundaries, in units of the coarse cell
    h = 2 * c.delta / 2 ** 7
    for a, b in zip(lo, hi):
        bound = (2 * np.pi * c.delta / h + 4 * a["cells_R_eq_n"] + 200) * h * h
        assert abs(a["leb_R_gt_n"] - b["leb_R_gt_n"]) <= bound
