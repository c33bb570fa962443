from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import zeta

from towerlab.models import get_model
from towerlab.transfer import (
    TYPE_H1,
    UNTYPED,
    C2_chain,
    CollocationGrid,
    ConePair,
    GridFunction,
    TwistParameter,
    apply_normalized,
    apply_twisted,
    ball_family,
    bump,
    cancellation_check,
    cancellation_setup,
    chi_cutoff,
    cone_iterate,
    fed_probe,
    holder_norms,
    hurwitz_zeta,
    lasota_yorke_probe,
    leading_eigendata,
    norm_contraction_probe,
    random_cone_pair,
    twisted_values,
    uni_estimate,
)


@pytest.fixture(scope="module")
def setup_a():
    return cancellation_setup(get_model("A"))


def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


# -- grid -------------------------------------------------------------------

def test_interpolation_reproduces_nodes_and_affine():
    for dim, n in ((1, 65), (2, 17)):
        g = CollocationGrid(dim, n)
        v = np.random.default_rng(0).normal(size=g.size)
        assert np.allclose(g.interp(v, g.points), v, atol=1e-14)
        M = g.interp_matrix(np.random.default_rng(1).uniform(0, 1, (50, dim)) if dim > 1
                            else np.random.default_rng(1).uniform(0, 1, 50))
        assert np.allclose(np.asarray(M.sum(axis=1)).ravel(), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.floats(0, 1))
def test_multilinear_interpolation_exact_on_affine(a0, a1, a2, x, y):
    g = CollocationGrid(2, 9)
    P = g.points
    v = a0 + a1 * P[:, 0] + a2 * P[:, 1]
    assert g.interp(v, np.array([[x, y]]))[0] == pytest.approx(a0 + a1 * x + a2 * y, abs=1e-12)


def test_holder_norms_examples():
    g = CollocationGrid(1, 1025)
    assert holder_norms(GridFunction(g, np.full(g.size, -2.5)), 7) == (2.5, 0.0, 2.5)
    y = GridFunction(g, g.points)
    sup, semi, nb = holder_norms(y, 1)
    assert (sup, nb) == (1.0, 1.0) and semi == pytest.approx(1.0, rel=1e-12)
    assert holder_norms(y, 9)[2] == 1.0


def test_twist_parameter_abscissa():
    assert TwistParameter(0.01, 3.0).s == complex(0.01, 3.0)
    with pytest.raises(ValueError):
        TwistParameter(0.05, 1.0)
    with pytest.raises(ValueError):
        apply_twisted(get_model("A"), 0.2 + 1j, 1.0)


# -- operators --------------------------------------------------------------

def test_apply_twisted_examples():
    A, B = get_model("A"), get_model("B")
    assert np.max(np.abs(apply_twisted(A, 0, 1.0).values - 1)) < 1e-15
    out = apply_twisted(B, 0.03, 1.0).values
    assert np.max(np.abs(out - math.exp(-0.06))) < 1e-15
    g = apply_twisted(A, 0, lambda y: y)
    assert np.max(np.abs(g.values - (2 * g.grid.points + 1) / 4)) < 1e-15


def test_hurwitz_zeta_oracles():
    q = np.array([1.5, 7.25, 4097.0])
    for a in (2.0, 3.5):
        z, err = hurwitz_zeta(a, q[1:])
        assert np.allclose(z.real, zeta(a, q[1:]), rtol=1e-13) and err < 1e-10
    assert hurwitz_zeta(2.0, q[2:])[1] < 1e-40
    # recurrence zeta(a, q) - zeta(a, q + 1) = q^-a for complex a
    a = 2.0 + 3.0j
    z0, _ = hurwitz_zeta(a, q[1:] + 50)
    z1, _ = hurwitz_zeta(a, q[1:] + 51)
    assert np.allclose(z0 - z1, (q[1:] + 50) ** (-a), rtol=1e-12, atol=0)


@pytest.mark.parametrize("mid", ["A", "D", "E"])
def test_mass_conservation(mid):
    m = get_model(mid)
    rng = np.random.default_rng(11)
    if m.dim == 1:
        pts, w = _gl(200)
    else:
        x, wx = _gl(60)
        pts = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
        w = np.outer(wx, wx).ravel()
    for _ in range(20 if mid != "D" else 6):
        ks = rng.integers(0, 6, size=(3, m.dim))
        c = rng.normal(size=3)
        ph = rng.uniform(0, 2 * np.pi, 3)

        def v(y, ks=ks, c=c, ph=ph):
            y2 = np.asarray(y, float).reshape(-1, m.dim)
            return sum(c[j] * np.cos(2 * np.pi * (y2 @ ks[j]) + ph[j]) for j in range(3)) + np.exp(y2[:, 0])

        pv, bound = twisted_values(m, 0, v, pts)
        assert bound < 1e-10
        assert abs(np.sum(w * pv) - np.sum(w * v(pts))) <= 1e-8


def test_leading_eigendata_examples():
    for mid in ("A", "E"):
        ed = leading_eigendata(get_model(mid), 0.0)
        assert ed.lam == pytest.approx(1.0, abs=1e-6)
        assert np.max(np.abs(ed.f.values - 1)) < 1e-6
    ed = leading_eigendata(get_model("B"), 0.1, eps=0.15)
    assert ed.lam == pytest.approx(math.exp(-0.2), rel=1e-14)
    with pytest.raises(ValueError):
        leading_eigendata(get_model("B"), 0.1)


def test_gauss_eigendata():
    D = get_model("D")
    ed = leading_eigendata(D, 0.0)
    y = ed.f.grid.points
    assert ed.tail_bound < 1e-10 and ed.residual < 1e-10
    assert ed.lam == pytest.approx(1.0, abs=1e-6)
    assert np.max(np.abs(ed.f.values - 1 / ((1 + y) * math.log(2)))) < 1e-6
    with pytest.raises(RuntimeError):
        leading_eigendata(D, 0.01, max_iter=2)


def test_apply_normalized():
    A, B = get_model("A"), get_model("B")
    assert np.max(np.abs(apply_normalized(A, 0, 1.0).values - 1)) < 1e-6
    rng = np.random.default_rng(5)
    g = CollocationGrid(1, 2 ** 14)
    for _ in range(5):
        v = np.exp(2j * np.pi * rng.integers(1, 50) * g.points) * rng.uniform(0.2, 1.0)
        out = apply_normalized(A, 37j, v)
        assert out.sup() <= np.max(np.abs(v)) + 1e-6
    out = apply_normalized(B, 3j, 1.0).values
    assert np.max(np.abs(out - np.exp(-6j))) < 1e-12


def test_lasota_yorke_probe():
    A, E = get_model("A"), get_model("E")
    r = lasota_yorke_probe(A, 0, 8, trials=100)
    assert r.ok and r.rho <= 0.55 and r.rho0 == pytest.approx(0.5)
    r = lasota_yorke_probe(E, 0, 5, trials=24, res=128)
    assert r.ok and r.rho <= 1 / 3 + 0.05
    # constant inputs only: the seminorm term vanishes
    r = lasota_yorke_probe(A, 20j, 3, trials=1)
    assert r.rho == 0.0 and r.C3 >= 1.0


def test_c2_chain():
    assert C2_chain(get_model("A")) == pytest.approx(2.0)


def test_norm_contraction_probe():
    A = get_model("A")
    assert norm_contraction_probe(A, 0, 4, size=12).estimate == pytest.approx(1.0, abs=1e-12)
    n = 2 * math.ceil(math.log(100))
    p = norm_contraction_probe(A, 100j, n, size=24)
    assert p.estimate < 1
    vals = [p.table[k] for k in range(1, n + 1)]
    assert all(b <= a + 1e-3 for a, b in zip(vals, vals[1:]))


# -- UNI and the cancellation apparatus -------------------------------------

def test_uni_examples():
    A, B = get_model("A"), get_model("B")
    r = uni_estimate(A, (0,), (1,), 1)
    assert r.E == pytest.approx(0.5, abs=1e-9) and r.smoothed_ok and r.fd_rel_err < 1e-4
    assert uni_estimate(B, (0,), (1,), 1).E == 0
    assert uni_estimate(A, (0,), (0,), 1).E == 0
    with pytest.raises(ValueError):
        uni_estimate(A, (0,), (1, 1))
    # constant words of length 5: psi' = 2(1 - 2^-5) - (2/3)(1 - 4^-5)
    r5 = uni_estimate(A, (0,) * 5, (1,) * 5, 5)
    assert r5.E == pytest.approx(2 * (1 - 2 ** -5) - 2 / 3 * (1 - 4.0 ** -5), abs=1e-12)
    rE = uni_estimate(get_model("E"), (0,), (8,), 1, res=64)
    assert rE.E == pytest.approx(4 / 9, abs=1e-12) and rE.fd_rel_err < 1e-4


def test_ball_family_constants_and_geometry():
    fam = ball_family(200, 1.0, 0.5)
    assert fam.Delta == pytest.approx(8 * math.pi) and fam.E_prime == pytest.approx(32 * math.pi)
    assert fam.radius == 1 / 200 and fam.spacing == pytest.approx((1 + 8 * math.pi) / 200)
    c = fam.centers[:, 0]
    assert np.all(np.diff(c) >= 2 * fam.spacing - 1e-12)
    assert c.min() >= fam.spacing - 1e-12 and c.max() <= 1 - fam.spacing + 1e-12
    # maximality on the lattice: no candidate fits between or after
    step = fam.spacing / 8
    for x in np.arange(fam.spacing, 1 - fam.spacing + 1e-15, step):
        assert np.min(np.abs(c - x)) < 2 * fam.spacing
    with pytest.raises(ValueError):
        ball_family(90, 1.0, 0.5)
    with pytest.raises(ValueError):
        ball_family(200, 30.0, 0.5)


def test_every_ball_typed(setup_a):
    rng = np.random.default_rng(2)
    pair = random_cone_pair(setup_a.grid, 200, setup_a.C4, rng)
    assert pair.check().ok
    fam = ball_family(200, setup_a.delta_c, setup_a.E, 1, pair, setup_a)
    assert len(fam) >= 2 and np.all(fam.types != UNTYPED)
    d = np.linalg.norm(fam.shifted - fam.centers, axis=1)
    assert np.all(d < fam.Delta / 200)
    assert fam.half_radius < fam.radius


def test_chi_cutoff(setup_a):
    grid = setup_a.grid
    one = GridFunction(grid, np.ones(grid.size))
    assert np.all(chi_cutoff(100, one, one, None, setup_a).values == 1.0)
    rng = np.random.default_rng(4)
    pair = random_cone_pair(grid, 100, setup_a.C4, rng)
    fam = ball_family(100, setup_a.delta_c, setup_a.E, 1, pair, setup_a)
    chi = chi_cutoff(100, pair.u, pair.v, fam, setup_a).values
    assert chi.min() >= 0.75 and chi.max() <= 1.0
    # single ball of type h1: direct bump evaluation on the range of h_{00000}
    fam.types[:] = UNTYPED
    fam.types[0] = TYPE_H1
    chi = chi_cutoff(100, pair.u, pair.v, fam, setup_a).values
    x = grid.points
    on = x < 2.0 ** -5
    direct = 1 - bump(np.abs(32 * x[on] - fam.shifted[0, 0]) / fam.radius) / fam.C_prime
    assert np.max(np.abs(chi[on] - direct)) < 1e-12
    assert np.all(chi[~on] == 1.0)
    hat = on & (np.abs(32 * x - fam.shifted[0, 0]) < fam.half_radius)
    assert hat.any() and np.all(chi[hat] == fam.eta)


@pytest.mark.parametrize("b", [40, 100, 400])
def test_cancellation_domination(setup_a, b):
    rng = np.random.default_rng(b)
    for _ in range(5):
        pair = random_cone_pair(setup_a.grid, b, setup_a.C4, rng)
        res = cancellation_check(setup_a, 1j * b, pair)
        assert res.ok and res.typed == res.balls


def test_cone_pair_check_detects_violations(setup_a):
    g = setup_a.grid
    u = GridFunction(g, np.ones(g.size))
    assert not ConePair(u, GridFunction(g, 1.1 * np.ones(g.size)), 2.0, 50).check().ok
    rough = np.exp(1j * 400 * g.points)
    assert not ConePair(u, GridFunction(g, rough), 2.0, 50).check().ok


def test_cone_iterate(setup_a):
    A = get_model("A")
    run = cone_iterate(A, 100j, lambda y: np.exp(40j * y) * (1 + 0.5 * np.cos(2 * np.pi * y)), 8, setup_a)
    assert run.steps[0].l2_u == pytest.approx(1.0)
    l2u = [s.l2_u for s in run.steps]
    assert all(b <= a + 1e-15 for a, b in zip(l2u, l2u[1:]))
    assert run.beta_hat < 1 and all(s.cone_ok for s in run.steps)
    with pytest.raises(ValueError):
        cone_iterate(A, 20j, 1.0, 2, setup_a)
    with pytest.raises(ValueError):
        cone_iterate(A, 100j, lambda y: np.exp(1000j * y), 2, setup_a)
    deg = cone_iterate(get_model("B"), 60j, 1.0, 5)
    assert deg.degenerate


def test_fed_probe(setup_a):
    r = fed_probe(setup_a, 100, trials=30)
    assert r.c1 > 0 and r.balls == 4
