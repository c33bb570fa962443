from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from towerlab.models import (
    GaussFamily,
    SkewFactor,
    birkhoff_roof,
    birkhoff_roof_grad,
    branch_eval,
    gauss_moment_series,
    get_model,
    list_models,
    load_model_toml,
    verify_gibbs_markov,
    verify_skew_contraction,
)


def test_catalog():
    cat = list_models()
    assert len(cat) == 5
    by = {c["label"]: c for c in cat}
    assert by["D"]["countable"] and by["D"]["branches"] == "inf"
    assert by["E"]["dimension"] == 2 and by["E"]["branches"] == 9
    assert by["C"]["skew_gamma0"] == 0.25
    assert {c["id"] for c in cat} == {"doubling-quadratic", "doubling-constant", "solenoid-skew",
                                     "gauss", "planar-triple"}


def test_branch_eval_examples():
    A, D = get_model("A"), get_model("D")
    x, dx, ld = branch_eval(A, (0,), 0.5)
    assert (x, dx, ld) == (0.25, 0.5, math.log(0.5))
    x, dx, ld = branch_eval(D, (2,), 0.0)
    assert x == 0.5 and abs(dx) == 0.25 and ld == pytest.approx(math.log(0.25))
    # composition oracle: two sequential single-branch calls
    x1, d1, _ = branch_eval(A, (1,), 0.5)
    x2, d2, _ = branch_eval(A, (0,), x1)
    x, dx, _ = branch_eval(A, (0, 1), 0.5)
    assert x == x2 and dx == d1 * d2 == 0.25


def test_branch_eval_errors():
    A, D = get_model("A"), get_model("D")
    with pytest.raises(ValueError):
        branch_eval(A, (0,), 1.5)
    with pytest.raises(IndexError):
        branch_eval(A, (2,), 0.5)
    with pytest.raises(IndexError):
        branch_eval(D, (0,), 0.5)
    with pytest.raises(IndexError):
        branch_eval(D, (D.family.n_trunc + 1,), 0.5)


def test_gauss_truncation_certified():
    fam = GaussFamily()
    assert fam.tail_mass(fam.n_trunc) <= 1e-10


def test_birkhoff_examples():
    A, B = get_model("A"), get_model("B")
    assert birkhoff_roof(A, (0, 0), 0.0) == 4.0
    for w in [(0,), (1, 0, 1), (0, 0, 0, 1, 1)]:
        assert birkhoff_roof(B, w, 0.37) == 2.0 * len(w)
    x, _, _ = branch_eval(A, (0, 1), 0.3)
    fx, _ = A.forward(np.array([x]))
    forward = A.roof(x) + A.roof(fx[0])
    assert abs(birkhoff_roof(A, (0, 1), 0.3) - forward) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["A", "D", "E"]), st.lists(st.integers(0, 8), min_size=1, max_size=6),
       st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_branch_forward_consistency(mid, raw, y0, y1):
    m = get_model(mid)
    if mid == "A":
        w = tuple(k % 2 for k in raw)
    elif mid == "D":
        # forward Gauss iteration multiplies rounding by (n + y)^2 per step
        w = tuple(k % 6 + 1 for k in raw[:3])
    else:
        w = tuple(raw)
    y = np.array([y0]) if m.dim == 1 else np.array([[y0, y1]])
    x, _, _ = branch_eval(m, w, y)
    for k in w:
        x, idx = m.forward(x)
        assert idx[0] == k
    assert np.max(np.abs(x - y)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["A", "D"]), st.lists(st.integers(0, 5), min_size=1, max_size=4),
       st.lists(st.integers(0, 5), min_size=1, max_size=4), st.floats(0.05, 0.95))
def test_birkhoff_additivity(mid, a, b, y):
    m = get_model(mid)
    fix = (lambda k: k % 2) if mid == "A" else (lambda k: k + 1)
    w, v = tuple(map(fix, a)), tuple(map(fix, b))
    hv, _, _ = branch_eval(m, v, y)
    total = birkhoff_roof(m, w + v, y)
    assert total == pytest.approx(birkhoff_roof(m, w, float(hv)) + birkhoff_roof(m, v, y), abs=1e-12)


@pytest.mark.parametrize("mid", ["A", "D", "E"])
def test_derivatives_match_central_differences(mid):
    m = get_model(mid)
    rng = np.random.default_rng(3)
    h = 1e-6
    words = {"A": [(0,), (1,), (0, 1)], "D": [(1,), (3,), (2, 5)], "E": [(4,), (7,), (2, 8)]}[mid]
    for w in words:
        if m.dim == 1:
            y = rng.uniform(0.05, 0.95, 1000)
            x, dx, _ = branch_eval(m, w, y)
            fd = (branch_eval(m, w, y + h)[0] - branch_eval(m, w, y - h)[0]) / (2 * h)
            assert np.max(np.abs(fd - dx) / np.abs(dx)) < 1e-4
            g = birkhoff_roof_grad(m, w, y)
            fdr = (birkhoff_roof(m, w, y + h) - birkhoff_roof(m, w, y - h)) / (2 * h)
            assert np.max(np.abs(fdr - g) / np.maximum(np.abs(g), 1e-2)) < 1e-4
        else:
            y = rng.uniform(0.05, 0.95, (1000, 2))
            _, jac, _ = branch_eval(m, w, y)
            g = birkhoff_roof_grad(m, w, y)
            for ax in range(2):
                e = np.zeros(2)
                e[ax] = h
                fd = (branch_eval(m, w, y + e)[0] - branch_eval(m, w, y - e)[0]) / (2 * h)
                assert np.max(np.abs(fd - jac[:, :, ax])) < 1e-4 * np.max(np.abs(jac))
                fdr = (birkhoff_roof(m, w, y + e) - birkhoff_roof(m, w, y - e)) / (2 * h)
                assert np.max(np.abs(fdr - g[:, ax])) < 1e-4 * max(np.max(np.abs(g)), 1e-2)


def test_gibbs_markov_A():
    r = verify_gibbs_markov(get_model("A"), 4096)
    assert r.ok
    assert r.derivative_sup[1] == 0.5
    assert r.rho0 == pytest.approx(0.5, abs=1e-12)
    assert r.logdet_holder == 0.0


def test_gibbs_markov_D_moment_series():
    r = verify_gibbs_markov(get_model("D"), 4096, eps=0.5)
    assert r.ok and math.isfinite(r.moment_partial + r.moment_tail_bound)
    # oracle: direct partial sum plus integral tail bound for sum (n+1)^{1/2} n^-2
    n = np.arange(1, 10 ** 6 + 1, dtype=float)
    core = float(np.sum(((n + 1) ** 0.5 / n ** 2)[::-1]))
    assert r.moment_core == pytest.approx(core, rel=1e-12)
    partial, tail = gauss_moment_series(0.5, 10 ** 6)
    assert tail < 1e-2 and partial == pytest.approx(math.e * core, rel=1e-12)


def test_gibbs_markov_E_and_coarse_grid():
    r = verify_gibbs_markov(get_model("E"), 1024)
    assert r.ok and r.rho0 == pytest.approx(1 / 3, abs=1e-12)
    with pytest.raises(ValueError):
        verify_gibbs_markov(get_model("A"), 32)


@pytest.mark.parametrize("mid", ["A", "B", "C", "D", "E"])
def test_builtins_pass_gibbs_markov(mid):
    assert verify_gibbs_markov(get_model(mid), 256).ok


def test_skew_contraction():
    C = get_model("C")
    r = verify_skew_contraction(C, 1000, 20)
    assert r.gamma0 == pytest.approx(0.25, abs=1e-10) and r.C == pytest.approx(1.0, abs=1e-9)
    r = verify_skew_contraction(C, 1000, 20, skew=SkewFactor(contraction=0.5, shift=1.0))
    assert r.gamma0 == pytest.approx(0.5, abs=1e-10)
    r = verify_skew_contraction(C, 1, 1)
    assert r.ratios[0] <= 0.25 + 1e-15
    with pytest.raises(ValueError):
        verify_skew_contraction(get_model("A"), 10, 2)


def test_toml_custom_model(tmp_path):
    p = tmp_path / "m.toml"
    p.write_text("""
id = "tent-like"
dimension = 1
[[branches]]
kind = "affine"
matrix = [[0.5]]
offset = [0.0]
[[branches]]
kind = "affine"
matrix = [[-0.5]]
offset = [1.0]
[roof]
poly = [2.0, 0.5]
""")
    m = load_model_toml(p)
    assert m.family.n_branches == 2
    x, dx, _ = branch_eval(m, (1,), 0.2)
    assert x == pytest.approx(0.9) and dx == -0.5
    assert verify_gibbs_markov(m, 256).ok
    q = tmp_path / "mob.toml"
    q.write_text("""
dimension = 1
[[branches]]
kind = "mobius"
coeffs = [1.0, 0.0, 1.0, 1.0]
[[branches]]
kind = "mobius"
coeffs = [0.0, 1.0, -1.0, 2.0]
""")
    mm = load_model_toml(q)
    assert branch_eval(mm, (0,), 1.0)[0] == pytest.approx(0.5)
    assert verify_gibbs_markov(mm, 256).conditions["tiling"]
