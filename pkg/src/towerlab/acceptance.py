"""The twelve acceptance criteria as functions returning verdicts plus the CSV tables they produce."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from towerlab.models import PolyTrigRoof, get_model


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    details: dict
    seconds: float = 0.0
    tables: dict = field(default_factory=dict)  # csv name -> (header, rows)

    def line(self) -> str:
        return f"criterion {self.number:2d} [{'PASS' if self.passed else 'FAIL'}] {self.name}: " + \
            ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        out = fn(*a, **kw)
        out.seconds = time.perf_counter() - t0
        return out
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ----------------------------------------------------------------------------
# inducing (criteria 1-4)
# ----------------------------------------------------------------------------

def inducing_tables(result) -> dict:
    from towerlab.inducing import markov_check, ratio_report

    tails = [(r["n"], r["leb_R_gt_n"], r["leb_A_n"], r["leb_B_n"], r["cells_R_gt_n"], r["cells_R_eq_n"])
             for r in result.tail_table()]
    ratios = [(r["n"], r["ratio_a"], r["ratio_b"], r["ratio_c"], r["bound_ok"]) for r in ratio_report(result)]
    comps = [(m["id"], m["birth_n"], m["cells"], m["onto_fraction"], m["onto"], m["into"], m["injective"])
             for m in markov_check(result)]
    return {
        "tails.csv": (["n", "leb_R_gt_n", "leb_A_n", "leb_B_n", "cells_R_gt_n", "cells_R_eq_n"], tails),
        "ratios.csv": (["n", "ratio_a", "ratio_b", "ratio_c", "bound_ok"], ratios),
        "components.csv": (["id", "birth_n", "cells", "onto_fraction", "onto", "into", "injective"], comps),
    }


def run_inducing(model: str = "planar-triple", n_max: int = 12, q: int = 10):
    from towerlab.inducing import ambient_for, build_inducing, derive_constants

    amb = ambient_for(model)
    return build_inducing(amb, derive_constants(amb), n_max, q=q)


def criteria_inducing(q: int = 10, q_hi: int = 11, n_max: int = 12) -> list[Criterion]:
    from towerlab.inducing import fit_result_tail, markov_check, ratio_report

    t0 = time.perf_counter()
    res = run_inducing(n_max=n_max, q=q)
    mc = markov_check(res)
    t_build = time.perf_counter() - t0
    ok1 = bool(mc) and all(m["onto"] and m["into"] and m["injective"] for m in mc)
    c1 = Criterion(1, "Markov property", ok1 and t_build < 120,
                   {"components": len(mc), "failing": sum(not (m["onto"] and m["into"] and m["injective"])
                                                          for m in mc),
                    "resolution": 2 ** q, "n_max": n_max}, t_build, inducing_tables(res))

    t0 = time.perf_counter()
    fit = fit_result_tail(res)
    leb = [r["leb_R_gt_n"] for r in res.tail_table()]
    mono = all(a >= b for a, b in zip(leb, leb[1:]))
    fit_hi = fit_result_tail(run_inducing(n_max=n_max, q=q_hi))
    ok2 = fit.gamma < 1 and fit.r2 >= 0.95 and mono and abs(fit.gamma - fit_hi.gamma) <= 0.05
    c2 = Criterion(2, "Exponential tails", ok2,
                   {"gamma": fit.gamma, "r2": fit.r2, "nonincreasing": mono, "gamma_hi": fit_hi.gamma,
                    "resolution_hi": 2 ** q_hi}, time.perf_counter() - t0)

    rows = ratio_report(res)
    a0 = res.constants.a0
    worst_b = max((r["ratio_b"] for r in rows if r["ratio_b"] is not None), default=0.0)
    worst_c = max((r["ratio_c"] for r in rows if r["ratio_c"] is not None), default=0.0)
    facts2 = all(rec["B"] <= a0 * rec["A"] for rec in res.records)
    c3 = Criterion(3, "Proof inequalities", worst_b <= 0.27 and worst_c <= 0.27 and facts2,
                   {"max_ratio_b": worst_b, "max_ratio_c": worst_c, "a0": a0, "B_le_a0_A": facts2})

    viol = sum(c["disjointness_violations"] for c in res.censuses)
    t_bad = sum(rec["eps2a_violations"] for rec in res.records)
    c4 = Criterion(4, "Collar discipline", viol == 0 and t_bad == 0,
                   {"disjointness_violations": viol, "A_eps_cells_with_t_gt_1": t_bad})
    return [c1, c2, c3, c4]


# ----------------------------------------------------------------------------
# transfer operators (criteria 5-9)
# ----------------------------------------------------------------------------

def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


def _quadrature(dim):
    if dim == 1:
        return _gl(200)
    x, wx = _gl(60)
    return np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2), np.outer(wx, wx).ravel()


def _random_smooth(rng, dim):
    ks = rng.integers(0, 6, size=(3, dim))
    c = rng.normal(size=3)
    ph = rng.uniform(0, 2 * np.pi, 3)

    def v(y):
        y2 = np.asarray(y, float).reshape(-1, dim)
        return sum(c[j] * np.cos(2 * np.pi * (y2 @ ks[j]) + ph[j]) for j in range(3)) + np.exp(y2[:, 0])
    return v


def spectrum_rows(model, sigmas) -> list:
    from towerlab.transfer import leading_eigendata

    rows = []
    for s in sigmas:
        ed = leading_eigendata(model, float(s), eps=max(0.05, 1.5 * abs(s)))
        rows.append((float(s), float(np.real(ed.lam)), ed.residual))
    return rows


@_timed
def criterion_5(seed: int = 0, n_functions: int = 100) -> Criterion:
    from towerlab.transfer import leading_eigendata, twisted_values

    rng = np.random.default_rng([seed, 5])
    worst = {}
    for mid in ("A", "D", "E"):
        m = get_model(mid)
        pts, w = _quadrature(m.dim)
        err = 0.0
        for _ in range(n_functions):
            v = _random_smooth(rng, m.dim)
            pv, bound = twisted_values(m, 0, v, pts)
            err = max(err, float(abs(np.sum(w * pv) - np.sum(w * v(pts)))) + bound)
        worst[mid] = err
    eig = {}
    for mid in ("A", "E"):
        ed = leading_eigendata(get_model(mid), 0.0)
        eig[mid] = (abs(complex(ed.lam) - 1), float(np.max(np.abs(ed.f.values - 1))))
    ed_d = leading_eigendata(get_model("D"), 0.0)
    ok = (max(worst.values()) <= 1e-8 and all(a <= 1e-6 and b <= 1e-6 for a, b in eig.values())
          and ed_d.tail_bound < 1e-10)
    tables = {"spectrum.csv": (["sigma", "lambda_sigma", "residual"],
                               spectrum_rows(get_model("A"), [-0.04, -0.02, 0.0, 0.02, 0.04]))}
    return Criterion(5, "Operator sanity", ok,
                     {"mass_err_A": worst["A"], "mass_err_D": worst["D"], "mass_err_E": worst["E"],
                      "lambda_err_A": eig["A"][0], "f0_err_A": eig["A"][1], "lambda_err_E": eig["E"][0],
                      "f0_err_E": eig["E"][1], "D_tail": ed_d.tail_bound}, tables=tables)


@_timed
def criterion_6() -> Criterion:
    from towerlab.transfer import uni_estimate

    a = uni_estimate(get_model("A"), (0,), (1,), 1)
    b = uni_estimate(get_model("B"), (0,), (1,), 1)
    ok = abs(a.E - 0.5) <= 1e-9 and b.E == 0 and a.fd_rel_err <= 1e-4
    return Criterion(6, "UNI", ok, {"E_A": a.E, "E_B": b.E, "fd_rel_err_A": a.fd_rel_err})


@_timed
def criterion_7(seed: int = 0, pairs: int = 100, bs=(40, 100, 400)) -> Criterion:
    from towerlab.transfer import cancellation_check, cancellation_setup, random_cone_pair

    setup = cancellation_setup(get_model("A"))
    rows, worst, chi_lo, chi_hi, ok = [], -np.inf, 1.0, 0.0, True
    for b in bs:
        rng = np.random.default_rng([seed, 7, b])
        for i in range(pairs):
            r = cancellation_check(setup, 1j * b, random_cone_pair(setup.grid, b, setup.C4, rng))
            rows.append((b, i, r.max_excess, r.chi_min, r.chi_max, r.balls, r.typed))
            worst = max(worst, r.max_excess)
            chi_lo, chi_hi = min(chi_lo, r.chi_min), max(chi_hi, r.chi_max)
            ok &= r.ok
    return Criterion(7, "Cancellation", bool(ok), {"pairs": len(rows), "max_excess": worst,
                                                    "chi_min": chi_lo, "chi_max": chi_hi},
                     tables={"cancellation.csv": (["b", "trial", "max_excess", "chi_min", "chi_max",
                                                   "balls", "typed"], rows)})


@_timed
def criterion_8(bs=(40, 100, 400), m_max: int = 30) -> Criterion:
    from towerlab.transfer import cancellation_setup, cone_iterate

    A = get_model("A")
    setup = cancellation_setup(A)
    rows, betas, cone_ok = [], {}, True
    for b in bs:
        run = cone_iterate(A, 1j * b, 1.0, m_max, setup)
        betas[b] = run.beta_hat
        for st in run.steps:
            rows.append((b, st.m, st.l2_u, st.l2_v, st.cone_ok))
            cone_ok &= st.cone_ok
    ok = cone_ok and max(betas.values()) <= 0.98
    return Criterion(8, "L2 contraction", bool(ok),
                     {**{f"beta_hat_b{b}": v for b, v in betas.items()}, "cone_ok": bool(cone_ok)},
                     tables={"cone.csv": (["b", "m", "l2_u", "l2_v", "cone_ok"], rows)})


def calibrate_norm_decay(table: dict, b: float, step: float = 0.05, threshold: float = 0.9):
    """Smallest A on a grid with estimate(ceil(A log b)) < threshold, and n1 = ceil(A log b)."""
    lb = math.log(b)
    A = step
    while math.ceil(A * lb) <= max(table):
        n1 = math.ceil(A * lb)
        if n1 >= 1 and table[n1] < threshold:
            return round(A, 10), n1
        A += step
    return None, None


@_timed
def criterion_9(b: float = 100.0, n_max: int = 40, seed: int = 0) -> Criterion:
    from towerlab.transfer import norm_contraction_probe

    probe = norm_contraction_probe(get_model("A"), 1j * b, n_max, seed=seed)
    A, n1 = calibrate_norm_decay(probe.table, b)
    ok, worst_gap = False, None
    if n1 is not None and 3 * n1 <= n_max:
        gaps = [probe.table[n] - probe.table[n + 1] for n in range(n1, 3 * n1)]
        worst_gap = min(gaps)
        ok = worst_gap > 1e-3
    rows = [(b, n, v) for n, v in sorted(probe.table.items())]
    return Criterion(9, "Norm decay", ok, {"A": A, "n1": n1, "n_end": None if n1 is None else 3 * n1,
                                           "min_decrease": worst_gap},
                     tables={"contraction.csv": (["b", "n", "norm_estimate"], rows)})


# ----------------------------------------------------------------------------
# semiflow (criteria 10-11)
# ----------------------------------------------------------------------------

T_GRID = np.round(np.arange(0.0, 30.0 + 1e-9, 0.25), 10)


@_timed
def criterion_10(seed: int = 0, n_samples: int = 10 ** 6) -> Criterion:
    from towerlab.semiflow import correlation_series, decay_fit, observable, suspend

    t0 = time.perf_counter()
    sa = suspend(get_model("A"))
    cs_a = correlation_series(sa, observable("height-phase", k=3, sign=-1), observable("height-phase", k=3),
                              T_GRID, n_samples, seed)
    fa = decay_fit(cs_a)
    t_a = time.perf_counter() - t0
    sb = suspend(get_model("B"))
    cs_b = correlation_series(sb, observable("height-cos"), observable("height-cos"), T_GRID, n_samples, seed)
    fb = decay_fit(cs_b)
    amp = float(np.max(np.abs(cs_b.rho[T_GRID > 10])) / abs(cs_b.rho[0]))
    ok = (fa.verdict == "exponential" and fa.c > 0 and fa.r2 >= 0.9 and t_a < 300
          and fb.verdict == "no-decay-detected" and amp > 0.1)
    rows = [("A", r["t"], r["rho"], r["stderr"]) for r in cs_a.rows()] + \
        [("B", r["t"], r["rho"], r["stderr"]) for r in cs_b.rows()]
    return Criterion(10, "Correlation dichotomy", ok,
                     {"A_verdict": fa.verdict, "A_c": fa.c, "A_r2": fa.r2, "A_seconds": round(t_a, 1),
                      "B_verdict": fb.verdict, "B_late_amplitude_ratio": amp},
                     tables={"correlation.csv": (["model", "t", "rho", "stderr"], rows)})


@_timed
def criterion_11(seed: int = 0, n_pairs: int = 20) -> Criterion:
    from towerlab.semiflow import distortion_pairs, temporal_distortion, uni_cohomology_consistency

    rows, ok = [], True
    cases = {
        "constant": get_model("C").with_roof(PolyTrigRoof(poly=(2.0,)), "solenoid-constant"),
        "coboundary": get_model("doubling-coboundary"),
        "quadratic": get_model("C"),
    }
    maxima = {}
    pid = 0
    for name, m in cases.items():
        mx = 0.0
        for a, b in distortion_pairs(m, n_pairs, seed):
            r = temporal_distortion(m, a, b)
            r2 = temporal_distortion(m, a, b, depth=2 * r.depth)
            agree = abs(r.D - r2.D) <= r.err_bound + 1e-15
            rows.append((pid, name, r.D, r.depth, r.err_bound))
            pid += 1
            mx = max(mx, abs(r.D))
            if name != "quadratic":
                ok &= agree
        maxima[name] = mx
    table = uni_cohomology_consistency(["A", "B", "doubling-coboundary"], n_pairs=n_pairs, seed=seed)
    consistent = all(r["consistent"] for r in table)
    ok = bool(ok and maxima["constant"] < 1e-8 and maxima["coboundary"] < 1e-8 and maxima["quadratic"] > 1e-3
              and consistent)
    coh = [(r["model"], r["basis_degree"], r["residual"], r["E"]) for r in table]
    return Criterion(11, "Temporal distortion / cohomology", ok,
                     {"maxD_constant": maxima["constant"], "maxD_coboundary": maxima["coboundary"],
                      "maxD_quadratic": maxima["quadratic"], "consistent": consistent},
                     tables={"distortion.csv": (["pair_id", "case", "D", "depth", "err_bound"], rows),
                             "cohomology.csv": (["model", "basis_degree", "residual", "E"], coh)})


def run_suite(seed: int = 0, q: int = 10, q_hi: int = 11, n_max: int = 12, n_samples: int = 10 ** 6,
              log=None) -> list[Criterion]:
    """Criteria 1-11 (criterion 12 compares two complete runs and lives with the CLI)."""
    out = []
    steps = [lambda: criteria_inducing(q, q_hi, n_max), lambda: [criterion_5(seed)], lambda: [criterion_6()],
             lambda: [criterion_7(seed)], lambda: [criterion_8()], lambda: [criterion_9(seed=seed)],
             lambda: [criterion_10(seed, n_samples)], lambda: [criterion_11(seed)]]
    for step in steps:
        for c in step():
            out.append(c)
            if log is not None:
                log(c.line())
    return out
