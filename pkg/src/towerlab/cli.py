"""Command-line front end: each subcommand writes CSV tables plus a JSON run manifest."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from towerlab.config import config_hash, load_toml, write_csv

SCHEMA = "v1"
EXIT_OK, EXIT_USAGE, EXIT_VERDICT = 0, 1, 2

COMMANDS = ("models", "induce", "ratios", "tails", "spectrum", "uni", "cancel", "cone", "correlate",
            "distortion", "consistency", "all")

# per-command defaults; config files and flags override these
DEFAULTS = {
    "common": {"seed": 0, "out": "towerlab-out", "threads": None},
    "models": {"res": 256},
    "induce": {"model": "planar-triple", "nmax": 12, "res": 10},
    "ratios": {"model": "planar-triple", "nmax": 12, "res": 10},
    "tails": {"model": "planar-triple", "nmax": 12, "res": 10},
    "spectrum": {"model": "doubling-quadratic", "res": None, "sigma": [-0.04, -0.02, 0.0, 0.02, 0.04],
                 "n_steps": 1},
    "uni": {"model": "doubling-quadratic", "n0": 1, "h1": None, "h2": None, "res": None},
    "cancel": {"model": "doubling-quadratic", "b": [40.0, 100.0, 400.0], "pairs": 100, "n0": None},
    "cone": {"model": "doubling-quadratic", "b": [40.0, 100.0, 400.0], "nmax": 30},
    "correlate": {"model": "doubling-quadratic", "samples": 10 ** 6, "tmax": 30.0, "dt": 0.25,
                  "observable": "height-phase", "k": 3},
    "distortion": {"model": "solenoid-skew", "pairs": 20, "tol": 1e-12},
    "consistency": {"models": ["doubling-quadratic", "doubling-constant", "doubling-coboundary"],
                    "pairs": 20, "degree": 16},
    "all": {"res": 10, "res_hi": 11, "nmax": 12, "samples": 10 ** 6},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _words(text):
    return tuple(int(c) for c in str(text).split(",") if c.strip())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config, or a run manifest (JSON) to replay")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--threads", type=int, help="cap on BLAS/OpenMP worker threads")
    common.add_argument("--model")
    common.add_argument("--res", type=int, help="grid resolution (log2 cells per axis for inducing runs)")
    common.add_argument("--nmax", type=int)
    p = _Parser(prog="towerlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "spectrum":
            sp.add_argument("--sigma", type=_floats)
        if name == "uni":
            sp.add_argument("--n0", type=int)
            sp.add_argument("--h1", type=_words)
            sp.add_argument("--h2", type=_words)
        if name in ("cancel", "cone"):
            sp.add_argument("--b", type=_floats)
        if name in ("cancel", "distortion", "consistency"):
            sp.add_argument("--pairs", type=int)
        if name == "correlate":
            sp.add_argument("--samples", type=int)
            sp.add_argument("--tmax", type=float)
            sp.add_argument("--dt", type=float)
            sp.add_argument("--observable")
            sp.add_argument("--k", type=int)
        if name == "consistency":
            sp.add_argument("--models", type=lambda s: [m for m in s.split(",") if m])
            sp.add_argument("--degree", type=int)
        if name == "all":
            sp.add_argument("--samples", type=int)
    return p


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[args.command])
    if args.config:
        path = Path(args.config)
        try:
            if path.suffix == ".json":
                data = json.loads(path.read_text())["config"]
            else:
                raw = load_toml(path)
                data = {k: v for k, v in raw.items() if not isinstance(v, dict)}
                data.update(raw.get(args.command, {}))
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(data) - set(cfg) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update({k: v for k, v in data.items() if k != "command"})
    for key, val in vars(args).items():
        if key in ("command", "config") or val is None:
            continue
        cfg[key] = list(val) if isinstance(val, tuple) else val
    return cfg


# ----------------------------------------------------------------------------
# subcommands: each returns (tables, verdicts, constants)
# ----------------------------------------------------------------------------

def _inducing(cfg):
    from towerlab.acceptance import inducing_tables, run_inducing

    if cfg["nmax"] < 1:
        raise UsageError("--nmax must be >= 1")
    res = run_inducing(cfg["model"], cfg["nmax"], cfg["res"])
    return res, inducing_tables(res)


def _constants(res) -> dict:
    from dataclasses import asdict

    return {k: v for k, v in asdict(res.constants).items() if isinstance(v, (int, float, str))}


def cmd_models(cfg):
    from towerlab.models import get_model, list_models, verify_gibbs_markov

    rows, ok = [], True
    for c in list_models():
        rep = verify_gibbs_markov(get_model(c["id"]), cfg["res"])
        ok &= rep.ok
        rows.append((c["label"], c["id"], c["dimension"], c["branches"], c["countable"], rep.C1, rep.rho0,
                     rep.ok))
    header = ["label", "id", "dimension", "branches", "countable", "C1", "rho0", "gibbs_markov_ok"]
    return {"models.csv": (header, rows)}, {"gibbs_markov_ok": bool(ok)}, {}


def cmd_induce(cfg):
    from towerlab.inducing import fit_result_tail

    res, tables = _inducing(cfg)
    comps = tables["components.csv"][1]
    fit = fit_result_tail(res)
    verdicts = {"markov_ok": all(r[4] and r[5] and r[6] for r in comps),
                "tail_exponential": bool(fit.gamma < 1 and fit.r2 >= 0.95),
                "collars_ok": all(c["ok"] for c in res.censuses)}
    return tables, verdicts, {**_constants(res), "gamma": fit.gamma, "r2": fit.r2}


def cmd_ratios(cfg):
    res, tables = _inducing(cfg)
    ok = all(r[4] for r in tables["ratios.csv"][1])
    return {"ratios.csv": tables["ratios.csv"]}, {"ratio_bounds_ok": ok}, _constants(res)


def cmd_tails(cfg):
    from towerlab.inducing import fit_result_tail

    res, tables = _inducing(cfg)
    fit = fit_result_tail(res)
    return ({"tails.csv": tables["tails.csv"]}, {"tail_exponential": bool(fit.gamma < 1 and fit.r2 >= 0.95)},
            {**_constants(res), "gamma": fit.gamma, "r2": fit.r2})


def _model(cfg):
    from towerlab.models import get_model

    try:
        return get_model(cfg["model"])
    except KeyError as exc:
        raise UsageError(str(exc)) from exc


def cmd_spectrum(cfg):
    from towerlab.acceptance import spectrum_rows

    rows = spectrum_rows(_model(cfg), cfg["sigma"])
    return {"spectrum.csv": (["sigma", "lambda_sigma", "residual"], rows)}, {}, {}


def cmd_uni(cfg):
    from towerlab.transfer import uni_estimate

    m = _model(cfg)
    n0 = cfg["n0"]
    K = m.family.n_branches or 2
    h1 = tuple(cfg["h1"]) if cfg["h1"] else (0,) * n0
    h2 = tuple(cfg["h2"]) if cfg["h2"] else (K - 1,) * n0
    r = uni_estimate(m, h1, h2, n0, res=cfg["res"])
    rows = [(m.model_id, n0, "".join(map(str, h1)), "".join(map(str, h2)), r.E, r.fd_rel_err)]
    # UNI failure is reported, not treated as an error
    return ({"uni.csv": (["model", "n0", "h1", "h2", "E", "fd_rel_err"], rows)},
            {"fd_cross_check_ok": bool(r.fd_rel_err <= 1e-4 or r.E == 0)}, {"E": r.E})


def cmd_cancel(cfg):
    import numpy as np

    from towerlab.transfer import cancellation_check, cancellation_setup, random_cone_pair

    setup = cancellation_setup(_model(cfg), cfg["n0"])
    rows, ok = [], True
    for b in cfg["b"]:
        rng = np.random.default_rng([cfg["seed"], 7, int(b)])
        for i in range(cfg["pairs"]):
            r = cancellation_check(setup, 1j * b, random_cone_pair(setup.grid, b, setup.C4, rng))
            rows.append((b, i, r.max_excess, r.chi_min, r.chi_max, r.balls, r.typed))
            ok &= r.ok
    header = ["b", "trial", "max_excess", "chi_min", "chi_max", "balls", "typed"]
    return {"cancellation.csv": (header, rows)}, {"domination_ok": bool(ok)}, \
        {"n0": setup.n0, "E": setup.E, "C4": setup.C4, "delta_c": setup.delta_c}


def cmd_cone(cfg):
    from towerlab.transfer import cancellation_setup, cone_iterate

    m = _model(cfg)
    setup = cancellation_setup(m)
    rows, ok, betas = [], True, {}
    for b in cfg["b"]:
        run = cone_iterate(m, 1j * b, 1.0, cfg["nmax"], setup)
        betas[str(b)] = run.beta_hat
        for st in run.steps:
            rows.append((b, st.m, st.l2_u, st.l2_v, st.cone_ok))
            ok &= st.cone_ok
    return ({"cone.csv": (["b", "m", "l2_u", "l2_v", "cone_ok"], rows)},
            {"cone_ok": bool(ok), "beta_le_0.98": all(v <= 0.98 for v in betas.values())}, {"beta_hat": betas})


def cmd_correlate(cfg):
    import numpy as np

    from towerlab.semiflow import correlation_series, decay_fit, observable, suspend

    system = suspend(_model(cfg))
    name, k = cfg["observable"], cfg["k"]
    try:
        if name == "height-phase":
            v, w = observable(name, k=k, sign=-1), observable(name, k=k)
        else:
            v = w = observable(name, k=k)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    t = np.round(np.arange(0.0, cfg["tmax"] + 1e-9, cfg["dt"]), 10)
    cs = correlation_series(system, v, w, t, cfg["samples"], cfg["seed"])
    fit = decay_fit(cs)
    rows = [(r["t"], r["rho"], r["stderr"]) for r in cs.rows()]
    return ({"correlation.csv": (["t", "rho", "stderr"], rows)}, {},
            {"rbar": system.rbar, "verdict": fit.verdict, "c": fit.c, "r2": fit.r2, "points_used": fit.n_used})


def cmd_distortion(cfg):
    from towerlab.semiflow import distortion_pairs, temporal_distortion

    m = _model(cfg)
    rows, stable = [], True
    for i, (a, b) in enumerate(distortion_pairs(m, cfg["pairs"], cfg["seed"])):
        r = temporal_distortion(m, a, b, cfg["tol"])
        r2 = temporal_distortion(m, a, b, depth=2 * r.depth)
        stable &= abs(r.D - r2.D) <= r.err_bound + 1e-15
        rows.append((i, r.D, r.depth, r.err_bound))
    return ({"distortion.csv": (["pair_id", "D", "depth", "err_bound"], rows)},
            {"depth_doubling_ok": bool(stable)}, {})


def cmd_consistency(cfg):
    from towerlab.semiflow import uni_cohomology_consistency

    try:
        table = uni_cohomology_consistency(cfg["models"], cfg["pairs"], cfg["degree"], cfg["seed"])
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    rows = [(r["model"], r["basis_degree"], r["residual"], r["E"]) for r in table]
    return ({"cohomology.csv": (["model", "basis_degree", "residual", "E"], rows)},
            {"consistent": all(r["consistent"] for r in table)},
            {"max_D": {r["model"]: r["max_D"] for r in table}})


def cmd_all(cfg):
    from towerlab.acceptance import run_suite

    crits = run_suite(cfg["seed"], cfg["res"], cfg["res_hi"], cfg["nmax"], cfg["samples"],
                      log=lambda line: print(line, flush=True))
    tables = {}
    for c in crits:
        tables.update(c.tables)
    rows = [(c.number, c.name, c.passed) for c in crits]
    tables["criteria.csv"] = (["criterion", "name", "passed"], rows)
    verdicts = {f"criterion_{c.number}": c.passed for c in crits}
    details = {f"criterion_{c.number}": {k: v for k, v in c.details.items()} for c in crits}
    timings = {f"criterion_{c.number}": round(c.seconds, 3) for c in crits}
    return tables, verdicts, {"criteria": details, "criterion_seconds": timings,
                              "criterion_12": "checked by comparing the CSVs of two runs"}


def run_hash(command: str, cfg: dict) -> str:
    """Hash of everything that determines the CSV contents (output location and thread cap excluded)."""
    return config_hash({"command": command, **{k: v for k, v in cfg.items() if k not in ("out", "threads")}})


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _jsonable(x):
    import numpy as np

    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"towerlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg["out"])
    t0 = time.perf_counter()
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg["threads"]):
            tables, verdicts, constants = HANDLERS[args.command](cfg)
    except (UsageError, ValueError) as exc:
        print(f"towerlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for name, (header, rows) in tables.items():
        write_csv(out / name, header, rows)
        outputs[name] = {"sha256": hashlib.sha256((out / name).read_bytes()).hexdigest(), "rows": len(rows)}
    code = EXIT_OK if all(verdicts.values()) else EXIT_VERDICT
    from towerlab import __version__

    manifest = {"schema": SCHEMA, "command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
                "config": cfg, "config_hash": run_hash(args.command, cfg),
                "version": __version__, "outputs": outputs, "constants": _jsonable(constants),
                "verdicts": _jsonable(verdicts), "exit_code": code,
                "seconds": round(time.perf_counter() - t0, 3)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for k, v in verdicts.items():
        print(f"{k}: {'ok' if v else 'FAILED'}")
    print(f"wrote {', '.join(sorted(outputs))} and manifest.json to {out}")
    return code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
