"""Criteria 1-12, run through two complete `towerlab all` invocations with the same config and seed."""

from __future__ import annotations

import json

import pytest

from conftest import ACCEPTANCE_LINES
from towerlab.cli import run

NAMES = {1: "Markov property", 2: "Exponential tails", 3: "Proof inequalities", 4: "Collar discipline",
         5: "Operator sanity", 6: "UNI", 7: "Cancellation", 8: "L2 contraction", 9: "Norm decay",
         10: "Correlation dichotomy", 11: "Temporal distortion / cohomology", 12: "Determinism"}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = []
    for tag in ("first", "second"):
        d = tmp_path_factory.mktemp(tag)
        code = run(["all", "--seed", "0", "--out", str(d)])
        out.append((code, d, json.loads((d / "manifest.json").read_text())))
    return out


def _report(number, passed, details):
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {NAMES[number]}: {details}"
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.mark.parametrize("number", range(1, 12))
def test_criterion(runs, number):
    _, _, manifest = runs[0]
    passed = manifest["verdicts"][f"criterion_{number}"]
    details = manifest["constants"]["criteria"][f"criterion_{number}"]
    _report(number, passed, details)
    assert passed, details


def test_criterion_12_determinism(runs):
    (c1, d1, m1), (c2, d2, m2) = runs
    names = sorted(p.name for p in d1.glob("*.csv"))
    assert names == sorted(p.name for p in d2.glob("*.csv")) and len(names) >= 10
    differing = [n for n in names if (d1 / n).read_bytes() != (d2 / n).read_bytes()]
    _report(12, not differing, {"csv_files": len(names), "differing": differing})
    assert not differing
    assert m1["config_hash"] == m2["config_hash"]


def test_all_exit_code_matches_verdicts(runs):
    for code, _, manifest in runs:
        assert code == (0 if all(manifest["verdicts"].values()) else 2)
