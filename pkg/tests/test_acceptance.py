"""Acceptance suite: the ten criteria at their full instance counts.

Each test prints one ``PASS``/``FAIL`` line. Run it alone with
``pytest -v -s tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""
from dataclasses import replace

import pytest

from fcsdpc.checks import CHECK_NAMES, run_suite
from fcsdpc.config import default_config


@pytest.fixture(scope="module")
def results():
    return {r.name: r for r in run_suite(default_config())}


@pytest.mark.parametrize("number, name", list(enumerate(CHECK_NAMES, start=1)))
def test_criterion(results, capsys, number, name):
    res = results[name]
    with capsys.disabled():
        print(f"\n[{number:2d}] {res.line()}")
    assert res.passed, res.detail


def test_corrupted_predictor_is_caught():
    def corrupt(pred):
        O = pred.O_dpc.copy()
        O[0, 0] += 1e-3
        return replace(pred, O_dpc=O)

    (res,) = run_suite(default_config(), corrupt=corrupt, only={"implicit_predictor"})
    assert not res.passed


def test_closed_loop_budget(results):
    assert results["closed_loop_equivalence"].seconds < 300.0
    assert results["oracle_optimality"].seconds < 60.0


if __name__ == "__main__":
    out = run_suite(default_config())
    for i, r in enumerate(out, start=1):
        print(f"[{i:2d}] {r.line()}")
    raise SystemExit(0 if all(r.passed for r in out) else 1)
