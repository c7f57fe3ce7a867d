import json
import time
from pathlib import Path

import numpy as np
import pytest

from causalsep.process_space import switch_process, w_ocb
from causalsep.switch_tasks import chiribella_witness_mc, optimize_finite_weights, with_causal_bound
from causalsep.witness_engine import generalized_robustness, random_robustness

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def oracle():
    return json.loads((FIXTURES / "robustness_oracle.json").read_text())


@pytest.fixture(scope="session")
def ocb_rr():
    return random_robustness(w_ocb())


@pytest.fixture(scope="session")
def w_switch():
    return switch_process(reduce_target=True)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def switch_rg_timed(w_switch):
    return timed(generalized_robustness, w_switch)


@pytest.fixture(scope="session")
def switch_rg(switch_rg_timed):
    return switch_rg_timed[0]


@pytest.fixture(scope="session")
def mc_game():
    return with_causal_bound(chiribella_witness_mc(10_000, seed=42))


@pytest.fixture(scope="session")
def finite_opt():
    """(weights, p_sep, solution)"""
    return optimize_finite_weights(return_solution=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def report(name, ok, detail=""):
    """One PASS/FAIL line per acceptance check, visible with -s or in captured output."""
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
    return ok
