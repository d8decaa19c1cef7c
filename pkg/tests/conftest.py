import logging
import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

logging.getLogger("bstepdca").setLevel(logging.WARNING)

BENCH_N = 480


@pytest.fixture(scope="session")
def benchmark_runs():
    """The five train variants at the benchmark grid, run once per session."""
    from bstepdca.driver import run
    from bstepdca.train import VARIANTS, build_train

    out = {}
    for v in VARIANTS:
        spec, base, pcfg, scfg, init = build_train(v, BENCH_N)
        out[v] = (spec, base, pcfg, scfg, run(spec, base, pcfg, scfg, init))
    return out


ACCEPTANCE_LINES = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
