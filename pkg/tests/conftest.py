import datetime as dt

import numpy as np
import pytest

from gatedpricer.baselines.levy import LevyModelParams
from gatedpricer.gated_net import MultiModelParams, SingleModelParams
from gatedpricer.market_data import CallRecord

KOU = dict(sigma=0.1, lam=1.0, p_up=0.4, eta1=10.0, eta2=5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def kou_params():
    return LevyModelParams("kou", S=100.0, r=0.02, **KOU)


@pytest.fixture
def vg_params():
    return LevyModelParams("vg", sigma=0.2, nu=0.3, theta=-0.15, S=100.0, r=0.01)


@pytest.fixture
def bs_params():
    return LevyModelParams("bs", sigma=0.2, S=100.0, r=0.0)


@pytest.fixture
def single_params(rng):
    return SingleModelParams.initialize(5, rng)


@pytest.fixture
def multi_params(rng):
    return MultiModelParams.initialize(3, 4, 2, rng)


def make_records(prices, date=dt.date(2020, 1, 2), tau_days=30, S=100.0, r=0.0):
    """Call records ``[(K, c), ...]`` sharing one date, maturity and spot."""
    return [CallRecord(date, tau_days, float(K), S, float(c), r) for K, c in prices]


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request, capsys):
    """Record and print one ``criterion N: PASS|FAIL`` line."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash.setdefault(ACCEPTANCE, {})[number] = line
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
