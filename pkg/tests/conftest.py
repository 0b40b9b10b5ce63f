import numpy as np
import pytest

from blocktm.chain import free_chain, make_anderson_strip, make_band_random


def chebyshev_u(n: int, x: complex) -> complex:
    """U_n(x) by the three-term recurrence (U_{-1} = 0, U_0 = 1)."""
    if n < 0:
        return 0.0
    a, b = 0.0, 1.0
    for _ in range(n):
        a, b = b, 2 * x * b - a
    return b


def free_transfer_closed_form(N: int, E: complex) -> np.ndarray:
    """T(E) of the free M=1 chain: S^N with S = [[E, -1], [1, 0]]."""
    x = E / 2
    return np.array([[chebyshev_u(N, x), -chebyshev_u(N - 1, x)],
                     [chebyshev_u(N - 1, x), -chebyshev_u(N - 2, x)]], dtype=complex)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[(1, 5, "anderson"), (2, 6, "anderson"), (2, 5, "GOE"),
                        (3, 4, "GUE")], ids=lambda p: f"M{p[0]}N{p[1]}{p[2]}")
def small_chain(request):
    M, N, kind = request.param
    if kind == "anderson":
        return make_anderson_strip(M, N, W=1.5, seed=7)
    return make_band_random(M, N, kind, seed=11)


@pytest.fixture
def free3():
    return free_chain(3, 1)


# --- acceptance summary ------------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` records the verdict line of acceptance
    criterion n, prints it and returns ``passed``."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        request.config.stash[_ACCEPTANCE][number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
