import numpy as np
import pytest

from blocktm.chain import free_chain, make_anderson_strip
from blocktm.suite import (DEFAULT_ENERGIES, DEFAULT_TWISTS, IDENTITIES, SuiteReport,
                           check_point, random_suite_cases, run_suite)


def test_cases_are_reproducible():
    a, b = list(random_suite_cases(6)), list(random_suite_cases(6))
    for (c1, E1, z1), (c2, E2, z2) in zip(a, b):
        assert E1 == E2 and z1 == z2
        for h1, h2 in zip(c1.H, c2.H):
            np.testing.assert_array_equal(h1, h2)


def test_cases_span_the_required_ranges():
    cases = list(random_suite_cases())
    assert len(cases) == 50
    Ns = {c.N for c, _, _ in cases}
    Ms = {c.M for c, _, _ in cases}
    assert min(Ns) >= 2 and max(Ns) <= 16 and len(Ns) > 8
    assert Ms == {1, 2, 3, 4}
    assert any(np.iscomplexobj(E) or isinstance(E, complex) for _, E, _ in cases)
    assert any(isinstance(E, float) for _, E, _ in cases)
    assert any(abs(abs(z) - 1) < 1e-15 for _, _, z in cases)
    assert any(abs(abs(z) - 1) > 0.05 for _, _, z in cases)


@pytest.mark.parametrize("i", [0, 1, 4, 9])
def test_check_point_passes(i):
    c, E, z = list(random_suite_cases(i + 1))[i]
    rep = check_point(c, E, z)
    assert rep.passed, rep.to_dict()
    expected = set(IDENTITIES) - ({"modulus", "q_modulus"} if isinstance(E, complex) else set())
    assert set(rep.residuals) == expected


def test_run_suite_default_grid():
    rep = run_suite(make_anderson_strip(2, 5, 1.5, seed=3), DEFAULT_ENERGIES, DEFAULT_TWISTS)
    assert rep.passed, rep.to_dict()


def test_sabotage_is_detected():
    rep = run_suite(free_chain(4), [0.3], [1.5], sabotage=True)
    assert not rep.passed
    assert rep.failures == ["duality"]


def test_errors_fail_the_report():
    rep = check_point(free_chain(3), 0.0, 1j)  # z = i is an eigenvalue of T(0)
    assert rep.errors
    assert not rep.passed


def test_report_record_keeps_worst():
    r = SuiteReport(tol=1e-8)
    r.record("x", 1e-12)
    r.record("x", 1e-10)
    r.record("x", 1e-11)
    assert r.residuals["x"] == 1e-10
    r.record("y", float("nan"))
    assert r.failures == ["y"]
    assert r.to_dict()["passed"] is False
