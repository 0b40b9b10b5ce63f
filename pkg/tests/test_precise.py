import math

import numpy as np
import pytest

from blocktm.chain import free_chain, make_anderson_strip, make_band_random
from blocktm.precise import (DenseMatrix, PreciseMatrix, digits_for, oracle, precise_transfer,
                             transfer_oracle)
from blocktm.transfer import plain_transfer, transfer_product_stabilized
from conftest import free_transfer_closed_form


@pytest.mark.parametrize("N,E", [(3, 0.0), (7, 3.0), (10, 0.4 + 0.2j)])
def test_precise_free_chain_closed_form(N, E):
    np.testing.assert_allclose(precise_transfer(free_chain(N), E).dense(),
                               free_transfer_closed_form(N, E), rtol=1e-15, atol=1e-15)


@pytest.fixture
def pair():
    c = make_band_random(2, 4, "GUE", seed=21)
    E = 0.3 - 0.1j
    return DenseMatrix(plain_transfer(c, E)), precise_transfer(c, E)


def test_oracles_agree_when_well_conditioned(pair):
    d, p = pair
    z = 0.7 + 0.4j
    np.testing.assert_allclose(p.dense(), d.dense(), rtol=1e-12)
    for name in ("logdet_shift", "logdet_symmetric"):
        a, b = getattr(d, name)(z), getattr(p, name)(z)
        assert max(a.distance(b)) < 1e-11
    np.testing.assert_allclose(p.inv_shift(z), d.inv_shift(z), rtol=1e-11)
    np.testing.assert_allclose(p.inverse().dense(), d.inverse().dense(), rtol=1e-11)
    np.testing.assert_allclose(np.sort_complex(p.eigvals()), np.sort_complex(d.eigvals()),
                               rtol=1e-11)
    np.testing.assert_allclose(p.gram().eigvalsh(), d.gram().eigvalsh(), rtol=1e-11)


def test_precise_small_singular_value():
    # sigma_min = 1 / sigma_max exactly for a symplectic T at real E
    c = make_anderson_strip(2, 40, 1.0, seed=3)
    q = precise_transfer(c, 0.1, dps=digits_for(12, 4)).gram().eigvalsh()
    np.testing.assert_allclose(q * q[::-1], 1.0, rtol=1e-12)


def test_digits_grow_with_norm():
    assert digits_for(0.0) == 60
    assert digits_for(40.0, 2) == 110
    assert digits_for(40.0, 4) == 190


def test_transfer_oracle_choice():
    short = free_chain(5)
    assert isinstance(transfer_oracle(short, 0.5), DenseMatrix)
    assert isinstance(transfer_oracle(short, 0.5, "extended"), PreciseMatrix)
    long_ = make_anderson_strip(1, 100, 5.0, seed=1)
    o = transfer_oracle(long_, 0.5)
    assert isinstance(o, PreciseMatrix)
    st = transfer_product_stabilized(long_, 0.5)
    log10_norm = (st.scale + math.log(np.linalg.norm(st.mat, 2))) / math.log(10)
    assert o.dps == digits_for(log10_norm)
    assert isinstance(transfer_oracle(long_, 0.5, "double"), DenseMatrix)
    with pytest.raises(ValueError):
        transfer_oracle(short, 0.5, "single")


def test_oracle_passthrough(pair):
    d, p = pair
    assert oracle(d) is d and oracle(p) is p
    assert isinstance(oracle(np.eye(2)), DenseMatrix)


def test_singular_shift_gives_minus_infinity():
    p = precise_transfer(free_chain(3), 0.0)  # eigenvalues +-i
    assert p.logdet_shift(1j).log_mag == -math.inf


def test_concurrent_precisions_do_not_interfere():
    from concurrent.futures import ThreadPoolExecutor
    c = make_anderson_strip(2, 30, 3.0, seed=8)
    jobs = [(E, dps) for E in (0.1, 0.7, -1.2) for dps in (40, 90, 150)] * 3

    def one(job):
        E, dps = job
        return precise_transfer(c, E, dps).gram().eigvalsh()

    serial = [one(j) for j in jobs]
    with ThreadPoolExecutor(6) as pool:
        threaded = list(pool.map(one, jobs))
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a, b)
