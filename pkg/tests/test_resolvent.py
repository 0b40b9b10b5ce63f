import numpy as np
import pytest

from blocktm.chain import assemble_twisted, free_chain, make_anderson_strip
from blocktm.errors import TransferEigenvalueHit, ZeroTwist
from blocktm.resolvent import (lippmann_schwinger_check, logdet_z_derivative,
                               trace_identity_check, transfer_resolvent,
                               twisted_corner_blocks, twisted_transfer_identities)
from blocktm.transfer import plain_transfer

TWISTS = [np.exp(0.8j), 0.6 - 0.4j, -1.5]


@pytest.mark.parametrize("z", TWISTS)
def test_twisted_corners_against_dense_inverse(small_chain, z):
    c, M, E = small_chain, small_chain.M, 0.23 + 0.05j
    G = np.linalg.inv(assemble_twisted(c, z).entries - E * np.eye(c.size))
    for method in ("dense", "sweep"):
        ct = twisted_corner_blocks(c, E, z, method=method)
        np.testing.assert_allclose(ct.G11, G[:M, :M], atol=1e-11)
        np.testing.assert_allclose(ct.G1N, G[:M, -M:], atol=1e-11)
        np.testing.assert_allclose(ct.GN1, G[-M:, :M], atol=1e-11)
        np.testing.assert_allclose(ct.GNN, G[-M:, -M:], atol=1e-11)


def test_unknown_method():
    with pytest.raises(ValueError):
        twisted_corner_blocks(free_chain(3), 0.3, 1.0, method="magic")


def test_sweep_method_survives_open_eigenvalue():
    # E = 0 is an eigenvalue of the open free N=3 chain but not of H(z = 2)
    ct = twisted_corner_blocks(free_chain(3), 0.0, 2.0, method="sweep")
    G = np.linalg.inv(assemble_twisted(free_chain(3), 2.0).entries)
    np.testing.assert_allclose(ct.G1N, G[:1, -1:], atol=1e-14)


def test_twisted_eigenvector_is_transfer_eigenvector(small_chain):
    c, M = small_chain, small_chain.M
    z = 1.3 * np.exp(0.4j)
    w, V = np.linalg.eig(assemble_twisted(c, z).entries)
    for k in range(0, len(w), max(1, len(w) // 4)):
        E, psi = w[k], V[:, k]
        v = np.concatenate([psi[:M], psi[-M:] / z])
        T = plain_transfer(c, E)
        np.testing.assert_allclose(T @ v, z * v, atol=1e-9 * np.linalg.norm(T, 2))


@pytest.mark.parametrize("z", TWISTS)
def test_transfer_resolvent_matches_inverse(small_chain, z):
    E = -0.4 + 0.1j
    R = transfer_resolvent(small_chain, E, z)
    T = plain_transfer(small_chain, E)
    ref = np.linalg.inv(T - z * np.eye(2 * small_chain.M))
    assert np.linalg.norm(R - ref) / np.linalg.norm(ref) < 1e-10


def test_transfer_resolvent_at_transfer_eigenvalue():
    # T(0) of the free N=3 chain has eigenvalues +-i
    with pytest.raises(TransferEigenvalueHit):
        transfer_resolvent(free_chain(3), 0.0, 1j)


def test_zero_twist():
    with pytest.raises(ZeroTwist):
        transfer_resolvent(free_chain(3), 0.5, 0)


@pytest.mark.parametrize("z", [0.5, 2.0 + 1.0j, np.exp(0.3j)])
def test_trace_sign_audit_free_chain(z):
    t = trace_identity_check(free_chain(3), 0.0, z)
    closed = -2 * z / (z ** 2 + 1)
    assert t.lhs == pytest.approx(closed, abs=1e-13)
    assert t.rhs == pytest.approx(closed, abs=1e-13)
    # the opposite sign on the derivative term gives -2 / (z (z^2 + 1))
    assert t.rhs_plus == pytest.approx(-2 / (z * (z ** 2 + 1)), abs=1e-13)
    assert t.residual_plus > 1e-2


def test_trace_identity_random(small_chain):
    t = trace_identity_check(small_chain, 0.7 - 0.2j, 0.8 + 0.9j)
    assert t.residual < 1e-10 * max(1, abs(t.lhs))


def test_log_det_derivative_matches_corner_traces(small_chain):
    E, z = 0.33, 1.2 - 0.3j
    ct = twisted_corner_blocks(small_chain, E, z)
    analytic = np.trace(ct.G1N) - np.trace(ct.GN1) / z ** 2
    assert logdet_z_derivative(small_chain, E, z) == pytest.approx(analytic, rel=1e-7)


@pytest.mark.parametrize("z", TWISTS)
def test_lippmann_schwinger(small_chain, z):
    assert lippmann_schwinger_check(small_chain, 0.41 + 0.02j, z) < 1e-11


@pytest.mark.parametrize("z", TWISTS)
def test_twisted_column_identities(small_chain, z):
    assert twisted_transfer_identities(small_chain, -0.8, z) < 1e-12


def test_resolvent_identities_on_wide_strip():
    c = make_anderson_strip(4, 6, W=3.0, seed=2)
    assert lippmann_schwinger_check(c, 0.1, 0.9j) < 1e-11
    assert twisted_transfer_identities(c, 0.1, 0.9j) < 1e-12
