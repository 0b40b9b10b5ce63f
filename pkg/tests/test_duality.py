import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blocktm.chain import free_chain, make_anderson_strip, make_band_random
from blocktm.duality import (band_structure, duality_residual, inverse_duality_residual,
                             modulus_identity_residual, near_band_edge, spectral_report,
                             symmetric_duality_residual, thouless_sum, twisted_family)
from blocktm.errors import AmbiguousPairing, ZeroTwist
from blocktm.numkernel import general_eigen, wrap_phase
from blocktm.suite import random_suite_cases
from blocktm.transfer import plain_transfer

ACOSH_3_2 = math.acosh(1.5)
SUITE = list(random_suite_cases())


def _value(ld):
    return complex(np.exp(ld.log_mag) * np.exp(1j * ld.phase))


# --- determinant dualities -------------------------------------------------

@pytest.mark.parametrize("z", [0.5, -2.0 + 0.3j, np.exp(1.1j)])
def test_duality_free_two_site(z):
    d = duality_residual(free_chain(2), 0.0, z)
    assert _value(d.lhs) == pytest.approx((1 + z) ** 2, rel=1e-13)
    assert _value(d.rhs) == pytest.approx((1 + z) ** 2, rel=1e-13)
    assert d.error < 1e-12


@pytest.mark.parametrize("z", [0.5, -2.0 + 0.3j, np.exp(1.1j)])
def test_duality_free_three_site(z):
    d = duality_residual(free_chain(3), 0.0, z)
    assert _value(d.lhs) == pytest.approx(z ** 2 + 1, rel=1e-13)
    assert d.error < 1e-12
    inv = inverse_duality_residual(free_chain(3), 0.0, z)
    assert _value(inv.lhs) == pytest.approx(z ** 2 + 1, rel=1e-13)
    assert inv.error < 1e-12


def test_symmetric_duality_free_three_site():
    d = symmetric_duality_residual(free_chain(3), 0.0, 2.0)
    assert _value(d.lhs) == pytest.approx(6.25, rel=1e-13)
    assert _value(d.rhs) == pytest.approx(6.25, rel=1e-13)


def test_zero_twist_rejected():
    with pytest.raises(ZeroTwist):
        duality_residual(free_chain(3), 0.1, 0.0)


_E = st.complex_numbers(max_magnitude=2.5, allow_nan=False, allow_infinity=False)
_Z = st.builds(lambda r, p: r * np.exp(1j * p), st.floats(0.3, 3.0), st.floats(0, 2 * np.pi))


@settings(max_examples=50, deadline=None)
@given(E=_E, z=_Z)
def test_dualities_random_chain(E, z):
    c = make_band_random(2, 6, "GUE", seed=5)
    for fn in (duality_residual, inverse_duality_residual, symmetric_duality_residual):
        r = fn(c, E, z)
        assert r.mag_err <= 1e-8 and r.phase_err <= 1e-8


@settings(max_examples=25, deadline=None)
@given(E=_E, z=_Z)
def test_dualities_compose(E, z):
    # det(T - z) det(T^-1 - z) = z^{2M} det(T + T^-1 - z - 1/z)
    c = make_anderson_strip(2, 5, 1.3, seed=9)
    a = duality_residual(c, E, z).lhs
    b = inverse_duality_residual(c, E, z).lhs
    s = symmetric_duality_residual(c, E, z).lhs
    lhs = a + b
    rhs_mag = s.log_mag + 2 * c.M * math.log(abs(z))
    rhs_ph = s.phase + 2 * c.M * np.angle(z)
    assert lhs.log_mag == pytest.approx(rhs_mag, abs=1e-9)
    assert abs(wrap_phase(lhs.phase - rhs_ph)) < 1e-9


@pytest.mark.parametrize("phi", [0.3, 2.0, 4.4])
def test_symmetric_duality_real_on_unit_circle(phi):
    c = make_band_random(3, 5, "GOE", seed=2)
    d = symmetric_duality_residual(c, 0.4, np.exp(1j * phi))
    for ld in (d.lhs, d.rhs):
        assert min(abs(wrap_phase(ld.phase)), abs(wrap_phase(ld.phase - np.pi))) < 1e-8


# --- band structure ----------------------------------------------------------

def test_bands_free_three_site_circulant():
    b = band_structure(free_chain(3), 48)
    ref = np.sort(2 * np.cos((b.phi_grid[:, None] + 2 * np.pi * np.arange(3)) / 3), axis=1)
    np.testing.assert_allclose(b.levels, ref, atol=1e-13)
    assert b.bands[0, 0] == pytest.approx(-2.0, abs=1e-12)
    assert b.bands[-1, 1] == pytest.approx(2.0, abs=1e-12)
    # consecutive bands touch, so together they fill [-2, 2]
    np.testing.assert_allclose(b.bands[1:, 0], b.bands[:-1, 1], atol=1e-12)
    assert b.extremum_violation < 1e-12


def test_bands_two_site():
    b = band_structure(free_chain(2), 32)
    r = np.abs(1 + np.exp(-1j * b.phi_grid))
    np.testing.assert_allclose(b.levels, np.column_stack([-r, r]), atol=1e-13)


def test_bands_collapse_in_decoupled_limit():
    c = make_anderson_strip(1, 4, 100.0, seed=7)  # site gaps above 10
    eps = np.array([h[0, 0].real for h in c.H])
    # second-order shift from the two neighbours on the ring
    second = np.array([sum(1 / (eps[k] - eps[j]) for j in ((k - 1) % 4, (k + 1) % 4))
                       for k in range(4)])
    order = np.argsort(eps)
    b = band_structure(c, 32)
    centre = b.bands.mean(axis=1)
    np.testing.assert_allclose(centre, (eps + second)[order], atol=2e-3)
    assert np.all(np.ptp(b.bands, axis=1) < 0.05)


def test_band_structure_needs_eight_nodes():
    with pytest.raises(ValueError):
        band_structure(free_chain(3), 4)


def test_twisted_family_hermitian_on_circle(small_chain):
    fam = twisted_family(small_chain, np.linspace(0, 2 * np.pi, 9))
    np.testing.assert_allclose(fam, np.conj(np.swapaxes(fam, 1, 2)), atol=0)


def test_band_tracks_continuous(small_chain):
    coarse = band_structure(small_chain, 64)
    fine = band_structure(small_chain, 256)
    assert fine.max_jump < coarse.max_jump + 1e-12
    assert fine.max_jump < 0.2


# --- spectral partition -------------------------------------------------------

def test_spectral_report_free_three_site_in_band():
    r = spectral_report(free_chain(3), 0.0)
    np.testing.assert_allclose(np.sort(r.eigenvalues.imag), [-1, 1], atol=1e-14)
    np.testing.assert_allclose(r.eigenvalues.real, 0, atol=1e-14)
    assert r.nu == 1 and len(r.lambdas) == 0


@pytest.mark.parametrize("N", [4, 9])
def test_spectral_report_free_outside_band(N):
    r = spectral_report(free_chain(N), 3.0)
    assert r.nu == 0
    assert r.lambdas == pytest.approx([N * ACOSH_3_2], rel=1e-12)


def test_ambiguous_pairing():
    # |t| - 1 = 5.85 but |1/t| - 1 = -0.85: only the inner one counts as on-circle
    with pytest.raises(AmbiguousPairing) as info:
        spectral_report(free_chain(2), 3.0, eps_circle=0.9)
    assert "eigenvalues" in info.value.diagnostics


@pytest.mark.parametrize("i", [27, 29])
def test_extended_precision_partition(i):
    # ||T|| ~ 1e16 here: double precision cannot resolve the small eigenvalues
    c = SUITE[i][0]
    with pytest.raises(AmbiguousPairing):
        spectral_report(c, 0.0, precision="double")
    r = spectral_report(c, 0.0)
    assert r.pair_residual < 1e-12 and r.nu == 0
    assert r.lambdas == pytest.approx(spectral_report(c, 0.0, precision="extended").lambdas)


def test_unknown_precision():
    with pytest.raises(ValueError):
        spectral_report(free_chain(3), 0.5, precision="quad")


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-3, 3), seed=st.integers(0, 50))
def test_no_unit_eigenvalues_off_real_axis(x, seed):
    c = make_anderson_strip(2, 6, 2.0, seed=seed)
    w = general_eigen(plain_transfer(c, x + 0.1j))
    assert np.min(np.abs(np.abs(w) - 1)) > 1e-6


@pytest.mark.parametrize("E", [0.3 + 0.2j, -1.1 - 0.05j])
def test_inverse_conjugate_partner_at_conjugate_energy(small_chain, E):
    w = general_eigen(plain_transfer(small_chain, E))
    w_bar = general_eigen(plain_transfer(small_chain, np.conj(E)))
    for t in w:
        assert np.min(np.abs(w_bar - 1 / np.conj(t))) < 1e-8 * max(1.0, abs(1 / t))


@pytest.mark.parametrize("phi", [0.4, 1.9, 3.7])
@pytest.mark.parametrize("E", [-0.8, 0.15, 2.7])
def test_modulus_identity(small_chain, E, phi):
    assert modulus_identity_residual(small_chain, E, phi) < 1e-7


# --- nu against the band structure ---------------------------------------------

def _sample_energies(bs, seed):
    lo, hi = bs.bands.min(), bs.bands.max()
    return np.random.default_rng(seed).uniform(lo - 0.5, hi + 0.5, 20)


@pytest.mark.parametrize("i", [i for i, (c, _, _) in enumerate(SUITE) if c.M == 1][:6])
def test_nu_counts_bands_single_channel(i):
    c = SUITE[i][0]
    bs = band_structure(c, 512)
    assert bs.extremum_violation < 1e-9
    for E in _sample_energies(bs, i):
        assert spectral_report(c, E).nu == bs.count_containing(E)


@pytest.mark.parametrize("i", [0, 6, 8, 17, 36])
def test_nu_counts_crossings(i):
    # every twist phi with E in spec H(e^{i phi}) is one unit-circle eigenvalue
    c = SUITE[i][0]
    bs = band_structure(c, 512)
    for E in _sample_energies(bs, i):
        assert 2 * spectral_report(c, E).nu == bs.crossings(E)


def test_nu_exceeds_band_count_for_non_monotone_band():
    c = make_anderson_strip(2, 16, 1.0, seed=1)
    bs = band_structure(c, 1024)
    r = spectral_report(c, 0.0)
    assert bs.extremum_violation > 0.05
    assert r.nu == 2 and bs.crossings(0.0) == 4
    assert bs.count_containing(0.0) == 1
    np.testing.assert_allclose(np.abs(r.unit_phases), [2.847, 1.454, 1.454, 2.847], atol=1e-3)


# --- Thouless-type sum rule ----------------------------------------------------

def test_thouless_free_three_site_band_centre():
    t = thouless_sum(free_chain(3), 0.0)
    assert t.lhs == 0.0
    assert abs(t.rhs) < 1e-4


@pytest.mark.parametrize("N", [8, 32])
def test_thouless_free_outside_band(N):
    t = thouless_sum(free_chain(N), 3.0)
    assert t.lhs == pytest.approx(N * ACOSH_3_2, rel=1e-12)
    assert t.rhs == pytest.approx(N * ACOSH_3_2, rel=1e-9)
    assert t.converged and not t.near_edge


def test_thouless_anderson_strip():
    c = make_anderson_strip(2, 16, 1.0, seed=0)
    t = thouless_sum(c, 0.0)
    assert t.converged
    assert t.residual < 1e-6


@pytest.mark.parametrize("i", [3, 10, 21])
def test_thouless_suite_chains(i):
    c = SUITE[i][0]
    for E in (-2.7, 0.9):
        t = thouless_sum(c, E)
        if t.converged and not t.near_edge:
            assert t.residual < 1e-6 * max(1.0, t.lhs)


def test_band_edge_detection():
    assert near_band_edge(free_chain(4), 2.0 - 1e-4)
    assert not near_band_edge(free_chain(4), 0.3)
