"""The full identity suite: every exact relation checked on one chain over
grids of E and z, reduced to the worst residual per identity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import duality, qmat, resolvent, transfer
from .chain import BlockChain, make_anderson_strip, make_band_random
from .errors import BlockTMError
from .numkernel import corner_blocks_sweep
from .precise import DenseMatrix, precise_transfer

TOL = 1e-8

IDENTITIES = (
    "symplectic",
    "duality",
    "duality_inverse",
    "duality_symmetric",
    "modulus",
    "corner_columns",
    "corner_determinant",
    "transfer_from_resolvent",
    "transfer_resolvent",
    "twisted_columns",
    "lippmann_schwinger",
    "trace",
    "q_symplectic",
    "q_doubled_chain",
    "q_duality_K",
    "q_duality_K_prime",
    "q_modulus",
    "K_adjoint",
    "K_reflection",
    "K_pairing",
    "K_invertible",
    "K_prime_rotation",
)


@dataclass
class SuiteReport:
    residuals: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    tol: float = TOL

    def record(self, name: str, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            value = math.inf
        self.residuals[name] = max(self.residuals.get(name, 0.0), value)

    def merge(self, other: "SuiteReport") -> None:
        for k, v in other.residuals.items():
            self.record(k, v)
        self.errors.extend(other.errors)

    @property
    def failures(self) -> list:
        return sorted(k for k, v in self.residuals.items() if not v <= self.tol)

    @property
    def passed(self) -> bool:
        return not self.failures and not self.errors

    def to_dict(self) -> dict:
        return {"tol": self.tol, "passed": self.passed,
                "residuals": {k: self.residuals[k] for k in sorted(self.residuals)},
                "failures": self.failures, "errors": list(self.errors)}


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b, 2)
                 / max(np.linalg.norm(a, 2), np.linalg.norm(b, 2), 1e-300))


def _pair_distance(lhs, rhs):
    return lhs.distance(rhs)


def _relative_trace(tr) -> float:
    return tr.residual / max(abs(tr.lhs), 1.0)


def _attempt(report: SuiteReport, name: str, fn, *args):
    """Run a shared intermediate; log the failure and return None if it raises."""
    try:
        return fn(*args)
    except BlockTMError as exc:
        report.errors.append(f"{name}: {type(exc).__name__}: {exc}")
        return None


def _run(report: SuiteReport, name: str, fn, *args) -> None:
    value = _attempt(report, name, fn, *args)
    if value is not None:
        report.record(name, value)


def check_point(chain: BlockChain, E: complex, z: complex, tol: float = TOL,
                sabotage: bool = False, precise: bool = True) -> SuiteReport:
    """All identities at a single (E, z).

    With ``precise`` the quantities built from T alone (det(T - z),
    (T - z)^-1, eigenvalues of T and of T^dagger T) come from a 60-digit
    product; everything on the Hamiltonian side stays in double precision.
    ``sabotage`` perturbs the determinant duality so the harness can prove
    that it detects a broken identity.
    """
    E, z = complex(E), complex(z)
    rep = SuiteReport(tol=tol)
    T = transfer.plain_transfer(chain, E)
    To = precise_transfer(chain, E) if precise else DenseMatrix(T)
    Qo = To.gram()
    real_E = E.imag == 0

    def run(name, fn):
        _run(rep, name, fn)

    run("symplectic", lambda: transfer.symplectic_defect(chain, E, relative=True))
    run("duality", lambda: duality.duality_residual(chain, E, z, To).error
        + (1e-3 if sabotage else 0.0))
    run("duality_inverse", lambda: duality.inverse_duality_residual(chain, E, z, To).error)
    run("duality_symmetric", lambda: duality.symmetric_duality_residual(chain, E, z, To).error)

    cb = _attempt(rep, "corner_blocks", corner_blocks_sweep, chain, E)
    if cb is not None:
        run("corner_columns", lambda: transfer.corner_transfer_identities(chain, E, T, cb))
        run("corner_determinant", lambda: max(_pair_distance(
            *transfer.corner_determinant_identity(chain, E, cb))))
        run("transfer_from_resolvent",
            lambda: _rel(transfer.transfer_from_resolvent(cb).mat, T))

    ct = _attempt(rep, "twisted_corners", resolvent.twisted_corner_blocks, chain, E, z)
    if ct is not None:
        run("transfer_resolvent", lambda: _rel(
            resolvent.transfer_resolvent(chain, E, z, T=T, ct=ct), To.inv_shift(z)))
        run("twisted_columns", lambda: resolvent.twisted_transfer_identities(chain, E, z, T, ct))
        if cb is not None:
            run("lippmann_schwinger",
                lambda: resolvent.lippmann_schwinger_check(chain, E, z, cb, ct))
        run("trace", lambda: _relative_trace(resolvent.trace_identity_check(chain, E, z, To, ct)))

    Q = T.conj().T @ T
    run("q_symplectic", lambda: qmat.q_symplectic_defect(chain, E))
    run("q_doubled_chain", lambda: _rel(qmat.q_from_doubled_chain(chain, E), Q))
    qd = _attempt(rep, "q_duality", qmat.q_duality_residual, chain, E, z, Qo)
    if qd is not None:
        rep.record("q_duality_K", max(qd.err_K))
        rep.record("q_duality_K_prime", max(qd.err_K_prime))
    run("K_adjoint", lambda: qmat.k_adjoint_residual(chain, E, z))
    run("K_reflection", lambda: qmat.k_reflection_residual(chain, E, z))
    run("K_pairing", lambda: qmat.k_pairing_residual(chain, E, abs(z)))
    # qualitative: 0 when K(E, z) off the positive real axis is invertible
    run("K_invertible",
        lambda: 0.0 if qmat.k_smallest_singular(chain, E, -abs(z)) > 1e-12 else 1.0)
    run("K_prime_rotation", lambda: qmat.k_prime_conjugation_residual(chain, E, z))

    if real_E:
        phi = float(np.angle(z)) or 1.0
        run("modulus", lambda: duality.modulus_identity_residual(
            chain, E.real, phi, duality.spectral_report(chain, E.real, T=To)))
        run("q_modulus", lambda: qmat.q_modulus_identity_residual(chain, E.real, phi, Q=Qo))
    return rep


def run_suite(chain: BlockChain, energies: Iterable[complex], twists: Iterable[complex],
              tol: float = TOL, sabotage: bool = False, precise: bool = True) -> SuiteReport:
    total = SuiteReport(tol=tol)
    twists = list(twists)
    for E in energies:
        for z in twists:
            total.merge(check_point(chain, E, z, tol, sabotage, precise))
    return total


DEFAULT_ENERGIES = (0.37, -1.21, 0.4 + 0.3j)
DEFAULT_TWISTS = (np.exp(0.7j), 0.6 + 0.5j, -1.7)


def random_suite_cases(count: int = 50, seed: int = 2024):
    """Reproducible (chain, E, z) cases spanning N in [2, 16], M in [1, 4],
    Anderson and band-random chains, real and complex E, z on and off the
    unit circle."""
    rng = np.random.default_rng(seed)
    for i in range(count):
        N = int(rng.integers(2, 17))
        M = int(rng.integers(1, 5))
        if i % 2 == 0:
            chain = make_anderson_strip(M, N, W=float(rng.uniform(0.5, 4.0)), seed=seed + i)
        else:
            ens = "GOE" if i % 4 == 1 else "GUE"
            chain = make_band_random(M, N, ens, seed=seed + i)
        E = float(rng.uniform(-2.0, 2.0))
        if i % 3 == 0:
            E = complex(E, float(rng.uniform(-0.5, 0.5)))
        phi = float(rng.uniform(0.1, 2 * np.pi - 0.1))
        r = 1.0 if i % 2 == 0 else float(rng.uniform(0.5, 2.0))
        yield chain, E, r * np.exp(1j * phi)
