"""Duality between det(T(E) - z) and det(E - H(z)), band structure of
H(e^{i phi}), the spectral partition of T(E) and the Thouless-type sum rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import BlockChain, assemble_blocks, assemble_twisted
from .errors import AmbiguousPairing, ZeroTwist
from .numkernel import (LogDet, QuadratureResult, general_eigen, logdet, logdet_batch,
                        periodic_quadrature)
from .precise import DenseMatrix, PreciseMatrix, oracle, transfer_oracle
from .transfer import plain_transfer

EDGE_WINDOW = 1e-3
EDGE_TOL = 1e-4
PAIR_FLOOR = 1e-6
_CHUNK_BYTES = 1 << 26


@dataclass(frozen=True)
class DualityResult:
    lhs: LogDet
    rhs: LogDet
    mag_err: float
    phase_err: float

    @classmethod
    def compare(cls, lhs: LogDet, rhs: LogDet) -> "DualityResult":
        mag, ph = lhs.distance(rhs)
        return cls(lhs, rhs, mag, ph)

    @property
    def error(self) -> float:
        return max(self.mag_err, self.phase_err)


def _z(z) -> complex:
    z = complex(z)
    if z == 0:
        raise ZeroTwist("twist parameter z must be non-zero")
    return z


def _ld_E_minus_Hz(chain: BlockChain, E: complex, z: complex) -> LogDet:
    return logdet(E * np.eye(chain.size) - assemble_twisted(chain, z).entries)


def _sum_logdet(blocks) -> LogDet:
    total = LogDet(0.0, 0.0)
    for b in blocks:
        total = total + logdet(b)
    return total


def _transfer_oracle(chain, E, T):
    return transfer_oracle(chain, E) if T is None else oracle(T)


def duality_residual(chain: BlockChain, E: complex, z: complex, T=None) -> DualityResult:
    """log det(T(E) - z) against M log(-z) - sum log det L_k + log det(E - H(z)).

    ``T`` may be an array or an oracle from :mod:`blocktm.precise`.
    """
    E, z = complex(E), _z(z)
    lhs = _transfer_oracle(chain, E, T).logdet_shift(z)
    rhs = (chain.M * LogDet.of_scalar(-z) - _sum_logdet(chain.L)
           + _ld_E_minus_Hz(chain, E, z))
    return DualityResult.compare(lhs, rhs)


def inverse_duality_residual(chain: BlockChain, E: complex, z: complex, T=None) -> DualityResult:
    """log det(T(E)^-1 - z) against the same form built on H(1/z) and L^dagger."""
    E, z = complex(E), _z(z)
    lhs = _transfer_oracle(chain, E, T).inverse().logdet_shift(z)
    rhs = (chain.M * LogDet.of_scalar(-z) - _sum_logdet(np.conj(chain.L).transpose(0, 2, 1))
           + _ld_E_minus_Hz(chain, E, 1 / z))
    return DualityResult.compare(lhs, rhs)


def symmetric_duality_residual(chain: BlockChain, E: complex, z: complex, T=None) -> DualityResult:
    """log det(T + T^-1 - (z + 1/z)) against
    -2 sum log|det L_k| + log det(E - H(z)) + log det(E - H(1/z))."""
    E, z = complex(E), _z(z)
    lhs = _transfer_oracle(chain, E, T).logdet_symmetric(z)
    rhs = (LogDet(-2 * chain.log_abs_det_couplings(), 0.0)
           + _ld_E_minus_Hz(chain, E, z) + _ld_E_minus_Hz(chain, E, 1 / z))
    return DualityResult.compare(lhs, rhs)


# --- band structure -------------------------------------------------------

def corner_family(base: np.ndarray, M: int, phis: np.ndarray) -> np.ndarray:
    """Stack of ``base`` with e^{-i phi} I added to the top-right M x M corner
    and e^{i phi} I to the bottom-left one, for every phi."""
    out = np.broadcast_to(base, (len(phis),) + base.shape).astype(complex)
    z = np.exp(1j * np.asarray(phis))
    eye = np.eye(M)
    out[:, :M, -M:] += (1 / z)[:, None, None] * eye
    out[:, -M:, :M] += z[:, None, None] * eye
    return out


def twisted_family(chain: BlockChain, phis: np.ndarray) -> np.ndarray:
    """Stack of H(e^{i phi}) for every phi, shape (len(phis), NM, NM)."""
    return corner_family(assemble_blocks(chain.H, chain.L), chain.M, phis)


def _chunks(n_items: int, item_bytes: int):
    step = max(1, _CHUNK_BYTES // max(item_bytes, 1))
    for start in range(0, n_items, step):
        yield slice(start, min(start + step, n_items))


@dataclass(frozen=True, eq=False)
class BandStructure:
    """Levels E_k(phi) of H(e^{i phi}) on a uniform grid including 0 and pi.

    ``bands[k] = (min, max)`` over the grid and the two special points;
    ``extremum_violation`` measures how far the grid extrema escape the
    range spanned at phi = 0 and phi = pi (0 when the extrema sit there).
    """

    phi_grid: np.ndarray
    levels: np.ndarray
    bands: np.ndarray
    levels_0: np.ndarray
    levels_pi: np.ndarray
    extremum_violation: float
    max_jump: float

    def count_containing(self, E: float) -> int:
        return int(np.count_nonzero((self.bands[:, 0] <= E) & (E <= self.bands[:, 1])))

    def crossings(self, E: float) -> int:
        """Number of grid intervals, summed over levels, on which E_k(phi) - E
        changes sign; equal to the number of twists phi with E in the spectrum
        of H(e^{i phi}) once the grid resolves every crossing."""
        d = np.sign(self.levels - E)
        return int(np.count_nonzero(d != np.roll(d, -1, axis=0)))

    def distance_to_edges(self, E: float) -> float:
        return float(np.min(np.abs(self.bands - E)))


def special_levels(chain: BlockChain) -> tuple[np.ndarray, np.ndarray]:
    """Levels of the periodic (phi = 0) and antiperiodic (phi = pi) Hamiltonians."""
    fam = twisted_family(chain, np.array([0.0, np.pi]))
    lv = np.linalg.eigvalsh(fam)
    return lv[0], lv[1]


def band_structure(chain: BlockChain, phi_nodes: int = 64) -> BandStructure:
    if phi_nodes < 8:
        raise ValueError("band_structure needs at least 8 phi nodes")
    phis = 2 * np.pi * np.arange(phi_nodes) / phi_nodes
    levels = np.empty((phi_nodes, chain.size))
    item = chain.size ** 2 * 16
    for sl in _chunks(phi_nodes, item):
        levels[sl] = np.linalg.eigvalsh(twisted_family(chain, phis[sl]))
    lv0, lvpi = special_levels(chain)
    lo = np.minimum(levels.min(axis=0), np.minimum(lv0, lvpi))
    hi = np.maximum(levels.max(axis=0), np.maximum(lv0, lvpi))
    ends_lo = np.minimum(lv0, lvpi)
    ends_hi = np.maximum(lv0, lvpi)
    violation = float(max(np.max(ends_lo - lo), np.max(hi - ends_hi), 0.0))
    closed = np.vstack([levels, levels[:1]])
    jump = float(np.max(np.abs(np.diff(closed, axis=0)))) if phi_nodes > 1 else 0.0
    return BandStructure(phi_grid=phis, levels=levels, bands=np.column_stack([lo, hi]),
                         levels_0=lv0, levels_pi=lvpi, extremum_violation=violation,
                         max_jump=jump)


# --- spectral partition of T(E) -------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralReport:
    """Eigenvalues of T(E) at real E split into unit-circle and (t, 1/t*) pairs.

    ``lambdas``/``thetas`` describe the off-circle pairs (largest first),
    ``unit_phases`` the 2 nu eigenvalues on the unit circle.
    """

    E: float
    eigenvalues: np.ndarray
    pairs: list
    nu: int
    lambdas: np.ndarray
    thetas: np.ndarray
    unit_phases: np.ndarray
    pair_residual: float
    pair_tol: float
    eps_circle: float = field(default=0.0)


def default_eps_circle(chain: BlockChain) -> float:
    return 1e-8 * 2 * chain.M * chain.N


def spectral_report(chain: BlockChain, E: float, eps_circle: Optional[float] = None,
                    T=None, precision: str = "auto") -> SpectralReport:
    """Partition the eigenvalues of T(E) at real E.

    Without an explicit ``T`` the product is formed at a precision matched
    to ||T||^2, see :func:`blocktm.precise.transfer_oracle`.
    """
    E = float(np.real(E))
    if eps_circle is None:
        eps_circle = default_eps_circle(chain)
    O = transfer_oracle(chain, E, precision) if T is None else oracle(T)
    w = O.eigvals()
    mod = np.abs(w)
    on = np.abs(mod - 1) <= eps_circle
    outside = np.flatnonzero(~on & (mod > 1))
    inside = np.flatnonzero(~on & (mod < 1))
    diag = {"eigenvalues": w, "eps_circle": eps_circle}
    if on.sum() % 2 or len(outside) != len(inside):
        raise AmbiguousPairing(
            f"cannot pair eigenvalues of T({E}): {on.sum()} on circle, "
            f"{len(outside)} outside, {len(inside)} inside", diag)

    # rounding in the small eigenvalues grows with the condition number of T,
    # which at real E is exactly ||T||^2 because T^-1 = sigma_2^-1 T^dagger sigma_2
    cond = np.linalg.norm(O.dense(), 2) ** 2
    unit_round = 10.0 ** -O.dps if isinstance(O, PreciseMatrix) else np.finfo(float).eps
    pair_tol = max(PAIR_FLOOR, 100 * unit_round * cond)

    outside = outside[np.argsort(-mod[outside], kind="stable")]
    free = list(inside)
    pairs, worst = [], 0.0
    for i in outside:
        t = w[i]
        errs = [abs(t * np.conj(w[j]) - 1) for j in free]
        k = int(np.argmin(errs))
        worst = max(worst, errs[k])
        pairs.append((complex(t), complex(w[free.pop(k)])))
    if worst > pair_tol:
        diag["pair_residual"] = worst
        raise AmbiguousPairing(
            f"pairing residual {worst:.2e} exceeds tolerance {pair_tol:.2e}", diag)

    lambdas = np.array([math.log(abs(t)) for t, _ in pairs])
    thetas = np.array([math.atan2(t.imag, t.real) for t, _ in pairs])
    unit = np.sort(np.angle(w[on]))
    return SpectralReport(E=E, eigenvalues=w, pairs=pairs, nu=int(on.sum() // 2),
                          lambdas=lambdas, thetas=thetas, unit_phases=unit,
                          pair_residual=worst, pair_tol=pair_tol, eps_circle=eps_circle)


def modulus_identity_residual(chain: BlockChain, E: float, phi: float,
                              report: Optional[SpectralReport] = None) -> float:
    """|log lhs - log rhs| for the modulus of the duality written through the
    eigenvalue partition of T(E) at z = e^{i phi}."""
    if report is None:
        report = spectral_report(chain, E)
    with np.errstate(divide="ignore"):  # z on a unit eigenvalue gives -inf on both sides
        lhs = float(np.sum(np.log(2 * np.cosh(report.lambdas) - 2 * np.cos(report.thetas - phi))))
        lhs += float(np.sum(np.log(2 * np.abs(np.sin(0.5 * (report.unit_phases - phi))))))
    rhs = (-chain.log_abs_det_couplings()
           + _ld_E_minus_Hz(chain, report.E, np.exp(1j * phi)).log_mag)
    return abs(lhs - rhs)


# --- Thouless-type sum rule -----------------------------------------------

def log_abs_det_family(chain: BlockChain, E: float):
    """phi -> log|det(E - H(e^{i phi}))|, vectorized and thread-safe."""
    E = float(E)
    item = chain.size ** 2 * 16

    def f(phis: np.ndarray) -> np.ndarray:
        out = np.empty(len(phis))
        eye = np.eye(chain.size)
        for sl in _chunks(len(phis), item):
            out[sl] = logdet_batch(E * eye - twisted_family(chain, phis[sl]))[0]
        return out

    return f


def near_band_edge(chain: BlockChain, E: float, window: float = EDGE_WINDOW) -> bool:
    lv0, lvpi = special_levels(chain)
    return bool(np.min(np.abs(np.concatenate([lv0, lvpi]) - E)) < window)


@dataclass(frozen=True)
class ThoulessResult:
    lhs: float
    rhs: float
    residual: float
    converged: bool
    nodes: int
    near_edge: bool
    quadrature: Optional[QuadratureResult] = None


def thouless_quadrature(f, near_edge: bool, quad_tol: float, nodes: int,
                        max_nodes: int) -> QuadratureResult:
    """Quadrature policy shared by both sum rules: near a band edge the
    integrand has a log singularity, so start 4x finer and accept 1e-4."""
    if near_edge:
        nodes, quad_tol = 4 * nodes, max(quad_tol, EDGE_TOL)
    return periodic_quadrature(f, nodes=nodes, tol=quad_tol, max_nodes=max_nodes)


def thouless_sum(chain: BlockChain, E: float, quad_tol: float = 1e-10, nodes: int = 64,
                 max_nodes: int = 2 ** 16, eps_circle: Optional[float] = None) -> ThoulessResult:
    """Sum of the positive exponents of T(E) against the phi-average of
    log|det(E - H(e^{i phi}))|."""
    E = float(E)
    report = spectral_report(chain, E, eps_circle)
    lhs = float(np.sum(report.lambdas))
    edge = near_band_edge(chain, E)
    q = thouless_quadrature(log_abs_det_family(chain, E), edge, quad_tol, nodes, max_nodes)
    rhs = -chain.log_abs_det_couplings() + q.value
    return ThoulessResult(lhs=lhs, rhs=rhs, residual=abs(lhs - rhs), converged=q.converged,
                          nodes=q.nodes, near_edge=edge, quadrature=q)
