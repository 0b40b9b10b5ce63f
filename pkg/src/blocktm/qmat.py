"""Q(E) = T(E)^dagger T(E) as the transfer matrix of a doubled chain.

The doubled chain has 2N slices: H_1 - E, ..., H_N - E followed by
E* - H_N, ..., E* - H_1, coupled by L_1, ..., L_{N-1}, then -I, then
-L_{N-1}^dagger, ..., -L_1^dagger.  Its transfer matrix at energy 0 is Q(E).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import BlockChain, add_corners, assemble_blocks, assemble_open
from .duality import (_chunks, corner_family, default_eps_circle, thouless_quadrature)
from .errors import PositivityViolation, ZeroTwist
from .numkernel import LogDet, logdet, logdet_batch, wrap_phase
from .precise import DenseMatrix, oracle, transfer_oracle
from .transfer import QR_STRIDE, QRLedger, factors, ordered_product, plain_transfer, sigma2

POSITIVITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DoubledHamiltonian:
    entries: np.ndarray
    kind: str  # "K", "K_twisted" or "K_prime"
    E: complex
    z: Optional[complex] = None


def _z(z) -> complex:
    z = complex(z)
    if z == 0:
        raise ZeroTwist("twist parameter z must be non-zero")
    return z


def doubled_blocks(chain: BlockChain, E: complex):
    """Diagonal and superdiagonal blocks of K(E)."""
    E = complex(E)
    N, M = chain.N, chain.M
    eye = np.eye(M)
    diag = [chain.H[k] - E * eye for k in range(N)]
    diag += [E.conjugate() * eye - chain.H[N - 1 - j] for j in range(N)]
    upper = list(chain.L) + [-eye]
    upper += [-np.conj(chain.L[N - 2 - j]).T for j in range(N - 1)]
    return diag, upper


def build_K(chain: BlockChain, E: complex) -> DoubledHamiltonian:
    diag, upper = doubled_blocks(chain, E)
    return DoubledHamiltonian(assemble_blocks(diag, upper), "K", complex(E))


def build_K_twisted(chain: BlockChain, E: complex, z: complex) -> DoubledHamiltonian:
    z = _z(z)
    K = add_corners(build_K(chain, E).entries, chain.M, z)
    return DoubledHamiltonian(K, "K_twisted", complex(E), z)


def reversal_matrix(N: int, M: int) -> np.ndarray:
    """Block anti-diagonal identity P with P_{i, N-i+1} = I."""
    return np.kron(np.fliplr(np.eye(N)), np.eye(M))


def k_prime_unitaries(N: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Left and right unitaries that rotate K(E, z) into the K' form."""
    P = reversal_matrix(N, M)
    eye = np.eye(N * M)
    left = np.block([[eye, P], [-1j * eye, 1j * P]]) / math.sqrt(2)
    right = np.block([[-eye, 1j * eye], [P, 1j * P]]) / math.sqrt(2)
    return left, right


def build_K_prime(chain: BlockChain, E: complex, z: complex) -> DoubledHamiltonian:
    """[[H - Re E + U, -iV - Im E], [iV - Im E, -H + Re E + U]].

    Only U_11 = (z - 1/z)/2, V_11 = (z + 1/z)/2 and V_NN = -1 are non-zero.
    This matrix is the negative of ``left @ K(E, z) @ right`` for the
    unitaries of :func:`k_prime_unitaries`; the dimension 2NM is even, so both
    have the same determinant.
    """
    E, z = complex(E), _z(z)
    N, M = chain.N, chain.M
    n = N * M
    H = assemble_open(chain).entries
    eye = np.eye(n)
    U = np.zeros((n, n), dtype=complex)
    V = np.zeros((n, n), dtype=complex)
    U[:M, :M] = 0.5 * (z - 1 / z) * np.eye(M)
    V[:M, :M] = 0.5 * (z + 1 / z) * np.eye(M)
    V[-M:, -M:] = -np.eye(M)
    K = np.block([[H - E.real * eye + U, -1j * V - E.imag * eye],
                  [1j * V - E.imag * eye, -H + E.real * eye + U]])
    return DoubledHamiltonian(K, "K_prime", E, z)


def q_matrix(chain: BlockChain, E: complex) -> np.ndarray:
    T = plain_transfer(chain, E)
    return T.conj().T @ T


def q_from_doubled_chain(chain: BlockChain, E: complex) -> np.ndarray:
    """Q(E) as the transfer matrix of the doubled chain at energy 0."""
    diag, upper = doubled_blocks(chain, E)
    return ordered_product(diag, upper, 0.0)


def q_symplectic_defect(chain: BlockChain, E: complex) -> float:
    """Relative defect of Q(E*) sigma_2 Q(E) = sigma_2."""
    E = complex(E)
    A, B = q_matrix(chain, E.conjugate()), q_matrix(chain, E)
    s2 = sigma2(chain.M)
    return float(np.linalg.norm(A @ s2 @ B - s2, 2)
                 / max(np.linalg.norm(A, 2) * np.linalg.norm(B, 2), 1.0))


@dataclass(frozen=True)
class QDualityResult:
    lhs: LogDet
    rhs_K: LogDet
    rhs_K_prime: LogDet
    err_K: tuple
    err_K_prime: tuple

    @property
    def error(self) -> float:
        return max(*self.err_K, *self.err_K_prime)


def _q_prefactor(chain: BlockChain, z: complex) -> LogDet:
    return (chain.M * LogDet.of_scalar(-z) + LogDet(0.0, math.pi * chain.size)
            + LogDet(-2 * chain.log_abs_det_couplings(), 0.0))


def q_duality_residual(chain: BlockChain, E: complex, z: complex, Q=None) -> QDualityResult:
    """log det(Q - z) against (-1)^{NM} (-z)^M |prod det L|^-2 det K(E, z), and
    the same with K'(E, z)."""
    E, z = complex(E), _z(z)
    Q = DenseMatrix(q_matrix(chain, E)) if Q is None else oracle(Q)
    lhs = Q.logdet_shift(z)
    pre = _q_prefactor(chain, z)
    rhs_K = pre + logdet(build_K_twisted(chain, E, z).entries)
    rhs_Kp = pre + logdet(build_K_prime(chain, E, z).entries)
    return QDualityResult(lhs, rhs_K, rhs_Kp, lhs.distance(rhs_K), lhs.distance(rhs_Kp))


# --- spectral properties of K and K' ---------------------------------------

def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))


def k_adjoint_residual(chain, E, z) -> float:
    """K(E, z)^dagger = K(E*, 1/z*)."""
    E, z = complex(E), _z(z)
    return _rel(build_K_twisted(chain, E, z).entries.conj().T,
                build_K_twisted(chain, E.conjugate(), 1 / z.conjugate()).entries)


def k_reflection_residual(chain, E, z) -> float:
    """[[0, P], [-P, 0]] K(E, z) [[0, -P], [P, 0]] = -K(E*, 1/z)."""
    E, z = complex(E), _z(z)
    P = reversal_matrix(chain.N, chain.M)
    Z = np.zeros_like(P)
    A = np.block([[Z, P], [-P, Z]])
    B = np.block([[Z, -P], [P, Z]])
    return _rel(A @ build_K_twisted(chain, E, z).entries @ B,
                -build_K_twisted(chain, E.conjugate(), 1 / z).entries)


def _match_sets(x: np.ndarray, y: np.ndarray) -> float:
    """Greedy worst-case distance of a one-to-one matching between x and y."""
    free = list(y)
    worst = 0.0
    for a in x[np.argsort(-np.abs(x))]:
        d = np.abs(np.array(free) - a)
        k = int(np.argmin(d))
        worst = max(worst, float(d[k]))
        free.pop(k)
    return worst


def k_pairing_residual(chain, E, z: float) -> float:
    """For real z the eigenvalues of K(E, z) come in pairs (x, -x*)."""
    K = build_K_twisted(chain, E, float(np.real(z))).entries
    x = np.linalg.eigvals(K)
    return _match_sets(x, -np.conj(x)) / max(np.linalg.norm(K, 2), 1.0)


def k_smallest_singular(chain, E, z) -> float:
    """Smallest singular value of K(E, z) relative to its norm; it stays away
    from 0 whenever z is off the positive real axis."""
    s = np.linalg.svd(build_K_twisted(chain, E, z).entries, compute_uv=False)
    return float(s[-1] / s[0])


def k_inertia(chain, E: float, phi: float) -> tuple[int, int]:
    """Numbers of positive and negative eigenvalues of K(E, e^{i phi})."""
    w = np.linalg.eigvalsh(build_K_twisted(chain, float(E), np.exp(1j * phi)).entries)
    return int(np.count_nonzero(w > 0)), int(np.count_nonzero(w < 0))


def k_prime_conjugation_residual(chain, E, z) -> float:
    """The explicit K' against the negated unitary rotation of K(E, z)."""
    left, right = k_prime_unitaries(chain.N, chain.M)
    return _rel(build_K_prime(chain, E, z).entries,
                -(left @ build_K_twisted(chain, E, z).entries @ right))


def k_prime_property_residuals(chain, E, z) -> dict:
    """Residuals of the three symmetry relations of K'."""
    E, z = complex(E), _z(z)
    n = chain.size
    eye, Z = np.eye(n), np.zeros((n, n))
    swap = np.block([[Z, eye], [eye, Z]])
    flip = np.block([[eye, Z], [Z, -eye]])
    Kp = build_K_prime(chain, E, z).entries
    flipped = flip @ Kp @ flip
    target = build_K_prime(chain, E.conjugate(), -1 / z).entries
    # V_NN = -I does not change sign under z -> -1/z, so the flip relation
    # can only hold away from the two off-diagonal (N, N) blocks
    M = chain.M
    keep = np.ones_like(Kp, dtype=bool)
    for r, c in ((n - M, 2 * n - M), (2 * n - M, n - M)):
        keep[r:r + M, c:c + M] = False
    return {
        "adjoint": _rel(Kp.conj().T, build_K_prime(chain, E, z.conjugate()).entries),
        "swap": _rel(swap @ Kp @ swap, -build_K_prime(chain, E.conjugate(), 1 / z).entries),
        "flip": _rel(flipped, target),
        "flip_off_vnn": _rel(flipped * keep, target * keep),
    }


# --- spectrum of Q and the Thouless-type formula ---------------------------

@dataclass(frozen=True)
class QSpectrum:
    eigenvalues: np.ndarray
    lambdas: np.ndarray
    mu: int


def q_spectrum(chain: BlockChain, E: float, eps_circle: Optional[float] = None,
               Q=None, precision: str = "auto") -> QSpectrum:
    """Eigenvalues of Q(E) at real E as pairs (e^{lambda}, e^{-lambda}) plus
    2 mu unit eigenvalues.

    Without an explicit ``Q`` it is formed at a precision matched to ||T||^4.
    """
    if eps_circle is None:
        eps_circle = default_eps_circle(chain)
    if Q is None:
        Q = transfer_oracle(chain, float(E), precision, power=4).gram()
    else:
        Q = oracle(Q)
    q = Q.eigvalsh()
    unit = np.abs(q - 1) <= eps_circle
    lam = np.sort(np.log(q[(~unit) & (q > 1)]))[::-1]
    return QSpectrum(eigenvalues=q, lambdas=lam, mu=int(unit.sum() // 2))


def k_family(chain: BlockChain, E: float, phis: np.ndarray) -> np.ndarray:
    diag, upper = doubled_blocks(chain, E)
    return corner_family(assemble_blocks(diag, upper), chain.M, phis)


def signed_log_det_K_family(chain: BlockChain, E: float):
    """phi -> log[(-1)^{NM} det K(E, e^{i phi})], asserting the bracket is
    positive at every node."""
    E = float(E)
    n2 = 2 * chain.size
    shift = math.pi * chain.size

    def f(phis: np.ndarray) -> np.ndarray:
        out = np.empty(len(phis))
        for sl in _chunks(len(phis), n2 * n2 * 16):
            mag, ph = logdet_batch(k_family(chain, E, phis[sl]))
            bad = np.abs(wrap_phase(ph + shift)) > POSITIVITY_TOL
            if np.any(bad):
                raise PositivityViolation(
                    f"(-1)^NM det K(E, e^(i phi)) is not positive at phi = "
                    f"{phis[sl][bad][0]:.6f}")
            out[sl] = mag
        return out

    return f


def q_modulus_identity_residual(chain: BlockChain, E: float, phi: float,
                                spec: Optional[QSpectrum] = None, Q=None) -> float:
    """|log lhs - log rhs| of the eigenvalue form of the Q duality at z = e^{i phi}."""
    if spec is None:
        spec = q_spectrum(chain, E, Q=Q)
    lhs = 2 * spec.mu * math.log(2 * abs(math.sin(phi / 2)))
    lhs += float(np.sum(np.log(2 * np.cosh(spec.lambdas) - 2 * math.cos(phi))))
    rhs = -2 * chain.log_abs_det_couplings() + float(
        signed_log_det_K_family(chain, E)(np.array([phi]))[0])
    return abs(lhs - rhs)


@dataclass(frozen=True)
class QThoulessResult:
    lhs: float
    rhs: float
    residual: float
    converged: bool
    nodes: int
    near_edge: bool
    mu: int


def q_thouless_sum(chain: BlockChain, E: float, quad_tol: float = 1e-10, nodes: int = 64,
                   max_nodes: int = 2 ** 16, eps_circle: Optional[float] = None,
                   edge_window: float = 1e-3) -> QThoulessResult:
    """Sum of the exponents of Q(E) against the phi-average of
    log[(-1)^{NM} det K(E, e^{i phi})].

    The integrand is singular only where Q has eigenvalues on the unit circle,
    so the refined quadrature policy kicks in when an eigenvalue of Q lies
    within ``edge_window`` of 1.
    """
    E = float(E)
    spec = q_spectrum(chain, E, eps_circle)
    lhs = float(np.sum(spec.lambdas))
    q_pos = np.maximum(spec.eigenvalues, np.finfo(float).tiny)
    edge = bool(np.min(np.abs(np.log(q_pos))) < edge_window)
    q = thouless_quadrature(signed_log_det_K_family(chain, E), edge, quad_tol, nodes, max_nodes)
    rhs = -2 * chain.log_abs_det_couplings() + q.value
    return QThoulessResult(lhs=lhs, rhs=rhs, residual=abs(lhs - rhs), converged=q.converged,
                           nodes=q.nodes, near_edge=edge, mu=spec.mu)


# --- singular exponents at any N -------------------------------------------

@dataclass(frozen=True)
class SingularExponents:
    """The M largest values of log sigma_a(T(E)), descending."""

    values: np.ndarray
    converged: bool
    sweeps: int
    log_abs_det: float


def singular_exponents(chain: BlockChain, E: complex, stride: int = QR_STRIDE,
                       max_sweeps: int = 500, tol: float = 1e-12) -> SingularExponents:
    """Log singular values of T(E) without ever forming T.

    Orthogonal iteration on T^dagger T in factored form: every sweep pushes an
    orthonormal 2M frame through all factors of T and then of T^dagger with QR
    re-normalization; the per-sweep logs of the QR diagonals converge to
    log eig(T^dagger T).  Sweeps stop once the M leading estimates settle.
    """
    E = complex(E)
    M = chain.M
    fwd = list(factors(chain.H, chain.L, E))
    bwd = [F.conj().T for F in reversed(fwd)]
    frame = np.eye(2 * M, dtype=complex)
    prev, det_ledger = None, None
    for sweep in range(1, max_sweeps + 1):
        led = QRLedger(frame, stride)
        for F in fwd:
            led.push(F)
        led.renormalize()
        if det_ledger is None:
            det_ledger = float(led.logd.sum())
        for F in bwd:
            led.push(F)
        led.renormalize()
        frame = led.Q
        est = np.sort(0.5 * led.logd)[::-1][:M]
        if prev is not None and np.max(np.abs(est - prev)) <= tol * max(1.0, np.max(np.abs(est))):
            return SingularExponents(est, True, sweep, det_ledger)
        prev = est
    return SingularExponents(prev, False, max_sweeps, det_ledger)


def unit_pair_counts(chain: BlockChain, E: float) -> tuple[int, int]:
    """(nu, mu): unit-circle pairs of T(E) and unit pairs of Q(E)."""
    from .duality import spectral_report
    return spectral_report(chain, E).nu, q_spectrum(chain, E).mu
