"""Twisted resolvent G~ = (H(z) - E)^-1 and its relation to (T(E) - z)^-1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .chain import BlockChain, add_corners, assemble_blocks, assemble_twisted
from .errors import ResolventAtEigenvalue, SingularMatrix, TransferEigenvalueHit, ZeroTwist
from .numkernel import CornerBlocks, checked_lu, corner_blocks_sweep, logdet
from .precise import oracle
from .transfer import transfer_product

__all__ = ["CornerBlocks", "twisted_corner_blocks", "twisted_from_open",
           "transfer_resolvent", "trace_identity_check", "TraceIdentity",
           "lippmann_schwinger_check", "twisted_transfer_identities",
           "logdet_z_derivative"]

HIT_THRESHOLD = 1e-6


def _check_z(z) -> complex:
    z = complex(z)
    if z == 0:
        raise ZeroTwist("twist parameter z must be non-zero")
    return z


def _dense_twisted(chain: BlockChain, E: complex, z: complex) -> CornerBlocks:
    N, M = chain.N, chain.M
    A = add_corners(assemble_blocks(chain.H, chain.L), M, z) - E * np.eye(N * M)
    rhs = np.zeros((N * M, 2 * M), dtype=complex)
    rhs[:M, :M] = np.eye(M)
    rhs[-M:, M:] = np.eye(M)
    try:
        lu = checked_lu(A, "H(z) - E")
    except SingularMatrix as exc:
        raise ResolventAtEigenvalue(f"E = {E} is an eigenvalue of H(z) at z = {z}") from exc
    X = sla.lu_solve(lu, rhs)
    return CornerBlocks(G11=X[:M, :M], G1N=X[:M, M:], GN1=X[-M:, :M], GNN=X[-M:, M:],
                        E=E, z=z)


def twisted_from_open(cb: CornerBlocks, z: complex) -> CornerBlocks:
    """Twisted corner blocks from the open ones by solving the
    Lippmann-Schwinger relations, a 2M x 2M linear system."""
    z = _check_z(z)
    M = cb.M
    eye = np.eye(M)
    S = np.block([[eye + z * cb.G1N, cb.G11 / z],
                  [z * cb.GNN, eye + cb.GN1 / z]])
    rhs = np.block([[cb.G11, cb.G1N], [cb.GN1, cb.GNN]])
    try:
        lu = checked_lu(S, "Lippmann-Schwinger system")
    except SingularMatrix as exc:
        raise ResolventAtEigenvalue(f"E = {cb.E} is an eigenvalue of H(z) at z = {z}") from exc
    X = sla.lu_solve(lu, rhs)
    return CornerBlocks(G11=X[:M, :M], G1N=X[:M, M:], GN1=X[M:, :M], GNN=X[M:, M:],
                        E=cb.E, z=z)


def twisted_corner_blocks(chain: BlockChain, E: complex, z: complex,
                          method: str = "dense") -> CornerBlocks:
    """Corner blocks of (H(z) - E)^-1.

    ``method="dense"`` factorizes the full NM x NM matrix; ``"sweep"`` computes
    the open corners in O(N M^3) and corrects them with the Lippmann-Schwinger
    relations (falling back to dense if E hits the open spectrum).
    """
    E, z = complex(E), _check_z(z)
    if method == "dense":
        return _dense_twisted(chain, E, z)
    if method != "sweep":
        raise ValueError(f"unknown method {method!r}")
    try:
        cb = corner_blocks_sweep(chain, E)
    except ResolventAtEigenvalue:
        return _dense_twisted(chain, E, z)
    return twisted_from_open(cb, z)


def _assemble_inverse(ct: CornerBlocks) -> np.ndarray:
    z, M = ct.z, ct.M
    eye = np.eye(M)
    return np.block([[-ct.G1N, ct.G11 / z],
                     [-ct.GNN / z, ct.GN1 / z ** 2 - eye / z]])


def transfer_resolvent(chain: BlockChain, E: complex, z: complex, T=None,
                       ct: CornerBlocks = None, method: str = "dense") -> np.ndarray:
    """(T(E) - z)^-1 assembled from the twisted resolvent corners.

    The assembled matrix is checked against T(E) - z; a normalized residual
    above 1e-6 (or a singular H(z) - E) raises :class:`TransferEigenvalueHit`.
    """
    E, z = complex(E), _check_z(z)
    if ct is None:
        try:
            ct = twisted_corner_blocks(chain, E, z, method=method)
        except ResolventAtEigenvalue as exc:
            raise TransferEigenvalueHit(f"z = {z} is an eigenvalue of T({E})") from exc
    R = _assemble_inverse(ct)
    T = transfer_product(chain, E).mat if T is None else oracle(T).dense()
    A = T - z * np.eye(2 * chain.M)
    res = np.linalg.norm(R @ A - np.eye(2 * chain.M), 2)
    if res > HIT_THRESHOLD * max(np.linalg.norm(R, 2) * np.linalg.norm(A, 2), 1.0):
        raise TransferEigenvalueHit(
            f"z = {z} is numerically an eigenvalue of T({E}): residual {res:.2e}")
    return R


@dataclass(frozen=True)
class TraceIdentity:
    """Tr (T - z)^-1 against the twisted-resolvent expression.

    ``rhs`` uses ``-M/z - Tr G~_1N + Tr G~_N1 / z^2``, which is what the z
    derivative of the determinant duality gives.  ``rhs_plus`` is the variant
    ``-M/z + d/dz log det(E - H(z))`` with the opposite sign on the derivative
    term, kept for the sign audit.
    """

    lhs: complex
    rhs: complex
    residual: float
    rhs_plus: complex
    residual_plus: float


def trace_identity_check(chain: BlockChain, E: complex, z: complex, T=None,
                         ct: CornerBlocks = None) -> TraceIdentity:
    E, z = complex(E), _check_z(z)
    if T is None:
        T = transfer_product(chain, E).mat
    M = chain.M
    lhs = complex(np.trace(oracle(T).inv_shift(z)))
    if ct is None:
        ct = twisted_corner_blocks(chain, E, z)
    dlog = complex(np.trace(ct.G1N) - np.trace(ct.GN1) / z ** 2)  # d/dz log det(E - H(z))
    rhs = -M / z - dlog
    rhs_plus = -M / z + dlog
    return TraceIdentity(lhs=lhs, rhs=complex(rhs), residual=abs(lhs - rhs),
                         rhs_plus=complex(rhs_plus), residual_plus=abs(lhs - rhs_plus))


def logdet_z_derivative(chain: BlockChain, E: complex, z: complex, h: float = 1e-5) -> complex:
    """Central finite difference of log det(E - H(z)) in z."""
    E, z = complex(E), _check_z(z)
    eye = np.eye(chain.size)
    f_plus = logdet(E * eye - assemble_twisted(chain, z + h).entries)
    f_minus = logdet(E * eye - assemble_twisted(chain, z - h).entries)
    d = f_plus - f_minus
    return complex(d.log_mag, d.phase) / (2 * h)


def lippmann_schwinger_check(chain: BlockChain, E: complex, z: complex,
                             cb: CornerBlocks = None, ct: CornerBlocks = None) -> float:
    """Worst relative residual of G_ij = G~_ij + G_i1 G~_Nj / z + z G_iN G~_1j
    over i, j in {1, N}.  Open and twisted corners come from independent
    solves (sweep and dense respectively)."""
    E, z = complex(E), _check_z(z)
    if cb is None:
        cb = corner_blocks_sweep(chain, E)
    if ct is None:
        ct = twisted_corner_blocks(chain, E, z, method="dense")
    G = {(0, 0): cb.G11, (0, 1): cb.G1N, (1, 0): cb.GN1, (1, 1): cb.GNN}
    Gt = {(0, 0): ct.G11, (0, 1): ct.G1N, (1, 0): ct.GN1, (1, 1): ct.GNN}
    worst = 0.0
    for i in (0, 1):
        for j in (0, 1):
            terms = [G[i, j], Gt[i, j], G[i, 0] @ Gt[1, j] / z, z * G[i, 1] @ Gt[0, j]]
            r = terms[0] - terms[1] - terms[2] - terms[3]
            scale = max(max(np.linalg.norm(t) for t in terms), 1e-300)
            worst = max(worst, float(np.linalg.norm(r) / scale))
    return worst


def twisted_transfer_identities(chain: BlockChain, E: complex, z: complex, T=None,
                                ct: CornerBlocks = None) -> float:
    """Worst relative residual of the column identities and the joined matrix
    relation connecting T(E) to the twisted resolvent corners."""
    E, z = complex(E), _check_z(z)
    T = transfer_product(chain, E).mat if T is None else oracle(T).dense()
    if ct is None:
        ct = twisted_corner_blocks(chain, E, z)
    eye = np.eye(chain.M)
    left = np.block([[z * ct.G1N - eye, z * ct.G11], [ct.GNN, ct.GN1]])
    right = np.block([[ct.G1N, ct.G11], [ct.GNN / z, ct.GN1 / z - eye]])
    scale = max(np.linalg.norm(T, 2) * np.linalg.norm(right, 2), np.linalg.norm(left, 2))
    joined = float(np.linalg.norm(T @ right - left, 2) / scale)
    # the two column identities are the halves of the joined relation
    M = chain.M
    cols = max(
        float(np.linalg.norm(T @ right[:, s] - left[:, s], 2)
              / max(np.linalg.norm(T, 2) * np.linalg.norm(right[:, s], 2),
                    np.linalg.norm(left[:, s], 2)))
        for s in (slice(M, 2 * M), slice(0, M)))
    return max(joined, cols)
