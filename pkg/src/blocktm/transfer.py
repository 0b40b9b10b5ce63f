"""Transfer matrices T(E) of a block chain.

Convention: ``(L_N psi_{N+1}, psi_N) = T(E) (psi_1, L_0^dagger psi_0)``, with

    T(E) = T_N Sigma_{N-1} T_{N-1} ... Sigma_1 T_1,
    T_k = [[E - H_k, -I], [I, 0]],   Sigma_k = diag(L_k^-1, L_k^dagger).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .chain import BlockChain, COND_FLOOR, assemble_open, check_coupling
from .errors import CornerSingular, ProductNotRepresentable, SingularMatrix
from .numkernel import CornerBlocks, LogDet, checked_inv, logdet

QR_STRIDE = 8


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """``mat * exp(scale)`` is the transfer matrix at energy ``E``.

    ``log_abs_det`` carries log|det T| when it was tracked independently
    (stabilized products); otherwise it is computed from ``mat``.
    """

    E: complex
    mat: np.ndarray
    scale: float = 0.0
    log_abs_det: Optional[float] = None

    @property
    def M(self) -> int:
        return self.mat.shape[0] // 2

    def dense(self) -> np.ndarray:
        return self.mat * np.exp(self.scale)

    def det_ledger(self) -> float:
        """log|det T|; zero in exact arithmetic."""
        if self.log_abs_det is not None:
            return self.log_abs_det
        return logdet(self.mat).log_mag + 2 * self.M * self.scale


def sigma2(M: int) -> np.ndarray:
    eye, zero = np.eye(M), np.zeros((M, M))
    return np.block([[zero, -eye], [eye, zero]])


def step_factor(H_k, E: complex) -> np.ndarray:
    H_k = np.atleast_2d(np.asarray(H_k, dtype=complex))
    M = H_k.shape[0]
    eye = np.eye(M)
    return np.block([[E * eye - H_k, -eye], [eye, np.zeros((M, M))]])


def coupling_factor(L_k, cond_floor: float = COND_FLOOR) -> np.ndarray:
    L_k = np.atleast_2d(np.asarray(L_k, dtype=complex))
    check_coupling(L_k, cond_floor)
    M = L_k.shape[0]
    zero = np.zeros((M, M))
    return np.block([[np.linalg.inv(L_k), zero], [zero, L_k.conj().T]])


def _coupling(L_k: np.ndarray) -> np.ndarray:
    M = L_k.shape[0]
    zero = np.zeros((M, M))
    return np.block([[np.linalg.inv(L_k), zero], [zero, np.conj(L_k).T]])


def factors(diag: Sequence[np.ndarray], couplings: Sequence[np.ndarray],
            E: complex) -> Iterator[np.ndarray]:
    """Factors of the transfer product in application order T_1, Sigma_1, T_2, ...

    ``diag`` need not be Hermitian; this is what lets the doubled chain of
    T^dagger T reuse the same machinery at complex E.
    """
    for k, d in enumerate(diag):
        if k > 0:
            yield _coupling(couplings[k - 1])
        yield step_factor(d, E)


def ordered_product(diag, couplings, E: complex) -> np.ndarray:
    M = diag[0].shape[0]
    P = np.eye(2 * M, dtype=complex)
    for F in factors(diag, couplings, E):
        P = F @ P
    return P


def transfer_product(chain: BlockChain, E: complex) -> TransferMatrix:
    E = complex(E)
    P = ordered_product(chain.H, chain.L, E)
    return TransferMatrix(E=E, mat=P)


def plain_transfer(chain: BlockChain, E: complex) -> np.ndarray:
    """The plain product as an array, refusing overflowed results."""
    with np.errstate(over="ignore", invalid="ignore"):
        P = transfer_product(chain, E).mat
    if not np.all(np.isfinite(P)):
        raise ProductNotRepresentable(
            f"plain transfer product overflows at N={chain.N}; use the stabilized path")
    return P


class QRLedger:
    """Running factorization ``X = Q diag(exp(logd)) U`` of a growing product.

    ``Q`` has orthonormal columns, ``U`` is unit upper triangular; all growth
    lives in ``logd``.  ``push`` left-multiplies by a factor and re-orthonormalizes
    every ``stride`` pushes.
    """

    def __init__(self, Q0: np.ndarray, stride: int = QR_STRIDE):
        self.Q = np.array(Q0, dtype=complex)
        k = self.Q.shape[1]
        self.logd = np.zeros(k)
        self.U = np.eye(k, dtype=complex)
        self.stride = max(1, int(stride))
        self._pending = 0

    def push(self, F: np.ndarray) -> None:
        self.Q = F @ self.Q
        self._pending += 1
        if self._pending >= self.stride:
            self.renormalize()

    def renormalize(self) -> None:
        if self._pending == 0:
            return
        Qn, R = np.linalg.qr(self.Q)
        r = np.diag(R)
        mag = np.abs(r)
        if np.any(mag == 0) or not np.all(np.isfinite(R)):
            raise SingularMatrix("QR re-normalization met a rank-deficient product")
        ph = r / mag
        Qn = Qn * ph
        Rn = (R / ph[:, None]) / mag[:, None]
        # conjugate the new unit-triangular factor through the old scales
        ratio = np.exp(np.clip(self.logd[None, :] - self.logd[:, None], -745.0, 700.0))
        self.U = np.triu(Rn * ratio) @ self.U
        self.logd = self.logd + np.log(mag)
        self.Q = Qn
        self._pending = 0

    def matrix(self, scale: Optional[float] = None) -> tuple[np.ndarray, float]:
        self.renormalize()
        if scale is None:
            scale = float(self.logd.max())
        return self.Q @ (np.exp(self.logd - scale)[:, None] * self.U), scale


def transfer_product_stabilized(chain: BlockChain, E: complex,
                                stride: int = QR_STRIDE) -> TransferMatrix:
    """T(E) accumulated with periodic QR re-normalization.

    ``mat`` is T scaled by ``exp(-scale)`` with ``scale`` the largest
    accumulated log-magnitude; ``log_abs_det`` is the summed log of all QR
    diagonals, which tracks log|det T| without ever forming det T.
    """
    E = complex(E)
    ledger = QRLedger(np.eye(2 * chain.M), stride)
    for F in factors(chain.H, chain.L, E):
        ledger.push(F)
    mat, scale = ledger.matrix()
    return TransferMatrix(E=E, mat=mat, scale=scale, log_abs_det=float(ledger.logd.sum()))


def apply_transfer(T: TransferMatrix, psi1, inflow):
    """Propagate ``(psi_1, L_0^dagger psi_0)`` to ``(L_N psi_{N+1}, psi_N)``."""
    M = T.M
    v = np.concatenate([np.asarray(psi1, dtype=complex).reshape(M),
                        np.asarray(inflow, dtype=complex).reshape(M)])
    w = T.dense() @ v
    return w[:M], w[M:]


def transfer_from_resolvent(cb: CornerBlocks) -> TransferMatrix:
    """T(E) from the corner blocks of the open resolvent (H - E)^-1."""
    G11, G1N, GN1, GNN = cb.as_tuple()
    inv1N = cb.G1N_inv
    if inv1N is None:
        try:
            inv1N = checked_inv(G1N, "G_1N")
        except SingularMatrix as exc:
            raise CornerSingular(f"G_1N is not invertible at E = {cb.E}") from exc
    top = np.hstack([-inv1N, -inv1N @ G11])
    bottom = np.hstack([GNN @ inv1N, -GN1 + GNN @ inv1N @ G11])
    return TransferMatrix(E=cb.E, mat=np.vstack([top, bottom]))


def symplectic_defect(chain: BlockChain, E: complex, relative: bool = False) -> float:
    """Frobenius norm of T(E*)^dagger sigma_2 T(E) - sigma_2.

    With ``relative`` the defect is divided by ||T(E*)|| ||T(E)||, the scale of
    its rounding error.
    """
    E = complex(E)
    A = transfer_product(chain, E.conjugate()).mat
    B = transfer_product(chain, E).mat
    s2 = sigma2(chain.M)
    d = float(np.linalg.norm(A.conj().T @ s2 @ B - s2))
    if relative:
        d /= max(np.linalg.norm(A, 2) * np.linalg.norm(B, 2), 1.0)
    return d


def corner_transfer_identities(chain: BlockChain, E: complex, T=None, cb=None) -> float:
    """Worst relative residual of the two column identities tying T(E) to the
    open resolvent: T (G11, -I) = (0, GN1) and T (G1N, 0) = (-I, GNN)."""
    if T is None:
        T = transfer_product(chain, E).mat
    if cb is None:
        from .numkernel import corner_blocks_sweep
        cb = corner_blocks_sweep(chain, E)
    M = chain.M
    eye, zero = np.eye(M), np.zeros((M, M))
    res = 0.0
    for rhs_in, rhs_out in (((cb.G11, -eye), (zero, cb.GN1)),
                            ((cb.G1N, zero), (-eye, cb.GNN))):
        x = np.vstack(rhs_in)
        y = np.vstack(rhs_out)
        scale = max(np.linalg.norm(T, 2) * np.linalg.norm(x, 2), np.linalg.norm(y, 2), 1e-300)
        res = max(res, float(np.linalg.norm(T @ x - y, 2) / scale))
    return res


def corner_determinant_identity(chain: BlockChain, E: complex, cb=None):
    """log det G_1N^-1 against (-1)^M det(L_1...L_{N-1})^-1 det(E - H).

    Returns ``(lhs, rhs)`` as :class:`LogDet`.  The sign ``(-1)^M`` is the one
    fixed by the leading coefficient of det G_1N^-1 as a polynomial in E.
    """
    E = complex(E)
    if cb is None:
        from .numkernel import corner_blocks_sweep
        cb = corner_blocks_sweep(chain, E)
    lhs = -(cb.G1N_logdet if cb.G1N_logdet is not None else logdet(cb.G1N))
    Hd = assemble_open(chain).entries
    rhs = logdet(E * np.eye(chain.size) - Hd)
    for l in chain.L:
        rhs = rhs - logdet(l)
    rhs = rhs + LogDet(0.0, np.pi * chain.M)
    return lhs, rhs
