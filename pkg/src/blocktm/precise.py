"""Extended-precision evaluation of the small 2M x 2M side of the identities.

A transfer matrix with condition number near 1/eps loses its small
eigenvalues in double precision, and with them det(T - z), (T - z)^-1 and
T^dagger T.  The products here are accumulated in mpmath at ``dps`` digits
and only the final scalars and matrices are rounded back to double.

Both oracles share one interface so every identity check can take either.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from mpmath.ctx_mp import MPContext

from .chain import BlockChain
from .numkernel import LogDet, general_eigen, logdet, sort_spectrum
from .transfer import plain_transfer, transfer_product_stabilized

DEFAULT_DPS = 60
# double precision is kept while eps * ||T||^power stays below this
DOUBLE_BUDGET = 1e-8


class DenseMatrix:
    """Double-precision oracle around a plain array."""

    def __init__(self, A):
        self.A = np.asarray(A, dtype=complex)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def dense(self) -> np.ndarray:
        return self.A

    def inverse(self) -> "DenseMatrix":
        return DenseMatrix(np.linalg.inv(self.A))

    def gram(self) -> "DenseMatrix":
        return DenseMatrix(self.A.conj().T @ self.A)

    def logdet_shift(self, z: complex) -> LogDet:
        return logdet(self.A - complex(z) * np.eye(self.n))

    def logdet_symmetric(self, z: complex) -> LogDet:
        """log det(A + A^-1 - (z + 1/z))."""
        z = complex(z)
        return logdet(self.A + np.linalg.inv(self.A) - (z + 1 / z) * np.eye(self.n))

    def inv_shift(self, z: complex) -> np.ndarray:
        return np.linalg.inv(self.A - complex(z) * np.eye(self.n))

    def eigvals(self) -> np.ndarray:
        return general_eigen(self.A)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.A + self.A.conj().T))


def _context(dps: int) -> MPContext:
    """A private mpmath context; the global ``mpmath.mp`` precision is shared
    state and would race between threads."""
    ctx = MPContext()
    ctx.dps = dps
    return ctx


def _to_mp(ctx: MPContext, A):
    A = np.asarray(A, dtype=complex)
    return ctx.matrix([[ctx.mpc(x.real, x.imag) for x in row] for row in A])


def _to_np(A) -> np.ndarray:
    return np.array([[complex(A[i, j]) for j in range(A.cols)] for i in range(A.rows)])


class PreciseMatrix:
    """Extended-precision oracle around an mpmath matrix."""

    def __init__(self, A, dps: int = DEFAULT_DPS, ctx: Optional[MPContext] = None):
        self.ctx = ctx if ctx is not None else _context(dps)
        self.A = A
        self.dps = dps

    @property
    def n(self) -> int:
        return self.A.rows

    def _wrap(self, B) -> "PreciseMatrix":
        return PreciseMatrix(B, self.dps, self.ctx)

    def dense(self) -> np.ndarray:
        return _to_np(self.A)

    def inverse(self) -> "PreciseMatrix":
        return self._wrap(self.A ** -1)

    def gram(self) -> "PreciseMatrix":
        return self._wrap(self.A.H * self.A)

    def _logdet(self, B) -> LogDet:
        ctx = self.ctx
        d = ctx.det(B)
        if d == 0:
            return LogDet(-math.inf, 0.0)
        return LogDet(float(ctx.log(abs(d))), float(ctx.arg(d)))

    def _shifted(self, w):
        return self.A - w * self.ctx.eye(self.n)

    def logdet_shift(self, z: complex) -> LogDet:
        return self._logdet(self._shifted(self.ctx.mpc(z)))

    def logdet_symmetric(self, z: complex) -> LogDet:
        z = self.ctx.mpc(z)
        return self._logdet(self.A + self.A ** -1 - (z + 1 / z) * self.ctx.eye(self.n))

    def inv_shift(self, z: complex) -> np.ndarray:
        return _to_np(self._shifted(self.ctx.mpc(z)) ** -1)

    def eigvals(self) -> np.ndarray:
        w = self.ctx.eig(self.A, left=False, right=False)
        w = np.array([complex(x) for x in w])
        return w[sort_spectrum(w)]

    def eigvalsh(self) -> np.ndarray:
        H = (self.A + self.A.H) / 2
        w = self.ctx.eighe(H, eigvals_only=True)
        return np.sort(np.array([float(self.ctx.re(x)) for x in w]))


def precise_transfer(chain: BlockChain, E: complex, dps: int = DEFAULT_DPS) -> PreciseMatrix:
    """T(E) accumulated factor by factor at ``dps`` digits.

    The chain entries are read as exact binary numbers; everything after
    that, coupling inverses included, runs at ``dps`` digits.
    """
    M = chain.M
    ctx = _context(dps)
    E_mp = ctx.mpc(complex(E))
    P = ctx.eye(2 * M)
    for k in range(chain.N):
        if k > 0:
            L = _to_mp(ctx, chain.L[k - 1])
            Li, Lh = L ** -1, L.H
            S = ctx.zeros(2 * M)
            for i in range(M):
                for j in range(M):
                    S[i, j] = Li[i, j]
                    S[M + i, M + j] = Lh[i, j]
            P = S * P
        H = _to_mp(ctx, chain.H[k])
        F = ctx.zeros(2 * M)
        for i in range(M):
            for j in range(M):
                F[i, j] = -H[i, j]
            F[i, i] += E_mp
            F[i, M + i] = -1
            F[M + i, i] = 1
        P = F * P
    return PreciseMatrix(P, dps, ctx)


def oracle(T) -> "DenseMatrix | PreciseMatrix":
    """Wrap an array as a double-precision oracle; pass oracles through."""
    if isinstance(T, (DenseMatrix, PreciseMatrix)):
        return T
    return DenseMatrix(T)


def digits_for(log10_norm: float, power: int = 2) -> int:
    """Working digits that leave about 30 significant digits in quantities
    whose conditioning is ||T||^power."""
    return max(DEFAULT_DPS, 30 + int(math.ceil(power * max(log10_norm, 0.0))))


def transfer_oracle(chain: BlockChain, E: complex, precision: str = "auto",
                    power: int = 2) -> "DenseMatrix | PreciseMatrix":
    """T(E) as an oracle at a precision matched to its conditioning.

    ``power`` is the exponent of ||T|| that sets the error of the quantity the
    caller needs (2 for eigenvalues of T at real E, 4 for eigenvalues of
    T^dagger T).  ``precision`` is ``"auto"``, ``"double"`` or ``"extended"``.
    """
    if precision not in ("auto", "double", "extended"):
        raise ValueError(f"unknown precision {precision!r}")
    if precision == "double":
        return DenseMatrix(plain_transfer(chain, E))
    st = transfer_product_stabilized(chain, E)
    log10_norm = (st.scale + math.log(np.linalg.norm(st.mat, 2))) / math.log(10)
    if precision == "auto" and power * log10_norm < math.log10(DOUBLE_BUDGET / np.finfo(float).eps):
        return DenseMatrix(plain_transfer(chain, E))
    return precise_transfer(chain, E, digits_for(log10_norm, power))
