"""Numerical primitives: log-determinants, corner-block sweeps, eigensolvers
and periodic quadrature."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (ConvergenceFailure, QuadratureNotConverged,
                     ResolventAtEigenvalue, SingularMatrix)

ZERO_PIVOT = 1e-300
# relative pivot size below which a block is treated as singular
PIVOT_RTOL = 1e-13


def wrap_phase(phi):
    """Reduce a phase to (-pi, pi]."""
    out = np.mod(np.asarray(phi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LogDet:
    """Complex log-determinant ``log_mag + 1j*phase`` with phase in (-pi, pi]."""

    log_mag: float
    phase: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "log_mag", float(self.log_mag))
        object.__setattr__(self, "phase", wrap_phase(self.phase))

    @classmethod
    def of_scalar(cls, w: complex) -> "LogDet":
        w = complex(w)
        if w == 0:
            raise SingularMatrix("log of zero")
        return cls(math.log(abs(w)), math.atan2(w.imag, w.real))

    def __add__(self, other: "LogDet") -> "LogDet":
        return LogDet(self.log_mag + other.log_mag, self.phase + other.phase)

    def __sub__(self, other: "LogDet") -> "LogDet":
        return LogDet(self.log_mag - other.log_mag, self.phase - other.phase)

    def __neg__(self) -> "LogDet":
        return LogDet(-self.log_mag, -self.phase)

    def __mul__(self, k: int) -> "LogDet":
        return LogDet(k * self.log_mag, k * self.phase)

    __rmul__ = __mul__

    def value(self) -> complex:
        return complex(np.exp(self.log_mag + 1j * self.phase))

    def distance(self, other: "LogDet") -> tuple[float, float]:
        """(|difference of log-magnitudes|, |phase difference mod 2 pi|)."""
        return (abs(self.log_mag - other.log_mag),
                abs(wrap_phase(self.phase - other.phase)))


def logdet(A) -> LogDet:
    """Log-determinant from a partially pivoted LU factorization.

    Magnitudes and phases are accumulated pivot by pivot so nothing overflows.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"logdet needs a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return LogDet(0.0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    u = np.diag(lu)
    mag = np.abs(u)
    if mag.min() < ZERO_PIVOT:
        raise SingularMatrix("zero pivot in LU factorization")
    swaps = int(np.count_nonzero(piv != np.arange(len(piv))))
    return LogDet(float(np.sum(np.log(mag))),
                  float(np.sum(np.angle(u))) + math.pi * (swaps % 2))


def logdet_batch(stack) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized log-determinants of a stack of matrices: (log_mag, phase)."""
    sign, logabs = np.linalg.slogdet(np.asarray(stack, dtype=complex))
    return logabs, np.angle(sign)


def checked_lu(A, what: str = "matrix", scale: float = 0.0):
    """LU factorization that rejects numerically singular input.

    Pivots are compared with the largest pivot or with ``scale``, whichever is
    bigger; ``scale`` lets a small block be judged against the matrix it came
    from.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(np.asarray(A, dtype=complex))
    d = np.abs(np.diag(lu))
    if not np.all(np.isfinite(lu)) or d.min() <= PIVOT_RTOL * max(d.max(), scale, ZERO_PIVOT):
        raise SingularMatrix(f"{what} is numerically singular")
    return lu, piv


def checked_inv(A, what: str = "matrix", scale: float = 0.0) -> np.ndarray:
    lu, piv = checked_lu(A, what, scale)
    return sla.lu_solve((lu, piv), np.eye(lu.shape[0], dtype=complex))


@dataclass(frozen=True, eq=False)
class CornerBlocks:
    """The (1,1), (1,N), (N,1), (N,N) blocks of a resolvent.

    ``z is None`` marks the open resolvent ``(H - E)^-1``; otherwise the blocks
    belong to the twisted resolvent ``(H(z) - E)^-1``.  ``first_col`` and
    ``last_col`` optionally hold the full first/last block columns,
    shape (N, M, M).  ``G1N_inv`` and ``G1N_logdet`` are filled in by the
    block sweep, which writes G_1N as a product of well-scaled factors; both
    stay accurate when G_1N itself is too ill-conditioned to invert.
    """

    G11: np.ndarray
    G1N: np.ndarray
    GN1: np.ndarray
    GNN: np.ndarray
    E: complex
    z: Optional[complex] = None
    first_col: Optional[np.ndarray] = field(default=None, repr=False)
    last_col: Optional[np.ndarray] = field(default=None, repr=False)
    G1N_inv: Optional[np.ndarray] = field(default=None, repr=False)
    G1N_logdet: Optional["LogDet"] = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.G11.shape[0]

    def as_tuple(self):
        return self.G11, self.G1N, self.GN1, self.GNN


def _dense_columns(diag, upper, E):
    N, M = len(diag), diag[0].shape[0]
    A = np.zeros((N * M, N * M), dtype=complex)
    for n in range(N):
        A[n * M:(n + 1) * M, n * M:(n + 1) * M] = diag[n] - E * np.eye(M)
    for n in range(N - 1):
        A[n * M:(n + 1) * M, (n + 1) * M:(n + 2) * M] = upper[n]
        A[(n + 1) * M:(n + 2) * M, n * M:(n + 1) * M] = np.conj(upper[n]).T
    rhs = np.zeros((N * M, 2 * M), dtype=complex)
    rhs[:M, :M] = np.eye(M)
    rhs[-M:, M:] = np.eye(M)
    try:
        lu = checked_lu(A, "H - E")
    except SingularMatrix as exc:
        raise ResolventAtEigenvalue(f"E = {E} is an eigenvalue of the open Hamiltonian") from exc
    X = sla.lu_solve(lu, rhs)
    first = X[:, :M].reshape(N, M, M)
    last = X[:, M:].reshape(N, M, M)
    return first, last


def _sweep_columns(diag, upper, E):
    """Forward/backward block-Schur recursion for the first and last block
    columns of (H - E)^-1.  Raises SingularMatrix on a singular partial pivot."""
    N, M = len(diag), diag[0].shape[0]
    eye = np.eye(M)
    A = [d - E * eye for d in diag]
    B = list(upper)
    C = [np.conj(b).T for b in upper]
    scale = max(np.max(np.abs(a)) for a in A + B)

    def inv(X):
        return checked_inv(X, "partial pivot", scale)

    # left-connected: gl[n] = inverse of the Schur complement S[n] of slices 1..n
    S = [A[0]]
    gl = [inv(A[0])]
    for n in range(1, N):
        S.append(A[n] - C[n - 1] @ gl[n - 1] @ B[n - 1])
        gl.append(inv(S[n]))
    # right-connected: gr[n] for slices n..N
    gr = [None] * N
    gr[N - 1] = inv(A[N - 1])
    for n in range(N - 2, -1, -1):
        gr[n] = inv(A[n] - B[n] @ gr[n + 1] @ C[n])

    first = np.empty((N, M, M), dtype=complex)
    first[0] = gr[0]
    for n in range(1, N):
        first[n] = -gr[n] @ C[n - 1] @ first[n - 1]
    last = np.empty((N, M, M), dtype=complex)
    last[N - 1] = gl[N - 1]
    for n in range(N - 2, -1, -1):
        last[n] = -gl[n] @ B[n] @ last[n + 1]
    return first, last, S


def _factored_corner(S, B):
    """G_1N = (-1)^{N-1} S_0^-1 B_0 S_1^-1 B_1 ... B_{N-2} S_{N-1}^-1: its
    inverse and log-determinant from the factors."""
    N, M = len(S), S[0].shape[0]
    inv = S[0].astype(complex)
    ld = LogDet(0.0, math.pi * M * (N - 1)) - logdet(S[0])
    for n in range(1, N):
        inv = S[n] @ np.linalg.solve(B[n - 1], inv)
        ld = ld + logdet(B[n - 1]) - logdet(S[n])
    return (-1) ** (N - 1) * inv, ld


def corner_columns(diag: Sequence[np.ndarray], upper: Sequence[np.ndarray], E: complex,
                   factored: bool = False):
    """First and last block columns of ``(A - E)^-1`` for the block-tridiagonal
    ``A`` with diagonal ``diag``, superdiagonal ``upper`` and adjoint
    subdiagonal.  O(N M^3) unless a partial pivot is singular, in which case
    a dense LU solve takes over.

    With ``factored`` a third item is returned: ``(G1N_inv, G1N_logdet)`` from
    the sweep factors, or ``None`` after a dense fallback.
    """
    try:
        first, last, S = _sweep_columns(diag, upper, E)
        ok = np.all(np.isfinite(first)) and np.all(np.isfinite(last))
    except SingularMatrix:
        ok = False
    if not ok:
        first, last = _dense_columns(diag, upper, E)
        return (first, last, None) if factored else (first, last)
    if factored:
        return first, last, _factored_corner(S, upper)
    return first, last


def corner_blocks_sweep(chain, E: complex, columns: bool = False) -> CornerBlocks:
    """Corner blocks of the open resolvent ``(H - E)^-1`` of ``chain``."""
    E = complex(E)
    first, last, fac = corner_columns(chain.H, chain.L, E, factored=True)
    G1N_inv, G1N_logdet = fac if fac is not None else (None, None)
    return CornerBlocks(G11=first[0], G1N=last[0], GN1=first[-1], GNN=last[-1], E=E,
                        first_col=first if columns else None,
                        last_col=last if columns else None,
                        G1N_inv=G1N_inv, G1N_logdet=G1N_logdet)


def hermitian_eigenvalues(A, rtol: float = 1e-10) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian matrix."""
    A = np.asarray(A, dtype=complex)
    if np.linalg.norm(A - A.conj().T) > rtol * max(np.linalg.norm(A), 1.0):
        raise ValueError("matrix is not Hermitian")
    try:
        return np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc


def sort_spectrum(w: np.ndarray) -> np.ndarray:
    """Indices ordering eigenvalues by (|w|, arg w)."""
    return np.lexsort((np.angle(w), np.abs(w)))


def general_eigen(A, vectors: bool = False):
    """Full spectrum of a general square matrix sorted by (|w|, arg w)."""
    A = np.asarray(A, dtype=complex)
    try:
        if vectors:
            w, v = np.linalg.eig(A)
        else:
            w = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = sort_spectrum(w)
    if vectors:
        return w[order], v[:, order]
    return w[order]


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    nodes: int
    error_estimate: float
    converged: bool


def periodic_nodes(n: int) -> np.ndarray:
    """Midpoint-shifted uniform nodes 2 pi (j + 1/2) / n on [0, 2 pi)."""
    return 2 * np.pi * (np.arange(n) + 0.5) / n


def periodic_quadrature(f: Callable[[np.ndarray], np.ndarray], nodes: int = 64,
                        tol: float = 1e-10, max_nodes: int = 2 ** 16,
                        strict: bool = False) -> QuadratureResult:
    """Mean value ``(1/2 pi) int_0^{2 pi} f`` by the periodic trapezoid rule.

    ``f`` receives an array of angles and must return an array of real values;
    it may be called from several threads.  The node count doubles until two
    successive estimates differ by at most ``tol``.  Non-convergence returns the
    best estimate with ``converged=False`` (or raises, if ``strict``).
    """
    if nodes < 4:
        raise ValueError("need at least 4 quadrature nodes")
    n = int(nodes)
    prev = float(np.mean(f(periodic_nodes(n))))
    while True:
        n2 = 2 * n
        if n2 > max_nodes:
            break
        cur = float(np.mean(f(periodic_nodes(n2))))
        err = abs(cur - prev)
        if err <= tol:
            return QuadratureResult(cur, n2, err, True)
        prev, n = cur, n2
    err = float("inf") if n == nodes else err
    if strict:
        raise QuadratureNotConverged(
            f"periodic quadrature not converged at {n} nodes (error {err:.2e})", prev)
    return QuadratureResult(prev, n, err, False)
