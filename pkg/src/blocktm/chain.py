"""Block-tridiagonal chain data model, model generators and dense assembly.

A chain holds ``N`` Hermitian diagonal blocks ``H_n`` and ``N - 1`` invertible
couplings ``L_n`` (all ``M x M``).  The open Hamiltonian has ``L_n`` on the
block superdiagonal and ``L_n^dagger`` on the subdiagonal; the twisted
Hamiltonian adds ``I/z`` in block (1, N) and ``z I`` in block (N, 1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonHermitianBlock, SingularCoupling, ZeroTwist

HERMITIAN_RTOL = 1e-12
COND_FLOOR = 1e-10

# stream roles mixed into the per-block seed
_ROLE_DIAG = 0
_ROLE_COUPLING = 1


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BlockChain:
    """Validated chain data.  ``H`` has shape (N, M, M), ``L`` (N-1, M, M)."""

    H: np.ndarray
    L: np.ndarray

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]

    @property
    def size(self) -> int:
        return self.N * self.M

    def log_abs_det_couplings(self) -> float:
        """Sum of log|det L_k| over all couplings."""
        return float(sum(np.linalg.slogdet(l)[1] for l in self.L))

    def __eq__(self, other):
        if not isinstance(other, BlockChain):
            return NotImplemented
        return (self.H.shape == other.H.shape
                and np.array_equal(self.H, other.H)
                and np.array_equal(self.L, other.L))

    __hash__ = None

    def to_dict(self) -> dict:
        def enc(blocks):
            return [[[[float(x.real), float(x.imag)] for x in row] for row in b]
                    for b in blocks]
        return {"N": self.N, "M": self.M, "H": enc(self.H), "L": enc(self.L)}


@dataclass(frozen=True, eq=False)
class DenseHamiltonian:
    entries: np.ndarray
    kind: str  # "open" or "twisted"
    z: Optional[complex] = None

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def check_coupling(L: np.ndarray, cond_floor: float = COND_FLOOR) -> None:
    s = np.linalg.svd(L, compute_uv=False)
    if s[0] == 0.0 or s[-1] < cond_floor * s[0]:
        raise SingularCoupling(
            f"coupling block fails invertibility floor: s_min/s_max = "
            f"{(s[-1] / s[0]) if s[0] else 0.0:.3e} < {cond_floor:g}")


def make_explicit_chain(H_blocks: Sequence, L_blocks: Sequence,
                        cond_floor: float = COND_FLOOR) -> BlockChain:
    """Validate user-supplied blocks and build a :class:`BlockChain`.

    Diagonal blocks with a Hermiticity defect below ``1e-12 * ||H||`` are
    symmetrized; larger defects raise :class:`NonHermitianBlock`.
    """
    H = [np.atleast_2d(np.asarray(h, dtype=complex)) for h in H_blocks]
    L = [np.atleast_2d(np.asarray(l, dtype=complex)) for l in L_blocks]
    N = len(H)
    if N < 2:
        raise DimensionMismatch(f"need at least 2 slices, got N={N}")
    if len(L) != N - 1:
        raise DimensionMismatch(f"expected {N - 1} coupling blocks, got {len(L)}")
    M = H[0].shape[0]
    for n, b in enumerate(H + L):
        if b.shape != (M, M):
            raise DimensionMismatch(f"block {n} has shape {b.shape}, expected {(M, M)}")

    sym = []
    for n, h in enumerate(H):
        defect = np.linalg.norm(h - h.conj().T)
        if defect > HERMITIAN_RTOL * np.linalg.norm(h):
            raise NonHermitianBlock(
                f"H_{n + 1} is not Hermitian: ||H - H^dagger|| = {defect:.3e}")
        sym.append(0.5 * (h + h.conj().T))
    for l in L:
        check_coupling(l, cond_floor)
    return BlockChain(H=_readonly(np.stack(sym)), L=_readonly(np.stack(L)))


def free_chain(N: int, M: int = 1) -> BlockChain:
    """Zero diagonal blocks and identity couplings."""
    return make_explicit_chain([np.zeros((M, M))] * N, [np.eye(M)] * (N - 1))


def block_rng(seed: int, index: int, role: int) -> np.random.Generator:
    """Independent stream for one block, keyed by (seed, block index, role)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index), int(role)]))


def make_anderson_strip(M: int, N: int, W: float, seed: int = 0) -> BlockChain:
    """Anderson model on an M-wide strip: hard-wall transverse hopping 1,
    on-site energies uniform on [-W/2, W/2], identity couplings."""
    if W < 0:
        raise ValueError("disorder width W must be non-negative")
    if M < 1:
        raise ValueError("M must be >= 1")
    hop = np.eye(M, k=1) + np.eye(M, k=-1)
    H = []
    for n in range(N):
        eps = block_rng(seed, n, _ROLE_DIAG).uniform(-W / 2, W / 2, size=M)
        H.append(hop + np.diag(eps))
    return make_explicit_chain(H, [np.eye(M)] * (N - 1))


def _gaussian_block(rng: np.random.Generator, M: int, ensemble: str) -> np.ndarray:
    # diagonal variance 1, off-diagonal variance 1/2 per real component
    A = rng.standard_normal((M, M))
    if ensemble == "GOE":
        return 0.5 * (A + A.T)
    B = A + 1j * rng.standard_normal((M, M))
    return 0.5 * (B + B.conj().T)


def make_band_random(M: int, N: int, ensemble: str = "GOE", seed: int = 0,
                     diag_floor: float = 1e-3) -> BlockChain:
    """Gaussian-ensemble diagonal blocks with random lower-triangular couplings."""
    ensemble = ensemble.upper()
    if ensemble not in ("GOE", "GUE"):
        raise ValueError(f"unknown ensemble {ensemble!r}")
    H = [_gaussian_block(block_rng(seed, n, _ROLE_DIAG), M, ensemble) for n in range(N)]
    L = []
    for n in range(N - 1):
        rng = block_rng(seed, n, _ROLE_COUPLING)
        l = np.tril(rng.standard_normal((M, M)))
        for i in range(M):
            while abs(l[i, i]) < diag_floor:
                l[i, i] = rng.standard_normal()
        L.append(l)
    return make_explicit_chain(H, L)


def make_floquet(H0, V, omega: float, N: int) -> BlockChain:
    """Fourier-space Floquet chain: ``H_n = H0 + n*omega``, ``L_n = V``."""
    H0 = np.atleast_2d(np.asarray(H0, dtype=complex))
    V = np.atleast_2d(np.asarray(V, dtype=complex))
    eye = np.eye(H0.shape[0])
    H = [H0 + n * omega * eye for n in range(1, N + 1)]
    return make_explicit_chain(H, [V] * (N - 1))


def assemble_blocks(diag: Sequence[np.ndarray], upper: Sequence[np.ndarray]) -> np.ndarray:
    """Dense block-tridiagonal matrix with ``upper[n]`` above and its adjoint
    below the diagonal.  No Hermiticity requirement on ``diag``."""
    N = len(diag)
    M = diag[0].shape[0]
    A = np.zeros((N * M, N * M), dtype=complex)
    for n in range(N):
        A[n * M:(n + 1) * M, n * M:(n + 1) * M] = diag[n]
    for n in range(N - 1):
        A[n * M:(n + 1) * M, (n + 1) * M:(n + 2) * M] += upper[n]
        A[(n + 1) * M:(n + 2) * M, n * M:(n + 1) * M] += np.conj(upper[n]).T
    return A


def add_corners(A: np.ndarray, M: int, z: complex) -> np.ndarray:
    """Add ``I/z`` to the upper-right and ``z I`` to the lower-left M x M corner
    (in place).  Overlapping blocks for a 2-block matrix simply add up."""
    if z == 0:
        raise ZeroTwist("twist parameter z must be non-zero")
    eye = np.eye(M)
    A[:M, -M:] += eye / z
    A[-M:, :M] += z * eye
    return A


def assemble_open(chain: BlockChain) -> DenseHamiltonian:
    A = assemble_blocks(chain.H, chain.L)
    return DenseHamiltonian(entries=_readonly(A), kind="open")


def assemble_twisted(chain: BlockChain, z: complex) -> DenseHamiltonian:
    z = complex(z)
    A = add_corners(assemble_blocks(chain.H, chain.L), chain.M, z)
    return DenseHamiltonian(entries=_readonly(A), kind="twisted", z=z)


def chain_from_dict(data: dict, cond_floor: float = COND_FLOOR) -> BlockChain:
    try:
        N, M = int(data["N"]), int(data["M"])
        H = [np.array([[complex(*x) for x in row] for row in b]) for b in data["H"]]
        L = [np.array([[complex(*x) for x in row] for row in b]) for b in data["L"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DimensionMismatch(f"malformed chain description: {exc}") from exc
    chain = make_explicit_chain(H, L, cond_floor=cond_floor)
    if chain.N != N or chain.M != M:
        raise DimensionMismatch(
            f"declared N={N}, M={M} but blocks give N={chain.N}, M={chain.M}")
    return chain


def load_chain(path) -> BlockChain:
    with open(Path(path)) as fh:
        return chain_from_dict(json.load(fh))


def save_chain(chain: BlockChain, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(chain.to_dict(), fh)
