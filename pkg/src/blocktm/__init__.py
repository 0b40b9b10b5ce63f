"""Block-tridiagonal Hamiltonians, their transfer matrices and the exact
spectral identities that connect the two."""

from .chain import (BlockChain, DenseHamiltonian, assemble_open, assemble_twisted,
                    free_chain, load_chain, make_anderson_strip, make_band_random,
                    make_explicit_chain, make_floquet, save_chain)
from .duality import (band_structure, duality_residual, spectral_report, thouless_sum)
from .errors import *  # noqa: F401,F403
from .numkernel import LogDet, logdet
from .qmat import (build_K, build_K_prime, build_K_twisted, q_duality_residual, q_matrix,
                   q_thouless_sum, singular_exponents)
from .resolvent import transfer_resolvent, twisted_corner_blocks
from .transfer import (TransferMatrix, transfer_from_resolvent, transfer_product,
                       transfer_product_stabilized)

__version__ = "0.1.0"
