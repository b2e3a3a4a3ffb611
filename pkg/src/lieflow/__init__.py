"""Chevalley-basis representations, Jacobi-type identities and the graded
nonabelian Toda lattice built from the factorization K = M+ M-.
"""

__version__ = "0.1.0"

from .cartan import (  # noqa: E402
    CartanData,
    GradingError,
    GradingVector,
    InvalidRankError,
    RedBlock,
    Site,
    cartan_matrix,
    decompose_red_blocks,
    lattice_sites,
)
from .flows import CoefficientSpec, GridSpec, KField, build_K_field, solve_flows, u_matrix  # noqa: E402
from .identities import (  # noqa: E402
    GroupElement,
    check_first_jacobi,
    check_second_jacobi,
    generalized_jacobi_minor,
    random_group_element,
    random_unipotent,
    shifted_element,
)
from .representations import FundamentalRep, build_fundamental_rep, composite_root_generator  # noqa: E402
from .toda import build_solution_field, dressed_field, pi_flow_residual, toda_residual  # noqa: E402
from .verifier import GoursatProblem, estimate_order, goursat_integrate  # noqa: E402
