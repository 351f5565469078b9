"""Revenue-optimal multi-item auctions via a discretized linear program,
with dual certificates, gap bounds and closed-form benchmarks."""

__version__ = "0.1.0"

from .grid import Density1D, DensitySpec, TypeGrid, build_grid
from .majorization import MajorizationPartition, build_partition, eta_cdf
from .lp_core import SolverOptions, assemble, export_mps, read_mps, solve
from .ic_engine import irreducible_pairs, local_pairs, solve_full, solve_iterative
from .duality import certify_gap, check_certificate, extract_certificate, reconstruct_phi
from .mechanism import check_majorization, extend_u, extended_revenue, reduced_form

__all__ = [
    "Density1D",
    "DensitySpec",
    "MajorizationPartition",
    "SolverOptions",
    "TypeGrid",
    "assemble",
    "build_grid",
    "build_partition",
    "certify_gap",
    "check_certificate",
    "check_majorization",
    "eta_cdf",
    "export_mps",
    "extend_u",
    "extended_revenue",
    "extract_certificate",
    "irreducible_pairs",
    "local_pairs",
    "read_mps",
    "reconstruct_phi",
    "reduced_form",
    "solve",
    "solve_full",
    "solve_iterative",
]
