"""Ground state and nondegeneracy checks for the critical fractional Kirchhoff equation

    (a + b ||(-Delta)^{s/2} u||^2) (-Delta)^s u = u^{2*_s - 1},   2s < N < 4s.
"""
from .bubble import (BubbleProfile, CriticalExponents, bubble_kappa, calibrate_normalization,
                     closed_form_C, eval_bubble, sobolev_quotient)
from .grids import BoxGrid, RadialGrid, integrate_radial, make_box_grid, make_radial_grid
from .linearization import (KernelPencil, LinearizedOperator, SpectrumReport, assemble_L_plus,
                            near_kernel, verify_kernel_identities)
from .scaling import (ProblemParams, ScalingCertificate, construct_ground_state, invert_ground_state,
                      solve_E0)
from .sectors import SectorOperator, assemble_sector, reconcile_sectors, sector_spectrum
from .spectral import (DiscreteOperator, SpectralField, apply_frac_laplacian_box,
                       assemble_sector_laplacian, seminorm_sq)

__version__ = "0.1.0"

__all__ = [
    "BoxGrid", "RadialGrid", "make_box_grid", "make_radial_grid", "integrate_radial",
    "DiscreteOperator", "SpectralField", "apply_frac_laplacian_box", "seminorm_sq",
    "assemble_sector_laplacian", "BubbleProfile", "CriticalExponents", "eval_bubble",
    "calibrate_normalization", "closed_form_C", "bubble_kappa", "sobolev_quotient",
    "ProblemParams", "ScalingCertificate", "solve_E0", "construct_ground_state",
    "invert_ground_state", "LinearizedOperator", "KernelPencil", "SpectrumReport",
    "assemble_L_plus", "near_kernel", "verify_kernel_identities", "SectorOperator",
    "assemble_sector", "sector_spectrum", "reconcile_sectors",
]
