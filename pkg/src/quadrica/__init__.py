"""Confocal quadrics over the complex orthogonal group, their moving-frame
nets, and Backlund-type transformations.

The package is organized bottom-up:

  sjcalc    block calculus of complex symmetric matrices and their roots
  confocal  canonical quadrics, the confocal family, the Ivory affinity
  lmap      parabolic parametrization x = L Z for quadrics without center
  netgrid   grid fields, moving-frame integration, residual suites
  backlund  Ricatti transformation of frames and Bianchi quads
  cli       verification pipelines and geometry export
"""

from .errors import QuadricaError, NumericalError, ConfigError
from .report import ResidualReport, refinement_ratio
from .sjcalc import (SJBlock, SJSpec, csqrt, isotropic_vector, basis_vector,
                     sj_block, sj_sqrt, sj_sqrt_pencil, random_rotation)
from .confocal import (Quadric, ConfocalMember, canonical_quadric,
                       diagonal_qwc, member, c_vector, ivory_image,
                       elliptic_coords, sample_point, ivory_identity_suite)
from .lmap import LMap, build_lmap, sqrt_r_prime, lmap_identity_suite
from .netgrid import (GridSpec, FrameState, FundamentalSystem, seed_diagonal,
                      soliton_rotation, integrate_moving_frame,
                      fundamental_system, realize_surface, model_surface)
from .backlund import (integrate_ricatti, leaf, leaf_space, bpt_rotation,
                       bianchi_quad)

__version__ = "0.1.0"

__all__ = [
    "QuadricaError", "NumericalError", "ConfigError",
    "ResidualReport", "refinement_ratio",
    "SJBlock", "SJSpec", "csqrt", "isotropic_vector", "basis_vector",
    "sj_block", "sj_sqrt", "sj_sqrt_pencil", "random_rotation",
    "Quadric", "ConfocalMember", "canonical_quadric", "diagonal_qwc",
    "member", "c_vector", "ivory_image", "elliptic_coords", "sample_point",
    "ivory_identity_suite",
    "LMap", "build_lmap", "sqrt_r_prime", "lmap_identity_suite",
    "GridSpec", "FrameState", "FundamentalSystem", "seed_diagonal",
    "soliton_rotation", "integrate_moving_frame", "fundamental_system",
    "realize_surface", "model_surface",
    "integrate_ricatti", "leaf", "leaf_space", "bpt_rotation",
    "bianchi_quad",
    "__version__",
]
