"""
Spectral Galerkin building blocks
"""

from .space import (
    GalerkinSpace,
    SpectralField,
    WaveVector,
    basis_field,
    build_space,
    field_from_records,
    field_records,
    fractional_power,
    project,
    random_field,
    shear_mode,
    sobolev_norm,
)
from .bilinear import (
    BilinearWorkspace,
    bilinear,
    bilinear_direct,
    cutoff_bilinear,
    smooth_cutoff,
    symmetric_divergence_direct,
    workspace_for,
)

__all__ = [
    "GalerkinSpace",
    "SpectralField",
    "WaveVector",
    "basis_field",
    "build_space",
    "field_from_records",
    "field_records",
    "fractional_power",
    "project",
    "random_field",
    "shear_mode",
    "sobolev_norm",
    "BilinearWorkspace",
    "bilinear",
    "bilinear_direct",
    "cutoff_bilinear",
    "smooth_cutoff",
    "symmetric_divergence_direct",
    "workspace_for",
]
