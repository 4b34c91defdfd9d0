"""Exterior Beltrami fields: layer potentials, a Neumann-type boundary integral
solver, Fourier-Bessel seeds, streamline transport and a Grad-Rubin iteration
for generalized Beltrami fields curl u = (lam + phi) u outside a compact body.

Hot loops run through numba when it is available; set ``BELTRAMI_BACKEND=numpy``
to force the pure-numpy path.
"""

from .bie import BoundaryOperator, TangentDensity, assemble_T, solve_bie
from .flow import Controls, build_stream_tube, classify_tube, integrate_streamline, transport_solve
from .gradrubin import IterationControls, certify, residual_certificate, run_iteration
from .kernels import gamma, grad_gamma, hessian_gamma, kernel_split
from .neumann_solver import FieldRepresentation, far_field, solve_nib, verify_representation
from .potentials import LayerDensity, VolumeDensity, single_layer, volume_potential
from .seeds import FourierBesselSpec, load_seed_spec, seed_field
from .surface import SurfaceGrid, make_cap_patch, make_deformed_sphere_grid, make_sphere_grid

__version__ = "0.1.0"

__all__ = [
    "BoundaryOperator", "TangentDensity", "assemble_T", "solve_bie",
    "Controls", "build_stream_tube", "classify_tube", "integrate_streamline", "transport_solve",
    "IterationControls", "certify", "residual_certificate", "run_iteration",
    "gamma", "grad_gamma", "hessian_gamma", "kernel_split",
    "FieldRepresentation", "far_field", "solve_nib", "verify_representation",
    "LayerDensity", "VolumeDensity", "single_layer", "volume_potential",
    "FourierBesselSpec", "load_seed_spec", "seed_field",
    "SurfaceGrid", "make_cap_patch", "make_deformed_sphere_grid", "make_sphere_grid",
]
