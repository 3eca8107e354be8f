"""Q1 finite elements on structured grids: assembly, constraints, solvers, fields."""
from .assembly import (
    StokesBlocks,
    assemble_anisotropic_diffusion,
    assemble_body_force,
    assemble_boundary_flux,
    assemble_divergence,
    assemble_mass,
    assemble_pressure_stabilization,
    assemble_scalar_diffusion,
    assemble_scalar_load,
    assemble_stokes,
    assemble_stress_load,
    assemble_tensor_viscosity,
    assemble_vector_load,
    is_symmetric,
    lumped_mass,
    sym_identity,
)
from .constraints import (
    DofMap,
    PressureSpace,
    ReducedSaddle,
    RigidGroup,
    apply_constraints,
    build_rigid_groups,
    reduce_spd,
    rigid_columns,
)
from .fields import PressureField, ScalarField, VectorField, l1_norm, l2_norm, quadrature_points
from .reference import ReferenceElement, gauss_rule, shape_gradients, shape_values
from .solvers import NoConvergence, SolveInfo, energy_identity, minres, solve_direct, solve_saddle, solve_spd

__all__ = [name for name in dir() if not name.startswith("_")]
