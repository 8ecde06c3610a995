"""Matrix-free geometric-multigrid Stokes solver on nested Cartesian grids,
with a variable-viscosity multi-sinker benchmark."""

from .fem import (
    BlockVector,
    DofMap,
    QuadratureRule,
    ScalarBasis,
    apply_dirichlet,
    distribute_dofs,
    make_gauss_rule,
    shape_eval,
)
from .krylov import (
    IndefiniteOperatorError,
    SolveControl,
    SolverStats,
    VectorLedger,
    cg,
    fgmres,
    gmres,
    idr_s,
)
from .mesh import CellId, MeshHierarchy, build_hierarchy, cell_center, children
from .multigrid import (
    ChebyshevParams,
    Multigrid,
    TransferPlan,
    build_mass_multigrid,
    build_transfer_plan,
    build_velocity_multigrid,
    chebyshev_smooth,
    estimate_lambda_max,
    prolongate,
    restrict,
    vcycle,
)
from .operators import (
    LevelOperatorContext,
    StokesSystem,
    apply_A,
    apply_A_partial,
    apply_B,
    apply_Bt,
    apply_Mp,
    apply_stokes,
    assemble_rhs,
    assemble_rhs_function,
    compute_diagonal,
    make_level_context,
)
from .precond import (
    ConfigError,
    PrecondConfig,
    StokesPreconditioner,
    apply_P,
    normalize_pressure,
    schur_apply,
)
from .viscosity import (
    SinkerConfig,
    ViscosityField,
    average_active_viscosity,
    chi,
    forcing,
    mu,
    restrict_viscosity,
    sinker_config,
)

__version__ = "0.1.0"
