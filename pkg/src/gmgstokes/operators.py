"""Matrix-free application of the variable-viscosity Stokes blocks.

Every block of the saddle-point system

    [ A   B^T ] [U]   [F]
    [ B   0   ] [P] = [0]

is applied cell-by-cell without storing matrix entries: gather the local
coefficients of a whole level at once, contract with tabulated reference
basis arrays (large GEMMs), scale by the cell-constant viscosity and the
affine Jacobian factors, and scatter-add.  Cells are axis-aligned cubes
of side h, so physical gradients are reference gradients divided by h
and the Jacobian determinant is h**dim.

Dirichlet-constrained velocity rows and columns act as the identity.
Inputs are zeroed on the constrained set before the cell loop and the
constrained output entries are overwritten with the input values, which
keeps each block symmetric on the unconstrained subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import (
    BasisTables,
    BlockVector,
    DofMap,
    LevelDofs,
    QuadratureRule,
    make_gauss_rule,
    tabulate,
)
from .mesh import MeshHierarchy
from .viscosity import SinkerConfig, ViscosityField, forcing


@dataclass
class LevelOperatorContext:
    """Everything needed to apply the operators of one hierarchy level."""

    dim: int
    level: int
    h: float
    n_cells: int
    lattices: np.ndarray
    dofs: LevelDofs
    mu: np.ndarray  # one averaged viscosity per cell
    rule: QuadratureRule
    q2: BasisTables
    q1: BasisTables
    constrained: np.ndarray  # scalar Q2 indices treated as identity rows
    counters: dict = field(default_factory=dict)

    # flattened basis arrays shared by the kernels, built once
    _g_fwd: np.ndarray | None = None  # (L2, n_q*dim)
    _g_bwd: np.ndarray | None = None  # (n_q*dim, L2)
    _g_ax: list | None = None  # per axis (L2, n_q)

    def __post_init__(self):
        if len(self.mu) != self.n_cells:
            raise ValueError("viscosity values must cover every cell on the level")
        g = self.q2.grads  # (n_q, L2, dim)
        self._g_fwd = np.ascontiguousarray(g.transpose(1, 0, 2).reshape(g.shape[1], -1))
        self._g_bwd = np.ascontiguousarray(g.transpose(0, 2, 1).reshape(-1, g.shape[1]))
        self._g_ax = [np.ascontiguousarray(g[:, :, a].T) for a in range(self.dim)]

    @property
    def n_scalar(self) -> int:
        return self.dofs.n_scalar

    @property
    def n_u(self) -> int:
        return self.dim * self.dofs.n_scalar

    @property
    def n_p(self) -> int:
        return self.dofs.n_p

    def count(self, name: str) -> None:
        self.counters[name] = self.counters.get(name, 0) + 1


def make_level_context(
    mesh: MeshHierarchy,
    dofmap: DofMap,
    visc: ViscosityField,
    level: int,
    rule: QuadratureRule | None = None,
    constrain: bool = True,
) -> LevelOperatorContext:
    """Assemble the per-level context; ``constrain=False`` drops the
    boundary treatment (pure Neumann form, used by some diagnostics)."""
    rule = rule or make_gauss_rule(3, mesh.dim)
    ld = dofmap.levels[level]
    constrained = ld.dirichlet_scalar if constrain else np.empty(0, dtype=np.int64)
    return LevelOperatorContext(
        dim=mesh.dim,
        level=level,
        h=mesh.h(level),
        n_cells=mesh.n_cells(level),
        lattices=mesh.cell_lattices(level),
        dofs=ld,
        mu=visc.level(level),
        rule=rule,
        q2=tabulate(2, mesh.dim, rule),
        q1=tabulate(1, mesh.dim, rule),
        constrained=constrained,
    )


def _scatter(idx: np.ndarray, local: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(idx.ravel(), weights=local.ravel(), minlength=n)


def _zero_constrained(ctx: LevelOperatorContext, u2: np.ndarray) -> np.ndarray:
    if ctx.constrained.size:
        u2 = u2.copy()
        u2[:, ctx.constrained] = 0.0
    return u2


def apply_A(ctx: LevelOperatorContext, u: np.ndarray) -> np.ndarray:
    """Viscous block: A_ij = int 2*mu eps(phi_i) : eps(phi_j).

    Uses the fully coupled strain-rate form: the reference gradient of
    the trial field is symmetrized at every quadrature point before the
    test contraction.
    """
    dim, nc, ns = ctx.dim, ctx.n_cells, ctx.n_scalar
    if u.size != ctx.n_u:
        raise ValueError(f"velocity length {u.size} != {ctx.n_u}")
    n_q = ctx.rule.n
    l2 = ctx.q2.values.shape[1]
    u2 = _zero_constrained(ctx, u.reshape(dim, ns))
    ul = u2[:, ctx.dofs.q2_map]  # (dim, nc, L2)
    grad = (ul.reshape(dim * nc, l2) @ ctx._g_fwd).reshape(dim, nc, n_q, dim)
    # C[a, :, :, b] = 2*eps(u)_{ab} in reference coordinates
    sym = np.empty_like(grad)
    for a in range(dim):
        for b in range(dim):
            sym[a, :, :, b] = grad[a, :, :, b] + grad[b, :, :, a]
    scale = ctx.mu[:, None] * ctx.rule.weights[None, :] * ctx.h ** (dim - 2)
    sym *= scale[None, :, :, None]
    local = (sym.reshape(dim * nc, n_q * dim) @ ctx._g_bwd).reshape(dim, nc, l2)
    out = np.empty_like(u2)
    for a in range(dim):
        out[a] = _scatter(ctx.dofs.q2_map, local[a], ns)
    if ctx.constrained.size:
        out[:, ctx.constrained] = u.reshape(dim, ns)[:, ctx.constrained]
    ctx.count("apply_A")
    return out.reshape(-1)


def apply_A_partial(ctx: LevelOperatorContext, u: np.ndarray) -> np.ndarray:
    """Partially coupled variant keeping only the diagonal gradient
    entries: component d sees int 2*mu (d_d u_d)(d_d v_d), so the
    velocity components decouple completely."""
    dim, nc, ns = ctx.dim, ctx.n_cells, ctx.n_scalar
    if u.size != ctx.n_u:
        raise ValueError(f"velocity length {u.size} != {ctx.n_u}")
    u2 = _zero_constrained(ctx, u.reshape(dim, ns))
    scale = 2.0 * ctx.mu[:, None] * ctx.rule.weights[None, :] * ctx.h ** (dim - 2)
    out = np.empty_like(u2)
    for a in range(dim):
        da = u2[a][ctx.dofs.q2_map] @ ctx._g_ax[a]  # (nc, n_q)
        out[a] = _scatter(ctx.dofs.q2_map, (da * scale) @ ctx._g_ax[a].T, ns)
    if ctx.constrained.size:
        out[:, ctx.constrained] = u.reshape(dim, ns)[:, ctx.constrained]
    ctx.count("apply_A_partial")
    return out.reshape(-1)


def apply_B(ctx: LevelOperatorContext, u: np.ndarray) -> np.ndarray:
    """Divergence block: (B u)_i = -int (div u_h) phi^p_i."""
    dim, nc, ns = ctx.dim, ctx.n_cells, ctx.n_scalar
    if u.size != ctx.n_u:
        raise ValueError(f"velocity length {u.size} != {ctx.n_u}")
    u2 = _zero_constrained(ctx, u.reshape(dim, ns))
    div = np.zeros((nc, ctx.rule.n))
    for a in range(dim):
        div += u2[a][ctx.dofs.q2_map] @ ctx._g_ax[a]
    local = (div * ctx.rule.weights[None, :]) @ ctx.q1.values * (-ctx.h ** (dim - 1))
    ctx.count("apply_B")
    return _scatter(ctx.dofs.q1_map, local, ctx.n_p)


def apply_Bt(ctx: LevelOperatorContext, p: np.ndarray) -> np.ndarray:
    """Transpose of the divergence block; constrained rows are zeroed so
    that <B u, p> == <u, B^T p> with the masked B."""
    dim, ns = ctx.dim, ctx.n_scalar
    if p.size != ctx.n_p:
        raise ValueError(f"pressure length {p.size} != {ctx.n_p}")
    pq = p[ctx.dofs.q1_map] @ ctx.q1.values.T  # (nc, n_q)
    t = pq * ctx.rule.weights[None, :] * (-ctx.h ** (dim - 1))
    out = np.empty((dim, ns))
    for a in range(dim):
        out[a] = _scatter(ctx.dofs.q2_map, t @ ctx._g_ax[a].T, ns)
    if ctx.constrained.size:
        out[:, ctx.constrained] = 0.0
    ctx.count("apply_Bt")
    return out.reshape(-1)


def apply_Mp(ctx: LevelOperatorContext, p: np.ndarray) -> np.ndarray:
    """Viscosity-weighted pressure mass matrix: int (1/mu) phi^p_i phi^p_j."""
    if p.size != ctx.n_p:
        raise ValueError(f"pressure length {p.size} != {ctx.n_p}")
    pq = p[ctx.dofs.q1_map] @ ctx.q1.values.T
    t = pq * (ctx.rule.weights[None, :] * ctx.h**ctx.dim / ctx.mu[:, None])
    ctx.count("apply_Mp")
    return _scatter(ctx.dofs.q1_map, t @ ctx.q1.values, ctx.n_p)


def apply_stokes(ctx: LevelOperatorContext, x: BlockVector) -> BlockVector:
    """Full saddle-point operator (A u + B^T p, B u)."""
    return BlockVector(apply_A(ctx, x.u) + apply_Bt(ctx, x.p), apply_B(ctx, x.u))


def assemble_rhs_function(
    ctx: LevelOperatorContext,
    f,
    rule: QuadratureRule | None = None,
) -> BlockVector:
    """Velocity load vector int phi_i . f for an arbitrary forcing callback
    ``f(points) -> (n, dim)``; the pressure part is zero and constrained
    velocity entries are zeroed."""
    rule = rule or ctx.rule
    q2 = tabulate(2, ctx.dim, rule)
    pts = (ctx.lattices[:, None, :] + rule.points[None, :, :]) * ctx.h
    fv = np.asarray(f(pts.reshape(-1, ctx.dim))).reshape(ctx.n_cells, rule.n, ctx.dim)
    out = np.empty((ctx.dim, ctx.n_scalar))
    for a in range(ctx.dim):
        local = (fv[:, :, a] * rule.weights[None, :]) @ q2.values * ctx.h**ctx.dim
        out[a] = _scatter(ctx.dofs.q2_map, local, ctx.n_scalar)
    if ctx.constrained.size:
        out[:, ctx.constrained] = 0.0
    return BlockVector(out.reshape(-1), np.zeros(ctx.n_p))


def assemble_rhs(ctx: LevelOperatorContext, cfg: SinkerConfig) -> BlockVector:
    """Load vector of the sinker forcing on the context's level."""
    return assemble_rhs_function(ctx, lambda x: forcing(x, cfg))


def compute_diagonal(ctx: LevelOperatorContext, which: str) -> np.ndarray:
    """Exact diagonal of A or Mp, via the closed cell-local form.

    For A the local diagonal of the strain-rate form reduces to
    mu * h**(dim-2) * sum_q w_q (|grad phi|^2 + (d_a phi)^2) for
    component a.  Constrained entries are set to 1.
    """
    if which == "A":
        g = ctx.q2.grads
        w = ctx.rule.weights
        g2 = np.einsum("q,qib->i", w, g**2)
        out = np.empty((ctx.dim, ctx.n_scalar))
        for a in range(ctx.dim):
            ga2 = np.einsum("q,qi->i", w, g[:, :, a] ** 2)
            local = ctx.mu[:, None] * (g2 + ga2)[None, :] * ctx.h ** (ctx.dim - 2)
            out[a] = _scatter(ctx.dofs.q2_map, local, ctx.n_scalar)
        if ctx.constrained.size:
            out[:, ctx.constrained] = 1.0
        return out.reshape(-1)
    if which == "Mp":
        v2 = np.einsum("q,qj->j", ctx.rule.weights, ctx.q1.values**2)
        local = (ctx.h**ctx.dim / ctx.mu)[:, None] * v2[None, :]
        return _scatter(ctx.dofs.q1_map, local, ctx.n_p)
    raise ValueError(f"unknown operator {which!r}, expected 'A' or 'Mp'")


def pressure_volume_weights(ctx: LevelOperatorContext) -> np.ndarray:
    """Vector m with m_j = int phi^p_j, so m . p = int p_h."""
    local = np.broadcast_to(
        ctx.rule.weights @ ctx.q1.values * ctx.h**ctx.dim,
        (ctx.n_cells, ctx.q1.values.shape[1]),
    )
    return _scatter(ctx.dofs.q1_map, np.ascontiguousarray(local), ctx.n_p)


# ---------------------------------------------------------------------------


class StokesSystem:
    """Level contexts plus the active-level saddle operator of one problem."""

    def __init__(
        self,
        mesh: MeshHierarchy,
        dofmap: DofMap,
        visc: ViscosityField,
        rule: QuadratureRule | None = None,
    ):
        self.mesh = mesh
        self.dofmap = dofmap
        self.visc = visc
        self.rule = rule or make_gauss_rule(3, mesh.dim)
        self.contexts = [
            make_level_context(mesh, dofmap, visc, level, self.rule)
            for level in range(mesh.n_levels)
        ]
        self.active = self.contexts[-1]
        self._pressure_weights: np.ndarray | None = None

    @property
    def n_u(self) -> int:
        return self.active.n_u

    @property
    def n_p(self) -> int:
        return self.active.n_p

    @property
    def n_dofs(self) -> int:
        return self.n_u + self.n_p

    def apply(self, x: BlockVector) -> BlockVector:
        return apply_stokes(self.active, x)

    def apply_flat(self, x: np.ndarray) -> np.ndarray:
        return self.apply(BlockVector.from_flat(x, self.n_u)).flat()

    def pressure_weights(self) -> np.ndarray:
        if self._pressure_weights is None:
            self._pressure_weights = pressure_volume_weights(self.active)
        return self._pressure_weights
