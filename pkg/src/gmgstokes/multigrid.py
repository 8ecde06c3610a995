"""Geometric V-cycle with Chebyshev smoothing on the nested hierarchy.

Transfers use the finite element embedding: a coarse function is also a
fine function, so prolongation interpolates coarse coefficients at the
fine support points (cell-local matrices, shared dofs reconciled by
dividing by their cell multiplicity) and restriction is the exact
transpose.  The smoother is a fixed-degree Chebyshev polynomial in the
Jacobi-preconditioned operator, targeting the upper part of the spectrum
estimated by a short Lanczos run.  One pre- and one post-smoothing
application per level keeps the V-cycle symmetric, so it can serve as a
preconditioner for CG as well as GMRES-type methods.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import krylov
from .fem import DofMap, q_basis, lagrange_value_1d, local_lattice
from .mesh import MeshHierarchy, mesh_child_offsets
from .operators import StokesSystem, apply_A, apply_Mp, compute_diagonal


@dataclass(frozen=True)
class ChebyshevParams:
    """Smoother settings: polynomial degree, Lanczos steps for the
    largest-eigenvalue estimate, and the smoothing interval
    [lam/alpha_low, lam] around the safety-scaled estimate lam."""

    degree: int = 4
    eig_estimate_iters: int = 10
    alpha_low: float = 4.0
    alpha_high: float = 1.2


_LANCZOS_SEED = 1789


def estimate_lambda_max(op, diag, iters: int = 10, safety: float = 1.2, seed: int = _LANCZOS_SEED):
    """Largest eigenvalue of diag^-1 op, estimated by ``iters`` Lanczos steps
    on the symmetrized operator from a seeded random start, scaled by the
    safety factor.  Falls back to power iteration on immediate breakdown."""
    n = diag.size
    if np.any(diag <= 0.0):
        raise ValueError("diagonal must be strictly positive")
    d_isqrt = 1.0 / np.sqrt(diag)

    def bop(w):
        return d_isqrt * op(d_isqrt * w)

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("empty start vector")
    v /= nv
    basis = [v]
    alphas: list[float] = []
    betas: list[float] = []
    w = bop(v)
    for _ in range(iters):
        alphas.append(float(v @ w))
        w = w - alphas[-1] * v
        for u in basis:  # full reorthogonalization, the basis is short
            w -= (u @ w) * u
        beta = np.linalg.norm(w)
        if beta <= 1e-12 * max(abs(a) for a in alphas):
            break
        betas.append(float(beta))
        v = w / beta
        basis.append(v)
        w = bop(v)
    if not alphas:
        # degenerate start, fall back to plain power iteration
        v = rng.standard_normal(n)
        for _ in range(30):
            v = bop(v)
            v /= np.linalg.norm(v)
        return safety * float(v @ bop(v))
    tmat = np.diag(alphas)
    for i, beta in enumerate(betas[: len(alphas) - 1]):
        tmat[i, i + 1] = tmat[i + 1, i] = beta
    lam = float(np.linalg.eigvalsh(tmat).max())
    return safety * lam


def chebyshev_smooth(params: ChebyshevParams, op, diag, b, x0=None, lam_max=None):
    """Fixed Chebyshev polynomial iteration on the Jacobi-preconditioned
    operator over the interval [lam_max/alpha_low, lam_max].

    The error propagator is the degree-``params.degree`` shifted Chebyshev
    polynomial, so the map (b, x0) -> x is linear and, for symmetric op
    and x0 = 0, a symmetric positive definite preconditioner.
    """
    if lam_max is None:
        raise ValueError("lam_max must be provided (see estimate_lambda_max)")
    inv_d = 1.0 / diag
    low = lam_max / params.alpha_low
    theta = 0.5 * (lam_max + low)
    delta = 0.5 * (lam_max - low)
    if x0 is None:
        r = b.copy()
        x = np.zeros_like(b)
    else:
        r = b - op(x0)
        x = x0.copy()
    if delta <= 1e-14 * theta:
        # degenerate interval: one exact Jacobi step
        return x + inv_d * r / theta
    sigma = theta / delta
    rho = 1.0 / sigma
    d = inv_d * r / theta
    x += d
    for _ in range(params.degree - 1):
        r -= op(d)
        rho_new = 1.0 / (2.0 * sigma - rho)
        d = (rho_new * rho) * d + (2.0 * rho_new / delta) * (inv_d * r)
        x += d
        rho = rho_new
    return x


# ---------------------------------------------------------------------------
# Inter-level transfer


@dataclass
class TransferPlan:
    """Embedding tables between consecutive levels for one scalar space."""

    degree: int
    dim: int
    child_mats: np.ndarray  # (2**dim, n_loc, n_loc)
    child_cells: list  # per fine level: (2**dim, n_coarse_cells) fine cell ids
    mult: list  # per level: cell multiplicity of every scalar dof
    maps: list  # per level: the scalar cell->dof map
    n_scalar: list


def _embedding_1d(degree: int) -> np.ndarray:
    """E[t][i, j] = value of coarse function j at fine node i of child t."""
    basis = q_basis(degree)
    nodes = np.asarray(basis.nodes)
    out = np.empty((2, basis.n, basis.n))
    for t in range(2):
        pts = (t + nodes) / 2.0
        for j in range(basis.n):
            out[t, :, j] = lagrange_value_1d(basis, j, pts)
    return out


def build_transfer_plan(mesh: MeshHierarchy, dofmap: DofMap, degree: int) -> TransferPlan:
    dim = mesh.dim
    e1 = _embedding_1d(degree)
    offs = mesh_child_offsets(dim)
    lidx = local_lattice(degree, dim)
    n_loc = len(lidx)
    mats = np.ones((len(offs), n_loc, n_loc))
    for t, off in enumerate(offs):
        for a in range(dim):
            mats[t] *= e1[off[a]][np.ix_(lidx[:, a], lidx[:, a])]

    child_cells: list = [None]
    for level in range(1, mesh.n_levels):
        lat = mesh.cell_lattices(level)
        nc = mesh.cells_per_axis(level - 1)
        parent_idx = np.zeros(len(lat), dtype=np.int64)
        for a in range(dim):
            parent_idx += (lat[:, a] // 2) * nc**a
        table = np.empty((len(offs), mesh.n_cells(level - 1)), dtype=np.int64)
        for t, off in enumerate(offs):
            sel = np.all(lat % 2 == off[None, :], axis=1)
            fine_ids = np.nonzero(sel)[0]
            table[t] = fine_ids[np.argsort(parent_idx[fine_ids])]
        child_cells.append(table)

    maps = []
    mult = []
    n_scalar = []
    for ld in dofmap.levels:
        cmap = ld.q2_map if degree == 2 else ld.q1_map
        ns = ld.n_scalar if degree == 2 else ld.n_p
        maps.append(cmap)
        n_scalar.append(ns)
        mult.append(np.bincount(cmap.ravel(), minlength=ns).astype(float))
    return TransferPlan(
        degree=degree,
        dim=dim,
        child_mats=mats,
        child_cells=child_cells,
        mult=mult,
        maps=maps,
        n_scalar=n_scalar,
    )


def prolongate(plan: TransferPlan, level: int, v_coarse, constrained_fine=None):
    """Coarse-to-fine embedding of a scalar field, level-1 -> level.
    Entries listed in ``constrained_fine`` are zeroed afterwards."""
    if v_coarse.size != plan.n_scalar[level - 1]:
        raise ValueError("coarse vector does not match level - 1")
    cl = v_coarse[plan.maps[level - 1]]
    fl = np.empty((len(plan.maps[level]), plan.child_mats.shape[1]))
    for t in range(len(plan.child_mats)):
        fl[plan.child_cells[level][t]] = cl @ plan.child_mats[t].T
    out = np.bincount(
        plan.maps[level].ravel(), weights=fl.ravel(), minlength=plan.n_scalar[level]
    )
    out /= plan.mult[level]
    if constrained_fine is not None and constrained_fine.size:
        out[constrained_fine] = 0.0
    return out


def restrict(plan: TransferPlan, level: int, r_fine, constrained_fine=None):
    """Exact transpose of :func:`prolongate`, level -> level-1."""
    if r_fine.size != plan.n_scalar[level]:
        raise ValueError("fine vector does not match level")
    w = r_fine
    if constrained_fine is not None and constrained_fine.size:
        w = r_fine.copy()
        w[constrained_fine] = 0.0
    w = w / plan.mult[level]
    wl = w[plan.maps[level]]
    acc = np.zeros((len(plan.maps[level - 1]), plan.child_mats.shape[1]))
    for t in range(len(plan.child_mats)):
        acc += wl[plan.child_cells[level][t]] @ plan.child_mats[t]
    return np.bincount(
        plan.maps[level - 1].ravel(), weights=acc.ravel(), minlength=plan.n_scalar[level - 1]
    )


# ---------------------------------------------------------------------------
# The V-cycle


@dataclass
class MGLevel:
    op: object  # callable vector -> vector
    diag: np.ndarray
    lam_max: float
    scalar_constrained: np.ndarray  # indices in the scalar space (may be empty)
    components: int

    @property
    def n(self) -> int:
        return self.diag.size

    def constrained_full(self) -> np.ndarray:
        if not self.scalar_constrained.size or self.components == 1:
            return self.scalar_constrained
        ns = self.n // self.components
        offs = np.arange(self.components) * ns
        return (self.scalar_constrained[None, :] + offs[:, None]).ravel()


class Multigrid:
    """V-cycle over a list of levels sharing one scalar transfer plan."""

    def __init__(
        self,
        levels: list[MGLevel],
        plan: TransferPlan,
        params: ChebyshevParams,
        coarse_tol: float = 1e-12,
        coarse_max_iters: int = 100,
    ):
        self.levels = levels
        self.plan = plan
        self.params = params
        self.coarse_control = krylov.SolveControl(
            reduction_target=coarse_tol, max_iters=coarse_max_iters, restart_length=coarse_max_iters
        )
        self.n_vcycles = 0

    def _transfer(self, level: int, vec: np.ndarray, down: bool) -> np.ndarray:
        lv = self.levels[level]
        comp = lv.components
        cons = lv.scalar_constrained if lv.scalar_constrained.size else None
        if down:
            ns_f = self.plan.n_scalar[level]
            parts = vec.reshape(comp, ns_f)
            return np.concatenate([restrict(self.plan, level, p, cons) for p in parts])
        ns_c = self.plan.n_scalar[level - 1]
        parts = vec.reshape(comp, ns_c)
        return np.concatenate([prolongate(self.plan, level, p, cons) for p in parts])

    def _coarse_solve(self, b: np.ndarray) -> np.ndarray:
        lv = self.levels[0]
        pc = lambda r: chebyshev_smooth(self.params, lv.op, lv.diag, r, lam_max=lv.lam_max)
        x, _ = krylov.cg(lv.op, pc, b, self.coarse_control)
        return x

    def vcycle(self, b: np.ndarray, level: int | None = None) -> np.ndarray:
        if level is None:
            level = len(self.levels) - 1
            self.n_vcycles += 1
        if level == 0:
            return self._coarse_solve(b)
        lv = self.levels[level]
        x = chebyshev_smooth(self.params, lv.op, lv.diag, b, lam_max=lv.lam_max)
        r = b - lv.op(x)
        cons = lv.constrained_full()
        if cons.size:
            r[cons] = 0.0
        rc = self._transfer(level, r, down=True)
        cons_c = self.levels[level - 1].constrained_full()
        if cons_c.size:
            rc[cons_c] = 0.0
        x += self._transfer(level, self.vcycle(rc, level - 1), down=False)
        return chebyshev_smooth(self.params, lv.op, lv.diag, b, x0=x, lam_max=lv.lam_max)


def vcycle(mg: Multigrid, b: np.ndarray, level: int | None = None) -> np.ndarray:
    return mg.vcycle(b, level)


def build_velocity_multigrid(
    system: StokesSystem,
    params: ChebyshevParams | None = None,
    plan: TransferPlan | None = None,
) -> Multigrid:
    """GMG hierarchy for the viscous block, smoothing the fully coupled
    strain-rate operator on every level."""
    params = params or ChebyshevParams()
    plan = plan or build_transfer_plan(system.mesh, system.dofmap, 2)
    levels = []
    for ctx in system.contexts:
        op = lambda u, ctx=ctx: apply_A(ctx, u)
        diag = compute_diagonal(ctx, "A")
        lam = estimate_lambda_max(op, diag, params.eig_estimate_iters, params.alpha_high)
        levels.append(
            MGLevel(
                op=op,
                diag=diag,
                lam_max=lam,
                scalar_constrained=ctx.dofs.dirichlet_scalar,
                components=system.mesh.dim,
            )
        )
    return Multigrid(levels, plan, params)


def build_mass_multigrid(
    system: StokesSystem,
    params: ChebyshevParams | None = None,
    plan: TransferPlan | None = None,
) -> Multigrid:
    """GMG hierarchy for the viscosity-weighted pressure mass matrix."""
    params = params or ChebyshevParams()
    plan = plan or build_transfer_plan(system.mesh, system.dofmap, 1)
    empty = np.empty(0, dtype=np.int64)
    levels = []
    for ctx in system.contexts:
        op = lambda p, ctx=ctx: apply_Mp(ctx, p)
        diag = compute_diagonal(ctx, "Mp")
        lam = estimate_lambda_max(op, diag, params.eig_estimate_iters, params.alpha_high)
        levels.append(
            MGLevel(op=op, diag=diag, lam_max=lam, scalar_constrained=empty, components=1)
        )
    return Multigrid(levels, plan, params)
