"""Unit-cell problems and the effective tensors built from them.

Three families of periodic problems are solved on Y = (0,1)^d:

* the scalar problems for omega^i (effective permeability),
* the viscous problems for (chi^ij, q^ij) (effective viscosity N),
* the magnetic problems for (xi^ij, r^ij) driven by tau^ij (coupling B).

Indices i, j are zero-based in code.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp

from .errors import FormulaMismatch
from .fem import (
    DofMap,
    PressureSpace,
    ReferenceElement,
    ScalarField,
    VectorField,
    apply_constraints,
    assemble_scalar_diffusion,
    assemble_stokes,
    assemble_stress_load,
    build_rigid_groups,
    energy_identity,
    lumped_mass,
    solve_saddle,
    solve_spd,
    sym_identity,
)
from .fem.assembly import scatter_vector
from .grid import MaterialField, PeriodicMesh

log = logging.getLogger(__name__)

PENALTY = 1e8
# ( sigma = D(P - chi) - q I ,  sigma = D(xi) + r I + tau )
PRESSURE_CONVENTION = "viscous: D(P-chi) - q I; magnetic: D(xi) + r I + tau"


def index_pairs(d: int):
    """The d(d+1)/2 independent pairs (i <= j)."""
    return list(combinations_with_replacement(range(d), 2))


def Q_tensor(i: int, j: int, d: int) -> np.ndarray:
    """Q^ij = D(P^ij), the symmetric unit strain."""
    Q = np.zeros((d, d))
    Q[i, j] += 0.5
    Q[j, i] += 0.5
    return Q


# ---------------------------------------------------------------- scalar ---


@dataclass
class ScalarCellSolution:
    i: int
    omega: ScalarField
    residual: float
    iterations: int

    def grad(self, ref: ReferenceElement) -> np.ndarray:
        return self.omega.grad_at_quadrature(ref)


def _zero_mean_scalar(mesh: PeriodicMesh, values: np.ndarray) -> np.ndarray:
    w = lumped_mass(mesh)
    return values - (w @ values) / w.sum()


def scalar_cell_load(mesh: PeriodicMesh, material: MaterialField, i: int) -> np.ndarray:
    """-int mu e^i . grad(tau) for every nodal basis function tau."""
    ref = ReferenceElement(mesh.h)
    Fe = np.einsum("q,qa->a", ref.wdet, ref.G[:, :, i])
    return -scatter_vector(mesh.dof_conn, material.mu[:, None] * Fe[None, :], mesh.n_dof_nodes)


def solve_scalar_cell(mesh: PeriodicMesh, material: MaterialField, i: int, tol: float = 1e-10,
                      K: sp.csr_matrix | None = None) -> ScalarCellSolution:
    """omega^i with -div[mu (e^i + grad omega^i)] = 0, periodic, zero mean."""
    if not 0 <= i < mesh.dim:
        raise ValueError(f"axis {i} out of range")
    if K is None:
        K = assemble_scalar_diffusion(mesh, material)
    b = scalar_cell_load(mesh, material, i)
    ones = np.ones((1, mesh.n_dof_nodes))
    x, info = solve_spd(K, b, tol, nullspace=ones, return_info=True)
    x = _zero_mean_scalar(mesh, x)
    return ScalarCellSolution(i, ScalarField(mesh, x), info.residual, info.iterations)


@dataclass
class MuEff:
    value: np.ndarray       # energy form
    flux_form: np.ndarray   # average flux form
    gap: float


def compute_mu_eff(solutions, material: MaterialField, mesh: PeriodicMesh | None = None,
                   check: float = 1e-6) -> MuEff:
    """mu_eff[j, k] by the average-flux form and by the energy form.

    Returns the energy-form value; raises FormulaMismatch if the two
    disagree by more than ``check``.
    """
    sols = sorted(solutions, key=lambda s: s.i)
    mesh = sols[0].omega.mesh if mesh is None else mesh
    d = mesh.dim
    ref = ReferenceElement(mesh.h)
    m = np.stack([np.eye(d)[s.i][None, None, :] + s.grad(ref) for s in sols])  # (k, ne, nq, d)
    mu = material.mu
    flux = np.einsum("q,e,keqj->jk", ref.wdet, mu, m) / mesh.volume
    energy = np.einsum("q,e,keql,jeql->jk", ref.wdet, mu, m, m) / mesh.volume
    gap = float(np.abs(flux - energy).max())
    if gap > check:
        raise FormulaMismatch(f"permeability formulas disagree by {gap:.3e}")
    return MuEff(energy, flux, gap)


# --------------------------------------------------------------- stokes ---


class StokesCell:
    """Shared assembly for the viscous and magnetic cell problems."""

    def __init__(self, mesh: PeriodicMesh, material: MaterialField, mode: str = "eliminate",
                 penalty: float = PENALTY):
        if mode not in ("eliminate", "penalty"):
            raise ValueError(f"unknown rigid mode {mode!r}")
        self.mesh = mesh
        self.material = material
        self.mode = mode
        self.penalty = penalty
        solid = np.asarray(material.solid)
        self.solid = solid
        self.fluid = ~solid
        if mode == "penalty" and solid.any():
            self.blocks = assemble_stokes(mesh, material, 0.5, solid_viscosity=penalty)
            groups = []
        else:
            self.blocks = assemble_stokes(mesh, material, 0.5)
            groups = build_rigid_groups(mesh, solid) if solid.any() else []
        self.vdofs = DofMap(mesh, mesh.dim, rigid_groups=groups)
        self.pspace = PressureSpace(mesh, self.fluid)
        self.ref = ReferenceElement(mesh.h)
        vol_e = mesh.element_volume
        self.solid_volume = float(np.count_nonzero(solid) * vol_e)
        self.fluid_volume = mesh.volume - self.solid_volume
        # int_{Y_f} N_q for every pressure node
        self.fluid_load = lumped_mass(mesh, self.fluid)

    @property
    def pressure_nullspace(self) -> bool:
        return self.mode == "eliminate" or not self.solid.any()

    def reduce(self, f=None, g=None, lift=None):
        A, B, C = self.blocks
        return apply_constraints(A, B, C, self.vdofs, self.pspace, f=f, g=g, lift=lift,
                                 pressure_nullspace=self.pressure_nullspace)

    def solve(self, system, tol, method):
        if self.mode == "penalty" and self.solid.any():
            method = "direct"
        return solve_saddle(system, tol, method=method, viscosity=0.5, return_info=True)

    def zero_mean_velocity(self, u: np.ndarray) -> np.ndarray:
        d = self.mesh.dim
        w = lumped_mass(self.mesh)
        U = u.reshape(-1, d)
        return (U - (w @ U) / w.sum()).ravel()


@dataclass
class ViscousCellSolution:
    i: int
    j: int
    chi: VectorField
    q: ScalarField
    rigid: list
    residual: float
    iterations: int
    energy: dict = field(default_factory=dict)

    def strain(self, ref: ReferenceElement) -> np.ndarray:
        """D(P^ij - chi^ij) at quadrature points, (ne, nq, d, d)."""
        d = self.chi.mesh.dim
        return Q_tensor(self.i, self.j, d)[None, None] - self.chi.sym_grad_at_quadrature(ref)


def solve_viscous_cell(mesh: PeriodicMesh, material: MaterialField, i: int, j: int,
                       tol: float = 1e-10, mode: str = "eliminate", method: str = "minres",
                       context: StokesCell | None = None) -> ViscousCellSolution:
    """(chi^ij, q^ij): periodic, P^ij - chi^ij rigid in the particle.

    The divergence condition is imposed on the fluid as
    div chi^ij = -delta_ij |Y_s| / |Y_f|, the only value compatible with
    periodicity when the particle is rigid (for i != j it reads div = 0).
    """
    ctx = StokesCell(mesh, material, mode) if context is None else context
    d = mesh.dim
    if i > j:
        i, j = j, i
    nn = mesh.n_dof_nodes
    Y = mesh.dof_coords
    lift = np.zeros(nn * d)
    f = None
    if ctx.mode == "eliminate":
        for g in ctx.vdofs.rigid_groups:
            lift[g.nodes * d + i] = Y[g.nodes, j]
    elif ctx.solid.any():
        eta = np.where(ctx.solid, ctx.penalty, 1.0)
        S = eta[:, None, None, None] * Q_tensor(i, j, d)[None, None]
        f = assemble_stress_load(mesh, np.broadcast_to(S, (mesh.n_elements, ctx.ref.nq, d, d)), ctx.ref)
    g = None
    if i == j and ctx.solid_volume > 0:
        g = (ctx.solid_volume / ctx.fluid_volume) * ctx.fluid_load
    system = ctx.reduce(f=f, g=g, lift=lift)
    u, p, x, info = ctx.solve(system, tol, method)
    u = ctx.zero_mean_velocity(u)
    z, _ = system.split(x)
    return ViscousCellSolution(
        i, j, VectorField(mesh, u), ScalarField(mesh, -p, active=ctx.fluid),
        ctx.vdofs.rigid_values(z), info.residual, info.iterations, energy_identity(system, x))


def compute_N(viscous, mesh: PeriodicMesh | None = None, strict: bool = False, check: float = 1e-6):
    """Effective viscosity N[i, j, m, n] from the energy form.

    Also evaluates the direct strain average (whose (m,n) entry is the
    average of D(P^ij - chi^ij)_mn). Returns (N_symmetrized, details).
    With ``strict`` a gap above ``check`` raises FormulaMismatch.
    """
    sols = _full_pair_table(viscous)
    first = next(iter(sols.values()))
    mesh = first.chi.mesh if mesh is None else mesh
    d = mesh.dim
    ref = ReferenceElement(mesh.h)
    W = np.empty((d, d) + (mesh.n_elements, ref.nq, d, d))
    for (i, j), s in sols.items():
        W[i, j] = s.strain(ref)
    energy = np.einsum("q,ijeqkl,mneqkl->ijmn", ref.wdet, W, W) / mesh.volume
    direct = np.einsum("q,ijeqmn->ijmn", ref.wdet, W) / mesh.volume
    sym = _symmetrize4(energy)
    gap = float(np.abs(energy - direct).max())
    asym = float(np.abs(energy - sym).max())
    details = {"energy": energy, "direct": direct, "gap": gap, "asymmetry": asym}
    if strict and gap > check:
        raise FormulaMismatch(f"viscosity formulas disagree by {gap:.3e}")
    return sym, details


def _symmetrize4(N: np.ndarray) -> np.ndarray:
    a = 0.5 * (N + N.transpose(1, 0, 2, 3))
    a = 0.5 * (a + a.transpose(0, 1, 3, 2))
    return 0.5 * (a + a.transpose(2, 3, 0, 1))


def n_symmetry_defects(N: np.ndarray) -> dict:
    return {
        "major": float(np.abs(N - N.transpose(2, 3, 0, 1)).max()),
        "minor_ij": float(np.abs(N - N.transpose(1, 0, 2, 3)).max()),
        "minor_mn": float(np.abs(N - N.transpose(0, 1, 3, 2)).max()),
    }


def legendre_hadamard_min(N: np.ndarray, samples: int = 1000, seed: int = 0) -> float:
    """min over random unit pairs of N_ijmn z_i z_m e_j e_n."""
    d = N.shape[0]
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(samples, d))
    e = rng.normal(size=(samples, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    vals = np.einsum("ijmn,si,sm,sj,sn->s", N, z, z, e, e)
    return float(vals.min())


def _full_pair_table(sols):
    """Accept a dict keyed by (i, j) or a list; fill (j, i) from (i, j)."""
    if not isinstance(sols, dict):
        sols = {(s.i, s.j): s for s in sols}
    out = dict(sols)
    for (i, j), s in sols.items():
        out.setdefault((j, i), s)
    return out


# -------------------------------------------------------------- magnetic ---


def tau_from_gradients(mu, mi: np.ndarray, mj: np.ndarray) -> np.ndarray:
    """mu [m_i (x) m_j - (m_i . m_j) I / 2] for arrays of vectors (..., d)."""
    d = mi.shape[-1]
    outer = mi[..., :, None] * mj[..., None, :]
    dot = np.einsum("...k,...k->...", mi, mj)
    t = outer - 0.5 * dot[..., None, None] * np.eye(d)
    return np.asarray(mu)[(...,) + (None,) * 2] * t


def compute_tau(material: MaterialField, scalar_solutions, ref: ReferenceElement | None = None) -> dict:
    """tau^ij at the quadrature points of every element, keyed by (i, j) for all pairs."""
    sols = sorted(scalar_solutions, key=lambda s: s.i)
    mesh = sols[0].omega.mesh
    d = mesh.dim
    ref = ReferenceElement(mesh.h) if ref is None else ref
    m = [np.eye(d)[s.i][None, None, :] + s.grad(ref) for s in sols]
    mu = np.broadcast_to(material.mu[:, None], (mesh.n_elements, ref.nq))
    return {(i, j): tau_from_gradients(mu, m[i], m[j]) for i in range(d) for j in range(d)}


@dataclass
class MagneticCellSolution:
    i: int
    j: int
    xi: VectorField
    r: ScalarField
    rigid: list
    residual: float
    iterations: int
    energy: dict = field(default_factory=dict)


def solve_magnetic_cell(mesh: PeriodicMesh, material: MaterialField, tau_ij: np.ndarray,
                        tol: float = 1e-10, method: str = "minres", i: int = -1, j: int = -1,
                        context: StokesCell | None = None) -> MagneticCellSolution:
    """(xi^ij, r^ij) with div[D(xi) + r I + tau] = 0 in the fluid, xi rigid in the particle.

    Weak form: int D(xi):D(v) + int r div v = -int tau:D(v) for admissible v.
    """
    ctx = StokesCell(mesh, material, "eliminate") if context is None else context
    f = -assemble_stress_load(mesh, tau_ij, ctx.ref, elements=ctx.fluid)
    system = ctx.reduce(f=f)
    u, p, x, info = ctx.solve(system, tol, method)
    u = ctx.zero_mean_velocity(u)
    z, _ = system.split(x)
    return MagneticCellSolution(i, j, VectorField(mesh, u), ScalarField(mesh, -p, active=ctx.fluid),
                                ctx.vdofs.rigid_values(z), info.residual, info.iterations,
                                energy_identity(system, x))


def compute_B(magnetic, tau: dict, mesh: PeriodicMesh | None = None):
    """B^ij = <D(xi^ij) + tau^ij> (raw) and its ij-symmetrization.

    Returns arrays of shape (d, d, d, d) indexed [i, j, k, l].
    """
    sols = _full_pair_table(magnetic)
    first = next(iter(sols.values()))
    mesh = first.xi.mesh if mesh is None else mesh
    d = mesh.dim
    ref = ReferenceElement(mesh.h)
    B = np.zeros((d, d, d, d))
    for i in range(d):
        for j in range(d):
            s = sols[(i, j)]
            integrand = s.xi.sym_grad_at_quadrature(ref) + tau[(i, j)]
            B[i, j] = np.einsum("q,eqkl->kl", ref.wdet, integrand) / mesh.volume
    B_sym = 0.5 * (B + B.transpose(1, 0, 2, 3))
    return B, B_sym


# ------------------------------------------------------------ pipeline ---


@dataclass
class EffectiveTensors:
    mu_eff: np.ndarray
    N: np.ndarray
    B: np.ndarray
    B_sym: np.ndarray
    metadata: dict = field(default_factory=dict)


@dataclass
class CellSolutionSet:
    mesh: PeriodicMesh
    material: MaterialField
    scalar: list
    viscous: dict
    magnetic: dict
    tau: dict
    tensors: EffectiveTensors

    def tau_at(self, y: np.ndarray, i: int, j: int) -> np.ndarray:
        """tau^ij at arbitrary points of the cell (wrapped into Y)."""
        elem, _ = self.mesh.locate(y)
        d = self.mesh.dim
        mi = np.eye(d)[i] + self.scalar[i].omega.gradient(y)
        mj = np.eye(d)[j] + self.scalar[j].omega.gradient(y)
        return tau_from_gradients(self.material.mu[elem], mi, mj)


def _pmap(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def solve_cell_problems(mesh: PeriodicMesh, material: MaterialField, tol: float = 1e-10,
                        mode: str = "eliminate", method: str = "minres", threads: int = 1,
                        strict: bool = False) -> CellSolutionSet:
    """Every cell problem and the three effective tensors."""
    d = mesh.dim
    K = assemble_scalar_diffusion(mesh, material)
    scalar = _pmap(lambda i: solve_scalar_cell(mesh, material, i, tol, K), range(d), threads)
    mu = compute_mu_eff(scalar, material, mesh)

    ctx = StokesCell(mesh, material, mode)
    pairs = index_pairs(d)
    vis = _pmap(lambda ij: solve_viscous_cell(mesh, material, ij[0], ij[1], tol, mode, method, ctx),
                pairs, threads)
    viscous = _full_pair_table({(s.i, s.j): s for s in vis})
    N, ndet = compute_N(viscous, mesh, strict=strict)

    tau = compute_tau(material, scalar)
    mctx = ctx if mode == "eliminate" else StokesCell(mesh, material, "eliminate")
    # only the symmetric part of tau^ij drives the flow, so xi^ij = xi^ji
    mag = _pmap(lambda ij: solve_magnetic_cell(
        mesh, material, 0.5 * (tau[ij] + tau[ij].swapaxes(2, 3)), tol, method, ij[0], ij[1], mctx),
        pairs, threads)
    magnetic = _full_pair_table({(s.i, s.j): s for s in mag})
    B, B_sym = compute_B(magnetic, tau, mesh)

    mu_sym = 0.5 * (mu.value + mu.value.T)
    meta = {
        "mu_eff_flux_form": mu.flux_form.tolist(),
        "mu_eff_formula_gap": mu.gap,
        "mu_eff_asymmetry": float(np.abs(mu.value - mu.value.T).max()),
        "N_direct_average": ndet["direct"].tolist(),
        "N_formula_gap": ndet["gap"],
        "N_asymmetry": ndet["asymmetry"],
        "N_symmetry_defects": n_symmetry_defects(ndet["energy"]),
        "legendre_hadamard_min": legendre_hadamard_min(N),
        "mu_eff_min_eigenvalue": float(np.linalg.eigvalsh(mu_sym).min()),
        "contrast_bound": material.bound,
        "solid_fraction": material.solid_fraction(),
        "rigid_mode": mode,
        "pressure_convention": PRESSURE_CONVENTION,
        "residuals": {
            "scalar": [s.residual for s in scalar],
            "viscous": {f"{s.i}{s.j}": s.residual for s in vis},
            "magnetic": {f"{s.i}{s.j}": s.residual for s in mag},
        },
        "energy_identity": {
            "viscous": {f"{s.i}{s.j}": s.energy.get("defect", 0.0) for s in vis},
            "magnetic": {f"{s.i}{s.j}": s.energy.get("defect", 0.0) for s in mag},
        },
    }
    tensors = EffectiveTensors(mu_sym, N, B, B_sym, meta)
    return CellSolutionSet(mesh, material, scalar, viscous, magnetic, tau, tensors)
