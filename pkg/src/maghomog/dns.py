"""Direct fine-scale simulation at period eps and corrector diagnostics.

The eps-problem is solved on a box made of whole cells of size eps, each
resolved by the same unit-cell grid, so the fine coefficient is the unit-cell
material tiled over the box. Every particle is a separate rigid group.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cell import CellSolutionSet
from .errors import UnderResolved, ValidationError
from .fem import (
    DofMap,
    PressureSpace,
    ReferenceElement,
    ScalarField,
    VectorField,
    apply_constraints,
    assemble_body_force,
    assemble_scalar_diffusion,
    assemble_stokes,
    assemble_stress_load,
    build_rigid_groups,
    energy_identity,
    solve_saddle,
)
from .fem.fields import l1_norm, l2_norm, quadrature_points
from .grid import GeometrySpec, MaterialField, PeriodicMesh, assign_material, build_box_mesh, build_unit_cell_mesh, tile_material
from .macro import MacroConfig, MacroState, ReconstructedFields, neumann_potential

log = logging.getLogger(__name__)

MIN_CELL_RES = 8
NORM_ORDER = 3


def maxwell_stress(grad_phi: np.ndarray, mu, S: float) -> np.ndarray:
    """T = S mu (grad phi (x) grad phi - |grad phi|^2 I / 2), pointwise for (..., d)."""
    g = np.asarray(grad_phi, dtype=float)
    d = g.shape[-1]
    outer = g[..., :, None] * g[..., None, :]
    sq = np.einsum("...k,...k->...", g, g)
    mu = np.asarray(mu, dtype=float)
    return S * mu[(...,) + (None, None)] * (outer - 0.5 * sq[..., None, None] * np.eye(d))


def cells_per_axis(eps: float, lengths) -> list:
    out = []
    for L in lengths:
        m = L / eps
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise ValidationError(f"domain length {L} is not a whole number of cells of size {eps}")
        out.append(int(round(m)))
    return out


def dns_mesh(eps: float, lengths, n_cell: int) -> PeriodicMesh:
    if n_cell < MIN_CELL_RES:
        raise UnderResolved(f"{n_cell} elements per cell axis; need at least {MIN_CELL_RES}")
    m = cells_per_axis(eps, lengths)
    return build_box_mesh(len(lengths), lengths, [mk * n_cell for mk in m])


def particle_labels(mesh: PeriodicMesh, solid: np.ndarray, n_cell: int) -> np.ndarray:
    """Cell index of every solid element (-1 on fluid): one particle per cell."""
    cidx = mesh.element_index // n_cell
    ncell = np.array(mesh.n) // n_cell
    strides = np.cumprod(np.concatenate([[1], ncell[:-1]]))
    lab = cidx @ strides
    return np.where(solid, lab, -1)


@dataclass
class DnsState:
    eps: float
    mesh: PeriodicMesh
    material: MaterialField
    phi: ScalarField
    u: VectorField | None = None
    p: ScalarField | None = None
    rigid: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def maxwell_stress(self, ref: ReferenceElement, S: float) -> np.ndarray:
        g = self.phi.grad_at_quadrature(ref)
        mu = np.broadcast_to(self.material.mu[:, None], g.shape[:2])
        return maxwell_stress(g, mu, S)


def fine_material(eps: float, spec: GeometrySpec, lengths, n_cell: int):
    mesh = dns_mesh(eps, lengths, n_cell)
    cell_mesh = build_unit_cell_mesh(mesh.dim, n_cell)
    cell_mat = assign_material(cell_mesh, spec)
    return mesh, tile_material(cell_mat, cell_mesh, mesh)


def solve_dns_potential(eps: float, spec: GeometrySpec, config: MacroConfig, n_cell: int = 16) -> DnsState:
    """phi_eps: -div[mu(x/eps) grad phi] = 0, Neumann data k.n, zero mean."""
    mesh, mat = fine_material(eps, spec, config.lengths, n_cell)
    K = assemble_scalar_diffusion(mesh, mat)
    phi, info, flux = neumann_potential(mesh, K, config.k_field(), config.tol)
    st = DnsState(eps, mesh, mat, ScalarField(mesh, phi))
    st.info["potential"] = {"iterations": info.iterations, "residual": info.residual, "net_flux": flux}
    st.info["n_cell"] = n_cell
    return st


def solve_dns_flow(state: DnsState, config: MacroConfig, method: str = "minres") -> DnsState:
    """Rigid-particle Stokes flow driven by gravity and the Maxwell stress of phi_eps.

    Forcing (1/Fr^2) int g.v - int T(phi_eps):D(v) is taken over the fluid.
    """
    mesh, mat = state.mesh, state.material
    n_cell = state.info.get("n_cell", MIN_CELL_RES)
    d = mesh.dim
    solid = np.asarray(mat.solid)
    fluid = ~solid
    A, B, C = assemble_stokes(mesh, mat, 1.0 / config.Re)
    ref = ReferenceElement(mesh.h)
    f = assemble_body_force(mesh, np.asarray(config.g, float) / config.Fr ** 2, elements=fluid)
    if config.S != 0.0:
        T = state.maxwell_stress(ref, config.S)
        f = f - assemble_stress_load(mesh, T, ref, elements=fluid)
    groups = build_rigid_groups(mesh, solid, particle_labels(mesh, solid, n_cell)) if solid.any() else []
    vd = DofMap(mesh, d, dirichlet_nodes=np.flatnonzero(mesh.boundary_nodes), rigid_groups=groups)
    ps = PressureSpace(mesh, fluid)
    system = apply_constraints(A, B, C, vd, ps, f=f, velocity_nullspace=False, pressure_nullspace=True)
    u, p, x, info = solve_saddle(system, config.tol, method=method, viscosity=1.0 / config.Re,
                                 return_info=True)
    z, _ = system.split(x)
    state.u = VectorField(mesh, u)
    state.p = ScalarField(mesh, p, active=fluid)
    state.rigid = vd.rigid_values(z)
    state.centers = [g.center for g in groups]
    state.info["flow"] = {"iterations": info.iterations, "residual": info.residual,
                          "energy_identity": energy_identity(system, x)}
    return state


def rigid_defect(state: DnsState) -> float:
    """Largest deviation of the velocity from its particle's rigid motion."""
    from .fem.constraints import rigid_columns

    mesh = state.mesh
    d = mesh.dim
    labels = particle_labels(mesh, state.material.solid, state.info.get("n_cell", MIN_CELL_RES))
    worst = 0.0
    for k, (gid, (U, R)) in enumerate(zip(np.unique(labels[labels >= 0]), state.rigid)):
        nodes = np.unique(mesh.dof_conn[labels == gid].ravel())
        cols = rigid_columns(mesh.dof_coords[nodes], state.centers[k])
        v = cols @ np.concatenate([U, R])
        worst = max(worst, float(np.abs(state.u.values[nodes] - v).max()))
    return worst


# ---------------------------------------------------------- diagnostics ---


def pressure_basket(lengths):
    """Five fixed smooth test functions on the box."""
    L = np.asarray(lengths, dtype=float)

    def s(X):
        return np.prod(np.sin(np.pi * X / L), axis=1)

    return [
        ("sin_product", s),
        ("cos_x1", lambda X: np.cos(np.pi * X[:, 0] / L[0])),
        ("cos_xd", lambda X: np.cos(np.pi * X[:, -1] / L[-1])),
        ("monomial", lambda X: np.prod(X / L, axis=1)),
        ("cos2_cos", lambda X: np.cos(2 * np.pi * X[:, 0] / L[0]) * np.cos(np.pi * X[:, 1] / L[1])),
    ]


def corrector_norms(state: DnsState, rec: ReconstructedFields, config: MacroConfig) -> dict:
    """Corrector norms of one eps run, evaluated with 3-point Gauss on the fine mesh."""
    mesh = state.mesh
    d = mesh.dim
    ref = ReferenceElement(mesh.h, NORM_ORDER)
    X = quadrature_points(mesh, ref)
    ne, nq = X.shape[:2]
    pts = X.reshape(-1, d)

    def q(a):
        return a.reshape((ne, nq) + a.shape[1:])

    gphi = state.phi.grad_at_quadrature(ref)
    g0 = q(rec.grad_phi0(pts))
    gy = q(rec.grad_y_phi1(pts))
    out = {
        "eps": state.eps,
        "potential_corrector": l2_norm(ref, gphi - g0 - gy),
        "potential_ablation": l2_norm(ref, gphi - g0),
    }
    mu = np.broadcast_to(state.material.mu[:, None], (ne, nq))
    T = maxwell_stress(gphi, mu, config.S)
    T0 = q(rec.T0(pts))
    out["maxwell_gap_l1"] = l1_norm(ref, T - T0)
    out["maxwell_gap_l2"] = l2_norm(ref, T - T0)
    if state.u is not None:
        Du = state.u.sym_grad_at_quadrature(ref)
        D0 = q(rec.strain_u0(pts))
        Dy = q(rec.strain_y_u1(pts))
        out["velocity_corrector"] = l2_norm(ref, Du - D0 - Dy)
        out["velocity_ablation"] = l2_norm(ref, Du - D0)
        u_q = state.u.at_quadrature(ref)
        gu = state.u.grad_at_quadrature(ref)
        p_q = state.p.at_quadrature(ref)
        h1 = np.sqrt(l2_norm(ref, u_q) ** 2 + l2_norm(ref, gu) ** 2)
        out["u_H1"] = h1
        out["p_L2"] = l2_norm(ref, p_q)
        out["a_priori"] = h1 + out["p_L2"]
        pi0 = q(rec.macro.pi0.evaluate(pts))
        diff = p_q - pi0
        out["pressure_weak"] = {
            name: float(np.einsum("q,eq->", ref.wdet, diff * q(fn(pts)))) for name, fn in pressure_basket(config.lengths)
        }
        out["energy_identity"] = state.info["flow"]["energy_identity"]["defect"]
        out["rigid_defect"] = rigid_defect(state) if state.rigid else 0.0
        if state.material.has_solid:
            out["solid_pressure_max"] = float(np.abs(p_q[state.material.solid]).max())
        else:
            out["solid_pressure_max"] = 0.0
    return out


@dataclass
class CorrectorReport:
    rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def append(self, row: dict, seconds: float = 0.0) -> None:
        self.rows.append(row)
        self.timings.append({"eps": row["eps"], "seconds": seconds})

    def column(self, key: str) -> list:
        return [r[key] for r in self.rows]

    def to_dict(self) -> dict:
        return {"rows": self.rows, "notes": self.notes}


def run_dns(eps: float, spec: GeometrySpec, config: MacroConfig, n_cell: int, flow: bool = True,
            method: str = "minres") -> DnsState:
    st = solve_dns_potential(eps, spec, config, n_cell)
    if flow:
        solve_dns_flow(st, config, method)
    return st


def corrector_study(eps_list, spec: GeometrySpec, cells: CellSolutionSet, macro: MacroState,
                    config: MacroConfig, n_cell: int = 16, method: str = "minres",
                    threads: int = 1) -> CorrectorReport:
    """DNS for every eps and the norms against the reconstructed two-scale fields."""
    def one(eps):
        t0 = time.perf_counter()
        st = run_dns(eps, spec, config, n_cell, True, method)
        rec = ReconstructedFields(macro, cells, eps)
        row = corrector_norms(st, rec, config)
        return row, time.perf_counter() - t0

    eps_list = [float(e) for e in eps_list]
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, eps_list))
    else:
        results = [one(e) for e in eps_list]
    rep = CorrectorReport()
    for row, secs in results:
        rep.append(row, secs)
    rep.notes.append("no convergence rate is known for these norms; ratio thresholds are engineering choices")
    return rep
