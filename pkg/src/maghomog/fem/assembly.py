"""Global sparse assembly of the scalar diffusion, Stokes and load forms.

Global numbering follows ``mesh.dof_conn`` (periodic nodes already merged).
Vector unknowns are interleaved: dof = node * d + component.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from ..grid import MaterialField, PeriodicMesh
from .reference import ReferenceElement

STAB_DELTA = 0.1


def vector_conn(mesh: PeriodicMesh) -> np.ndarray:
    d = mesh.dim
    conn = mesh.dof_conn
    return (conn[:, :, None] * d + np.arange(d)[None, None, :]).reshape(conn.shape[0], -1)


def scatter_matrix(rows_conn, cols_conn, Ke, coef, shape, elements=None) -> sp.csr_matrix:
    """Sum coef[e] * Ke over the chosen elements into a CSR matrix.

    ``Ke`` is one reference matrix (all elements alike) or a stack (ne, r, c).
    """
    if elements is None:
        elements = np.arange(rows_conn.shape[0])
    elements = np.asarray(elements)
    if elements.dtype == bool:
        elements = np.flatnonzero(elements)
    r = rows_conn[elements]
    c = cols_conn[elements]
    nr, nc = r.shape[1], c.shape[1]
    I = np.repeat(r, nc, axis=1).ravel()
    J = np.tile(c, (1, nr)).ravel()
    coef = np.broadcast_to(np.asarray(coef, dtype=float), (rows_conn.shape[0],))[elements]
    if Ke.ndim == 2:
        V = (coef[:, None] * Ke.ravel()[None, :]).ravel()
    else:
        V = (coef[:, None, None] * Ke[elements]).ravel()
    M = sp.coo_matrix((V, (I, J)), shape=shape).tocsr()
    M.sum_duplicates()
    return M


def scatter_vector(conn, Fe, size, elements=None) -> np.ndarray:
    """Sum element vectors Fe (ne_sel, nloc) into a global vector."""
    if elements is None:
        elements = np.arange(conn.shape[0])
    elements = np.asarray(elements)
    if elements.dtype == bool:
        elements = np.flatnonzero(elements)
    out = np.zeros(size)
    np.add.at(out, conn[elements].ravel(), np.asarray(Fe).ravel())
    return out


def _sym_check(A: sp.spmatrix, name: str) -> None:
    if A.nnz == 0:
        return
    amax = abs(A).max()
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > 1e-12 * amax:
        raise AssertionError(f"{name} failed its symmetry check: {asym:.3e} vs {amax:.3e}")


def is_symmetric(A: sp.spmatrix, rtol: float = 1e-12) -> bool:
    if A.nnz == 0:
        return True
    return abs(A - A.T).max() <= rtol * abs(A).max()


def assemble_scalar_diffusion(mesh: PeriodicMesh, mu: MaterialField | np.ndarray | float) -> sp.csr_matrix:
    """Q1 stiffness of  int mu grad(phi) . grad(tau)  with element-wise mu."""
    ref = ReferenceElement(mesh.h)
    coef = mu.mu if isinstance(mu, MaterialField) else mu
    n = mesh.n_dof_nodes
    A = scatter_matrix(mesh.dof_conn, mesh.dof_conn, ref.laplacian(), coef, (n, n))
    _sym_check(A, "diffusion matrix")
    return A


def assemble_anisotropic_diffusion(mesh: PeriodicMesh, M: np.ndarray) -> sp.csr_matrix:
    """Stiffness of  int (M grad phi) . grad tau  for a constant d x d matrix M."""
    ref = ReferenceElement(mesh.h)
    n = mesh.n_dof_nodes
    return scatter_matrix(mesh.dof_conn, mesh.dof_conn, ref.anisotropic_laplacian(M), 1.0, (n, n))


def assemble_mass(mesh: PeriodicMesh, elements=None) -> sp.csr_matrix:
    ref = ReferenceElement(mesh.h)
    n = mesh.n_dof_nodes
    return scatter_matrix(mesh.dof_conn, mesh.dof_conn, ref.mass(), 1.0, (n, n), elements)


def lumped_mass(mesh: PeriodicMesh, elements=None) -> np.ndarray:
    ref = ReferenceElement(mesh.h)
    ne = mesh.n_elements if elements is None else int(np.count_nonzero(elements) if np.asarray(elements).dtype == bool else len(elements))
    Fe = np.broadcast_to(ref.lumped_mass(), (ne, ref.nen))
    return scatter_vector(mesh.dof_conn, Fe, mesh.n_dof_nodes, elements)


def sym_identity(d: int) -> np.ndarray:
    """The rank-4 tensor Q with Q_ijmn = (d_im d_jn + d_in d_jm)/2."""
    I = np.eye(d)
    return 0.5 * (np.einsum("im,jn->ijmn", I, I) + np.einsum("in,jm->ijmn", I, I))


def assemble_tensor_viscosity(mesh: PeriodicMesh, T4: np.ndarray, coef=1.0, elements=None) -> sp.csr_matrix:
    """Matrix of  int coef D(v) : T4 : D(u)  with (T4 : D)_ij = T4_ijmn D_mn."""
    ref = ReferenceElement(mesh.h)
    vc = vector_conn(mesh)
    n = mesh.n_dof_nodes * mesh.dim
    A = scatter_matrix(vc, vc, ref.sym_grad_form(T4), coef, (n, n), elements)
    return A


def assemble_divergence(mesh: PeriodicMesh, elements=None) -> sp.csr_matrix:
    """B with B[q, u] = int q div u over the chosen elements."""
    ref = ReferenceElement(mesh.h)
    vc = vector_conn(mesh)
    shape = (mesh.n_dof_nodes, mesh.n_dof_nodes * mesh.dim)
    return scatter_matrix(mesh.dof_conn, vc, ref.divergence(), 1.0, shape, elements)


def assemble_pressure_stabilization(mesh: PeriodicMesh, elements=None, delta: float = STAB_DELTA) -> sp.csr_matrix:
    """Brezzi-Pitkaranta term  delta h^2 int grad p . grad q  (h = largest spacing)."""
    ref = ReferenceElement(mesh.h)
    n = mesh.n_dof_nodes
    coef = delta * mesh.hmax ** 2
    return scatter_matrix(mesh.dof_conn, mesh.dof_conn, ref.laplacian(), coef, (n, n), elements)


class StokesBlocks(NamedTuple):
    A: sp.csr_matrix
    Bdiv: sp.csr_matrix
    Cstab: sp.csr_matrix


def assemble_stokes(
    mesh: PeriodicMesh,
    phase: MaterialField | None = None,
    viscosity_scale: float = 1.0,
    solid_viscosity: float | None = None,
) -> StokesBlocks:
    """Equal-order Q1/Q1 Stokes blocks over the fluid elements.

    A comes from  2 * viscosity_scale * int D(u):D(v).  With ``solid_viscosity``
    set, A also covers solid elements with that multiplier (the penalty mode);
    the divergence and stabilization blocks always live on the fluid.
    """
    if viscosity_scale <= 0:
        raise ValueError("viscosity_scale must be positive")
    if phase is None:
        fluid = np.ones(mesh.n_elements, dtype=bool)
    else:
        fluid = ~np.asarray(phase.solid)
    coef = np.where(fluid, 2.0 * viscosity_scale, 0.0)
    if solid_viscosity is not None:
        coef = np.where(fluid, coef, 2.0 * viscosity_scale * solid_viscosity)
    active = np.flatnonzero(coef > 0)
    A = assemble_tensor_viscosity(mesh, sym_identity(mesh.dim), coef, active)
    _sym_check(A, "viscous block")
    Bdiv = assemble_divergence(mesh, fluid)
    C = assemble_pressure_stabilization(mesh, fluid)
    return StokesBlocks(A, Bdiv, C)


def assemble_body_force(mesh: PeriodicMesh, g, elements=None) -> np.ndarray:
    """Load vector of  int g . v  for a constant vector g."""
    ref = ReferenceElement(mesh.h)
    g = np.asarray(g, dtype=float)
    Fe_one = (ref.load()[:, None] * g[None, :]).ravel()
    ne = mesh.n_elements
    Fe = np.broadcast_to(Fe_one, (ne, Fe_one.size))
    if elements is not None:
        elements = np.asarray(elements)
        if elements.dtype == bool:
            elements = np.flatnonzero(elements)
        Fe = Fe[elements]
    return scatter_vector(vector_conn(mesh), Fe, mesh.n_dof_nodes * mesh.dim, elements)


def assemble_stress_load(mesh: PeriodicMesh, stress_q: np.ndarray, ref: ReferenceElement | None = None, elements=None) -> np.ndarray:
    """Load vector of  int S : D(v)  from a stress given at quadrature points.

    stress_q has shape (n_elements, nq, d, d) for the rule of ``ref``.
    """
    if ref is None:
        ref = ReferenceElement(mesh.h)
    d = mesh.dim
    S = np.asarray(stress_q).reshape(stress_q.shape[0], ref.nq, d * d)
    if elements is not None:
        elements = np.asarray(elements)
        if elements.dtype == bool:
            elements = np.flatnonzero(elements)
        S = S[elements]
    Fe = np.einsum("q,eqi,qip->ep", ref.wdet, S, ref.E)
    return scatter_vector(vector_conn(mesh), Fe, mesh.n_dof_nodes * d, elements)


def assemble_vector_load(mesh: PeriodicMesh, fun: Callable, order: int = 3) -> np.ndarray:
    """Load vector of  int f . v  for a callable f(x) -> (npts, d)."""
    ref = ReferenceElement(mesh.h, order=order)
    d = mesh.dim
    lo = mesh.element_index * mesh.h
    X = lo[:, None, :] + ref.points[None, :, :] * mesh.h
    f = np.asarray(fun(X.reshape(-1, d))).reshape(mesh.n_elements, ref.nq, d)
    Fe = np.einsum("q,qa,eqc->eac", ref.wdet, ref.N, f).reshape(mesh.n_elements, -1)
    return scatter_vector(vector_conn(mesh), Fe, mesh.n_dof_nodes * d)


def assemble_scalar_load(mesh: PeriodicMesh, fun: Callable, order: int = 3, elements=None) -> np.ndarray:
    """Load vector of  int f tau  for a callable f(x) -> (npts,)."""
    ref = ReferenceElement(mesh.h, order=order)
    d = mesh.dim
    lo = mesh.element_index * mesh.h
    X = lo[:, None, :] + ref.points[None, :, :] * mesh.h
    f = np.asarray(fun(X.reshape(-1, d))).reshape(mesh.n_elements, ref.nq)
    Fe = np.einsum("q,qa,eq->ea", ref.wdet, ref.N, f)
    if elements is not None:
        elements = np.asarray(elements)
        if elements.dtype == bool:
            elements = np.flatnonzero(elements)
        Fe = Fe[elements]
    return scatter_vector(mesh.dof_conn, Fe, mesh.n_dof_nodes, elements)


def face_quadrature(mesh: PeriodicMesh, axis: int, side: int, order: int = 4):
    """Points, weights, element ids and local reference coords on one box face."""
    from .reference import gauss_rule

    d = mesh.dim
    elems = mesh.boundary_elements(axis, side)
    tang = [k for k in range(d) if k != axis]
    pts1, w1 = gauss_rule(order, d - 1)
    xi = np.zeros((pts1.shape[0], d))
    xi[:, tang] = pts1
    xi[:, axis] = float(side)
    area = float(np.prod(mesh.h[tang]))
    lo = mesh.element_index[elems] * mesh.h
    X = lo[:, None, :] + xi[None, :, :] * mesh.h
    return X, w1 * area, elems, xi


def assemble_boundary_flux(mesh: PeriodicMesh, kfun: Callable, order: int = 4):
    """Neumann load  int_{dOmega} (k . n) tau ds  and the discrete total flux.

    Returns (load vector, int k.n ds, int |k.n| ds).
    """
    from .reference import shape_values

    if mesh.periodic:
        raise ValueError("boundary flux needs a box mesh")
    d = mesh.dim
    out = np.zeros(mesh.n_dof_nodes)
    total = 0.0
    total_abs = 0.0
    for axis in range(d):
        for side in (0, 1):
            X, w, elems, xi = face_quadrature(mesh, axis, side, order)
            nrm = mesh.outward_normal(axis, side)
            k = np.asarray(kfun(X.reshape(-1, d))).reshape(X.shape[0], X.shape[1], d)
            kn = k @ nrm
            N = shape_values(xi)
            Fe = np.einsum("q,eq,qa->ea", w, kn, N)
            np.add.at(out, mesh.dof_conn[elems].ravel(), Fe.ravel())
            total += float(np.einsum("q,eq->", w, kn))
            total_abs += float(np.einsum("q,eq->", w, np.abs(kn)))
    return out, total, total_abs
