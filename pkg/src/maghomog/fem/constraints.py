"""Constraint bookkeeping and elimination.

Periodicity is handled by the compact node numbering of the mesh. Dirichlet
dofs and rigid-body groups are eliminated algebraically through a sparse
prolongation  u = T z + c  where z holds the free dofs followed by the rigid
unknowns (U, R) of each group, and c is a lifting of prescribed values.
Quotient spaces (zero-mean fields) are not removed from the system; their
nullspace vectors are handed to the solvers, which project them out.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import InconsistentConstraints
from ..grid import PeriodicMesh

FREE, DIRICHLET, RIGID = 0, 1, 2


def n_rotations(d: int) -> int:
    return 1 if d == 2 else 3


def rigid_columns(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Velocity of unit rigid motions at points x.

    Returns (npts, d, d + nrot): column j is translation e_j for j < d, then
    the rotations R x (x - C) for the unit angular velocities.
    """
    x = np.atleast_2d(x)
    npts, d = x.shape
    r = x - center
    nr = n_rotations(d)
    out = np.zeros((npts, d, d + nr))
    for c in range(d):
        out[:, c, c] = 1.0
    if d == 2:
        out[:, 0, 2] = -r[:, 1]
        out[:, 1, 2] = r[:, 0]
    else:
        # columns d+0, d+1, d+2 are R = e_0, e_1, e_2
        out[:, 1, 3] = -r[:, 2]
        out[:, 2, 3] = r[:, 1]
        out[:, 0, 4] = r[:, 2]
        out[:, 2, 4] = -r[:, 0]
        out[:, 0, 5] = -r[:, 1]
        out[:, 1, 5] = r[:, 0]
    return out


@dataclass
class RigidGroup:
    """One particle: its nodes (compact numbering) and centre of mass."""

    gid: int
    nodes: np.ndarray
    center: np.ndarray
    offset: int = -1  # first column of (U, R) in the reduced vector

    def n_unknowns(self, d: int) -> int:
        return d + n_rotations(d)


@dataclass
class DofMap:
    """Roles of the vector (or scalar) dofs of one field on one mesh."""

    mesh: PeriodicMesh
    ncomp: int
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    rigid_groups: list = field(default_factory=list)

    def __post_init__(self):
        nn = self.mesh.n_dof_nodes
        role = np.zeros(nn, dtype=np.int8)
        owner = np.full(nn, -1, dtype=np.int64)
        dn = np.unique(np.asarray(self.dirichlet_nodes, dtype=np.int64))
        role[dn] = DIRICHLET
        for g in self.rigid_groups:
            nodes = np.asarray(g.nodes, dtype=np.int64)
            if np.any(role[nodes] == DIRICHLET):
                raise InconsistentConstraints(f"node(s) of particle {g.gid} are also Dirichlet nodes")
            if np.any(owner[nodes] >= 0):
                raise InconsistentConstraints(f"node(s) of particle {g.gid} already belong to another particle")
            if self.ncomp != self.mesh.dim:
                raise InconsistentConstraints("rigid groups need a vector field")
            role[nodes] = RIGID
            owner[nodes] = g.gid
        self.node_role = role
        self.node_owner = owner
        self.free_nodes = np.flatnonzero(role == FREE)
        free_dofs = (self.free_nodes[:, None] * self.ncomp + np.arange(self.ncomp)).ravel()
        self.free_dofs = free_dofs
        off = free_dofs.size
        for g in self.rigid_groups:
            g.offset = off
            off += g.n_unknowns(self.mesh.dim)
        self.n_reduced = off
        self.T = self._prolongation()

    @property
    def n_full(self) -> int:
        return self.mesh.n_dof_nodes * self.ncomp

    @property
    def n_periodic_slaves(self) -> int:
        return (self.mesh.n_nodes - self.mesh.n_dof_nodes) * self.ncomp

    def dof_roles(self) -> np.ndarray:
        return np.repeat(self.node_role, self.ncomp)

    def _prolongation(self) -> sp.csr_matrix:
        rows = [self.free_dofs]
        cols = [np.arange(self.free_dofs.size)]
        vals = [np.ones(self.free_dofs.size)]
        d = self.mesh.dim
        X = self.mesh.dof_coords
        for g in self.rigid_groups:
            nodes = np.asarray(g.nodes, dtype=np.int64)
            R = rigid_columns(X[nodes], np.asarray(g.center, float))
            nu = R.shape[2]
            rr = (nodes[:, None, None] * d + np.arange(d)[None, :, None]) * np.ones((1, 1, nu), dtype=np.int64)
            cc = np.broadcast_to(g.offset + np.arange(nu)[None, None, :], R.shape)
            mask = R != 0.0
            rows.append(rr[mask])
            cols.append(cc[mask])
            vals.append(R[mask])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_full, self.n_reduced))

    def translations(self) -> np.ndarray:
        """Reduced-space vectors representing constant fields, shape (ncomp, n_reduced)."""
        out = np.zeros((self.ncomp, self.n_reduced))
        nf = self.free_nodes.size
        for c in range(self.ncomp):
            out[c, np.arange(nf) * self.ncomp + c] = 1.0
            for g in self.rigid_groups:
                out[c, g.offset + c] = 1.0
        return out

    def expand(self, z: np.ndarray, lift: np.ndarray | None = None) -> np.ndarray:
        u = self.T @ z
        if lift is not None:
            u = u + lift
        return u

    def rigid_values(self, z: np.ndarray) -> list:
        """(U, R) for every rigid group."""
        d = self.mesh.dim
        out = []
        for g in self.rigid_groups:
            seg = z[g.offset:g.offset + g.n_unknowns(d)]
            out.append((seg[:d].copy(), seg[d:].copy()))
        return out


class PressureSpace:
    """Nodal pressure on the nodes of the active (fluid) elements."""

    def __init__(self, mesh: PeriodicMesh, active_elements: np.ndarray | None = None):
        self.mesh = mesh
        if active_elements is None:
            active_elements = np.ones(mesh.n_elements, dtype=bool)
        self.active = np.asarray(active_elements, dtype=bool)
        used = np.zeros(mesh.n_dof_nodes, dtype=bool)
        used[mesh.dof_conn[self.active].ravel()] = True
        self.nodes = np.flatnonzero(used)
        n = self.nodes.size
        self.P = sp.csr_matrix((np.ones(n), (self.nodes, np.arange(n))), shape=(mesh.n_dof_nodes, n))

    @property
    def n_reduced(self) -> int:
        return self.nodes.size

    def expand(self, p: np.ndarray) -> np.ndarray:
        return self.P @ p


def build_rigid_groups(mesh: PeriodicMesh, solid: np.ndarray, labels: np.ndarray | None = None) -> list:
    """One rigid group per connected particle label (element-wise labels, -1 = fluid).

    Without labels every solid element belongs to group 0. The centre is the
    centroid of the group's solid elements.
    """
    solid = np.asarray(solid, dtype=bool)
    if labels is None:
        labels = np.where(solid, 0, -1)
    groups = []
    for gid in np.unique(labels[labels >= 0]):
        elems = np.flatnonzero(labels == gid)
        nodes = np.unique(mesh.dof_conn[elems].ravel())
        center = mesh.centroids[elems].mean(axis=0)
        groups.append(RigidGroup(int(gid), nodes, center))
    return groups


@dataclass
class ReducedSaddle:
    """Symmetric reduced saddle system  [[A, -B^T], [-B, -C]] [z; p] = rhs."""

    K: sp.csr_matrix
    rhs: np.ndarray
    nullspace: np.ndarray  # rows are nullspace vectors
    vdofs: DofMap
    pspace: PressureSpace
    lift: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    pressure_nullspace: bool = True

    @property
    def nu(self) -> int:
        return self.vdofs.n_reduced

    @property
    def size(self) -> int:
        return self.K.shape[0]

    @property
    def effective_size(self) -> int:
        """Unknowns left once every quotient (mean-value) condition is counted."""
        return self.size - self.nullspace.shape[0]

    def split(self, x: np.ndarray):
        return x[: self.nu], x[self.nu:]

    def expand(self, x: np.ndarray):
        z, p = self.split(x)
        return self.vdofs.expand(z, self.lift), self.pspace.expand(p)


def apply_constraints(
    A: sp.spmatrix,
    Bdiv: sp.spmatrix,
    Cstab: sp.spmatrix,
    vdofs: DofMap,
    pspace: PressureSpace,
    f: np.ndarray | None = None,
    g: np.ndarray | None = None,
    lift: np.ndarray | None = None,
    velocity_nullspace: bool = True,
    pressure_nullspace: bool = True,
) -> ReducedSaddle:
    """Eliminate periodic, Dirichlet and rigid constraints from a Stokes system.

    f is the full velocity load, g the full right-hand side of the
    divergence row (so the system reads A u - B^T p = f, -B u - C p = g), and
    lift holds prescribed velocity values on constrained dofs.
    """
    T = vdofs.T
    P = pspace.P
    nfull = vdofs.n_full
    f = np.zeros(nfull) if f is None else np.asarray(f, float)
    g = np.zeros(P.shape[0]) if g is None else np.asarray(g, float)
    lift = np.zeros(nfull) if lift is None else np.asarray(lift, float)
    roles = vdofs.dof_roles()
    if np.any(lift[roles == FREE] != 0.0):
        raise InconsistentConstraints("lifting must vanish on free dofs")
    Ar = (T.T @ A @ T).tocsr()
    Br = (P.T @ Bdiv @ T).tocsr()
    Cr = (P.T @ Cstab @ P).tocsr()
    fr = T.T @ (f - A @ lift)
    gr = P.T @ (g + Bdiv @ lift)
    K = sp.bmat([[Ar, -Br.T], [-Br, -Cr]], format="csr")
    nu, npr = Ar.shape[0], Cr.shape[0]
    null = []
    if velocity_nullspace:
        for t in vdofs.translations():
            null.append(np.concatenate([t, np.zeros(npr)]))
    if pressure_nullspace:
        null.append(np.concatenate([np.zeros(nu), np.ones(npr)]))
    null = np.array(null).reshape(len(null), nu + npr)
    return ReducedSaddle(K, np.concatenate([fr, gr]), null, vdofs, pspace, lift, Ar, Br, Cr, fr, gr,
                         pressure_nullspace)


def reduce_spd(A: sp.spmatrix, f: np.ndarray, dofs: DofMap, lift: np.ndarray | None = None):
    """Reduced operator and load for a symmetric scalar or vector problem."""
    T = dofs.T
    lift = np.zeros(dofs.n_full) if lift is None else lift
    return (T.T @ A @ T).tocsr(), T.T @ (f - A @ lift)
