"""Structured Q1 meshes of the unit cell and of box macro domains, plus material assignment.

Nodes and elements are numbered with the first axis varying fastest (the same
ordering legacy VTK uses for structured points).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ContrastViolation, InvalidResolution, SolidTouchesBoundary

FLUID = 0
SOLID = 1

SHAPES = ("none", "disk", "layered", "checkerboard")


def _strides(dims):
    out = np.ones(len(dims), dtype=np.int64)
    for k in range(1, len(dims)):
        out[k] = out[k - 1] * dims[k - 1]
    return out


def _grid_indices(dims):
    """All multi-indices of a grid, first axis fastest, shape (prod(dims), d)."""
    grids = np.meshgrid(*[np.arange(m) for m in dims], indexing="ij")
    return np.stack([g.ravel(order="F") for g in grids], axis=1)


class PeriodicMesh:
    """Uniform mesh of quadrilaterals (d=2) or hexahedra (d=3) on a box.

    When ``periodic`` is true the box is the unit cell and nodes on opposite
    faces are identified; ``master`` maps every node to its representative
    and ``dof_conn`` is the connectivity expressed in the compact numbering of
    the distinct nodes. For box meshes the compact numbering is the identity.
    """

    def __init__(self, dim: int, n: Sequence[int], lengths: Sequence[float], periodic: bool):
        self.dim = int(dim)
        self.n = tuple(int(m) for m in n)
        self.lengths = tuple(float(L) for L in lengths)
        self.periodic = bool(periodic)
        self.h = np.array(self.lengths) / np.array(self.n)
        self.node_dims = tuple(m + 1 for m in self.n)

    def __repr__(self):
        kind = "unit-cell" if self.periodic else "box"
        return f"PeriodicMesh({kind}, d={self.dim}, n={self.n}, lengths={self.lengths})"

    # -- sizes ---------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return int(np.prod(self.n))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_dims))

    @property
    def n_dof_nodes(self) -> int:
        """Number of distinct nodes after periodic identification."""
        return int(np.prod(self.n)) if self.periodic else self.n_nodes

    @property
    def element_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def hmax(self) -> float:
        return float(self.h.max())

    # -- geometry ------------------------------------------------------------
    @cached_property
    def node_index(self) -> np.ndarray:
        return _grid_indices(self.node_dims)

    @cached_property
    def element_index(self) -> np.ndarray:
        return _grid_indices(self.n)

    @cached_property
    def coords(self) -> np.ndarray:
        return self.node_index * self.h

    @cached_property
    def centroids(self) -> np.ndarray:
        return (self.element_index + 0.5) * self.h

    @cached_property
    def local_offsets(self) -> np.ndarray:
        """Corner offsets of the reference element; local node a has bits of a."""
        nen = 2 ** self.dim
        return np.array([[(a >> k) & 1 for k in range(self.dim)] for a in range(nen)])

    @cached_property
    def conn(self) -> np.ndarray:
        stride = _strides(self.node_dims)
        base = self.element_index @ stride
        return base[:, None] + (self.local_offsets @ stride)[None, :]

    @cached_property
    def master(self) -> np.ndarray:
        """Node -> master node (raw numbering). Identity for box meshes."""
        if not self.periodic:
            return np.arange(self.n_nodes)
        wrapped = self.node_index % np.array(self.n)
        return wrapped @ _strides(self.node_dims)

    @cached_property
    def compact(self) -> np.ndarray:
        """Node -> index among the distinct (dof-carrying) nodes."""
        if not self.periodic:
            return np.arange(self.n_nodes)
        wrapped = self.node_index % np.array(self.n)
        return wrapped @ _strides(self.n)

    @cached_property
    def dof_conn(self) -> np.ndarray:
        return self.compact[self.conn]

    @cached_property
    def dof_coords(self) -> np.ndarray:
        """Coordinates of the distinct nodes (masters for unit-cell meshes)."""
        if not self.periodic:
            return self.coords
        return _grid_indices(self.n) * self.h

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Nodal values in compact numbering -> values on every raw node."""
        return np.asarray(values)[self.compact]

    # -- boundary ------------------------------------------------------------
    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        idx = self.node_index
        on = np.zeros(self.n_nodes, dtype=bool)
        for k in range(self.dim):
            on |= (idx[:, k] == 0) | (idx[:, k] == self.n[k])
        return on

    def boundary_elements(self, axis: int, side: int) -> np.ndarray:
        """Elements with a face on the box face x_axis = side * L_axis."""
        target = 0 if side == 0 else self.n[axis] - 1
        return np.flatnonzero(self.element_index[:, axis] == target)

    def outward_normal(self, axis: int, side: int) -> np.ndarray:
        nrm = np.zeros(self.dim)
        nrm[axis] = 1.0 if side == 1 else -1.0
        return nrm

    def locate(self, points: np.ndarray):
        """Element ids and reference coordinates in [0,1]^d of the given points.

        Points of a unit-cell mesh are first wrapped into [0,1)^d.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.periodic:
            pts = np.mod(pts, np.array(self.lengths))
        rel = pts / self.h
        idx = np.floor(rel).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.n) - 1)
        xi = rel - idx
        elem = idx @ _strides(self.n)
        return elem, xi


def build_unit_cell_mesh(d: int, n: int) -> PeriodicMesh:
    """Uniform periodic mesh of Y = (0,1)^d with n elements per axis."""
    if d not in (2, 3):
        raise InvalidResolution(f"dimension must be 2 or 3, got {d}")
    if int(n) != n or n < 4:
        raise InvalidResolution(f"resolution must be an integer >= 4, got {n}")
    return PeriodicMesh(d, [n] * d, [1.0] * d, periodic=True)


def build_box_mesh(d: int, lengths: Sequence[float], n) -> PeriodicMesh:
    """Non-periodic mesh of prod_k (0, L_k) with n elements per axis (int or per-axis list)."""
    if d not in (2, 3):
        raise InvalidResolution(f"dimension must be 2 or 3, got {d}")
    ns = [n] * d if np.isscalar(n) else list(n)
    if len(ns) != d or any(int(m) != m or m < 4 for m in ns):
        raise InvalidResolution(f"resolution must be an integer >= 4 per axis, got {n}")
    lengths = [float(L) for L in lengths]
    if len(lengths) != d:
        raise InvalidResolution(f"expected {d} domain lengths, got {len(lengths)}")
    if any(not np.isfinite(L) or L <= 0 for L in lengths):
        raise InvalidResolution(f"domain lengths must be positive, got {lengths}")
    return PeriodicMesh(d, [int(m) for m in ns], lengths, periodic=False)


@dataclass(frozen=True)
class GeometrySpec:
    """Microstructure of one unit cell.

    ``mu`` holds one permeability per phase: for ``disk`` it is
    (fluid, particle); for ``layered`` (below split, above split); for
    ``checkerboard`` (even squares, odd squares); for ``none`` one value.
    ``axis`` is zero-based.
    """

    shape: str = "none"
    mu: tuple = (1.0,)
    radius: float = 0.25
    center: tuple | None = None
    axis: int = 0
    split: float = 0.5
    contrast: float | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        mu = self.mu
        if np.isscalar(mu):
            mu = (float(mu),)
        mu = tuple(float(m) for m in mu)
        if self.shape != "none" and len(mu) == 1:
            mu = (mu[0], mu[0])
        object.__setattr__(self, "mu", mu)
        if any(not np.isfinite(m) or m <= 0 for m in mu):
            raise ContrastViolation(f"permeabilities must be positive, got {mu}")

    @property
    def bound(self) -> float:
        """The contrast bound Lambda (given, or the smallest one admitting every mu)."""
        if self.contrast is not None:
            return float(self.contrast)
        return float(max(max(m, 1.0 / m) for m in self.mu))

    def phase_of(self, y: np.ndarray):
        """(mu, solid flag) for points y of the unit cell (already wrapped)."""
        y = np.atleast_2d(y)
        npts, d = y.shape
        if self.shape == "none":
            return np.full(npts, self.mu[0]), np.zeros(npts, dtype=bool)
        if self.shape == "disk":
            c = np.full(d, 0.5) if self.center is None else np.asarray(self.center, float)
            inside = np.linalg.norm(y - c, axis=1) < self.radius
            return np.where(inside, self.mu[1], self.mu[0]), inside
        if self.shape == "layered":
            upper = y[:, self.axis] >= self.split
            return np.where(upper, self.mu[1], self.mu[0]), np.zeros(npts, dtype=bool)
        parity = np.floor(2.0 * y).astype(int).sum(axis=1) % 2
        return np.where(parity == 1, self.mu[1], self.mu[0]), np.zeros(npts, dtype=bool)


@dataclass(frozen=True, eq=False)
class MaterialField:
    mu: np.ndarray
    solid: np.ndarray
    bound: float
    spec: GeometrySpec = field(default_factory=GeometrySpec)

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    @property
    def has_solid(self) -> bool:
        return bool(self.solid.any())

    def solid_fraction(self) -> float:
        return float(self.solid.mean())

    def mean_mu(self) -> float:
        return float(self.mu.mean())


def assign_material(mesh: PeriodicMesh, spec: GeometrySpec) -> MaterialField:
    """Element-wise permeability and phase by centroid membership."""
    n = np.array(mesh.n)
    if spec.shape in ("layered", "checkerboard", "disk") and not mesh.periodic:
        raise InvalidResolution(f"shape {spec.shape!r} needs a unit-cell mesh")
    if spec.shape == "layered":
        cut = spec.split * n[spec.axis]
        if not 0 <= spec.axis < mesh.dim:
            raise InvalidResolution(f"layer axis {spec.axis} out of range")
        if abs(cut - round(cut)) > 1e-9 or not 0.0 < spec.split < 1.0:
            raise InvalidResolution(
                f"layer split {spec.split} must lie on a grid line strictly inside the cell (n={mesh.n})"
            )
    if spec.shape == "checkerboard" and np.any(n % 2):
        raise InvalidResolution(f"checkerboard needs an even resolution, got {mesh.n}")

    mu, solid = spec.phase_of(mesh.centroids)
    lam = spec.bound
    if np.any(mu < 1.0 / lam - 1e-14) or np.any(mu > lam + 1e-14):
        raise ContrastViolation(f"permeability outside [1/{lam:g}, {lam:g}]")

    if solid.any():
        lo = mesh.element_index[solid] * mesh.h
        hi = lo + mesh.h
        gap = min(lo.min(), (np.array(mesh.lengths) - hi).min())
        if gap < 2.0 * mesh.hmax - 1e-12:
            raise SolidTouchesBoundary(
                f"solid phase comes within {gap:.4g} of the cell boundary; need >= 2h = {2 * mesh.hmax:.4g}"
            )
    mu.setflags(write=False)
    solid.setflags(write=False)
    return MaterialField(mu=mu, solid=solid, bound=lam, spec=spec)


def tile_material(cell: MaterialField, cell_mesh: PeriodicMesh, box: PeriodicMesh) -> MaterialField:
    """Repeat a unit-cell material over a box whose grid conforms to the cells."""
    idx = box.element_index % np.array(cell_mesh.n)
    local = idx @ _strides(cell_mesh.n)
    mu = cell.mu[local]
    solid = cell.solid[local]
    mu.setflags(write=False)
    solid.setflags(write=False)
    return MaterialField(mu=mu, solid=solid, bound=cell.bound, spec=cell.spec)
