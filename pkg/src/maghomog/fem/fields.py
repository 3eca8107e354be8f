"""Discrete Q1 fields with point and quadrature-point evaluation."""
from __future__ import annotations

import numpy as np

from ..grid import PeriodicMesh
from .reference import ReferenceElement, shape_gradients, shape_values


class ScalarField:
    """Nodal Q1 scalar in the compact numbering of ``mesh``.

    With ``active`` given (boolean per element) the field is taken as zero
    on inactive elements; pressures use this to vanish inside particles.
    """

    ncomp = 1

    def __init__(self, mesh: PeriodicMesh, values, active=None):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float).reshape(mesh.n_dof_nodes)
        self.active = None if active is None else np.asarray(active, dtype=bool)

    def _local(self):
        return self.values[self.mesh.dof_conn]

    def _mask(self, elem):
        if self.active is None:
            return np.ones(len(elem))
        return self.active[elem].astype(float)

    def evaluate(self, points) -> np.ndarray:
        elem, xi = self.mesh.locate(points)
        N = shape_values(xi)
        return np.einsum("pa,pa->p", N, self._local()[elem]) * self._mask(elem)

    def gradient(self, points) -> np.ndarray:
        elem, xi = self.mesh.locate(points)
        G = shape_gradients(xi) / self.mesh.h
        return np.einsum("pak,pa->pk", G, self._local()[elem]) * self._mask(elem)[:, None]

    def at_quadrature(self, ref: ReferenceElement) -> np.ndarray:
        out = self._local() @ ref.N.T
        if self.active is not None:
            out = out * self.active[:, None]
        return out

    def grad_at_quadrature(self, ref: ReferenceElement) -> np.ndarray:
        out = np.einsum("qak,ea->eqk", ref.G, self._local())
        if self.active is not None:
            out = out * self.active[:, None, None]
        return out

    def mean(self, order: int = 2) -> float:
        ref = ReferenceElement(self.mesh.h, order)
        return float(np.einsum("q,eq->", ref.wdet, self.at_quadrature(ref)) / self.mesh.volume)

    def nodal(self) -> np.ndarray:
        """Values on every raw node (periodic copies included)."""
        return self.mesh.expand(self.values)


PressureField = ScalarField


class VectorField:
    """Nodal Q1 vector field, dofs interleaved as node * d + component."""

    def __init__(self, mesh: PeriodicMesh, values):
        self.mesh = mesh
        d = mesh.dim
        self.values = np.asarray(values, dtype=float).reshape(mesh.n_dof_nodes, d)

    @property
    def ncomp(self):
        return self.mesh.dim

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _local(self):
        return self.values[self.mesh.dof_conn]  # (ne, nen, d)

    def evaluate(self, points) -> np.ndarray:
        elem, xi = self.mesh.locate(points)
        N = shape_values(xi)
        return np.einsum("pa,pac->pc", N, self._local()[elem])

    def gradient(self, points) -> np.ndarray:
        """grad[p, i, k] = d u_i / d x_k."""
        elem, xi = self.mesh.locate(points)
        G = shape_gradients(xi) / self.mesh.h
        return np.einsum("pak,pai->pik", G, self._local()[elem])

    def sym_gradient(self, points) -> np.ndarray:
        g = self.gradient(points)
        return 0.5 * (g + np.swapaxes(g, 1, 2))

    def at_quadrature(self, ref: ReferenceElement) -> np.ndarray:
        return np.einsum("qa,eac->eqc", ref.N, self._local())

    def grad_at_quadrature(self, ref: ReferenceElement) -> np.ndarray:
        return np.einsum("qak,eai->eqik", ref.G, self._local())

    def sym_grad_at_quadrature(self, ref: ReferenceElement) -> np.ndarray:
        g = self.grad_at_quadrature(ref)
        return 0.5 * (g + np.swapaxes(g, 2, 3))

    def div_at_quadrature(self, ref: ReferenceElement) -> np.ndarray:
        return np.trace(self.grad_at_quadrature(ref), axis1=2, axis2=3)

    def mean(self, order: int = 2) -> np.ndarray:
        ref = ReferenceElement(self.mesh.h, order)
        return np.einsum("q,eqc->c", ref.wdet, self.at_quadrature(ref)) / self.mesh.volume

    def nodal(self) -> np.ndarray:
        return self.values[self.mesh.compact]


def integrate(ref: ReferenceElement, values_q: np.ndarray, elements=None) -> np.ndarray:
    """Integral of quadrature-point data (ne, nq, ...) over the chosen elements."""
    v = values_q if elements is None else values_q[elements]
    return np.tensordot(ref.wdet, v.sum(axis=0), axes=(0, 0))


def l2_norm(ref: ReferenceElement, values_q: np.ndarray, elements=None) -> float:
    v = values_q if elements is None else values_q[elements]
    sq = v.reshape(v.shape[0], v.shape[1], -1) ** 2
    return float(np.sqrt(np.einsum("q,eqi->", ref.wdet, sq)))


def l1_norm(ref: ReferenceElement, values_q: np.ndarray, elements=None) -> float:
    """L1 norm of a tensor field using the pointwise Frobenius norm."""
    v = values_q if elements is None else values_q[elements]
    pt = np.sqrt((v.reshape(v.shape[0], v.shape[1], -1) ** 2).sum(axis=2))
    return float(np.einsum("q,eq->", ref.wdet, pt))


def quadrature_points(mesh: PeriodicMesh, ref: ReferenceElement) -> np.ndarray:
    """Physical coordinates of every quadrature point, shape (ne, nq, d)."""
    lo = mesh.element_index * mesh.h
    return lo[:, None, :] + ref.points[None, :, :] * mesh.h
