"""Tensor-product Gauss rules and the Q1 reference element on [0,1]^d.

Every element of a uniform grid is a translate of the same box, so element
matrices are built once from the quantities below and reused.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_rule(npts: int, d: int):
    """Gauss-Legendre points in [0,1]^d (first axis fastest) and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([x] * d), indexing="ij")
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    pts = np.stack([g.ravel(order="F") for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel(order="F") for g in wgrids], axis=1), axis=1)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def _bits(d):
    return np.array([[(a >> k) & 1 for k in range(d)] for a in range(2 ** d)])


def shape_values(xi: np.ndarray) -> np.ndarray:
    """Q1 basis values, shape (npts, 2^d), at reference points xi of shape (npts, d)."""
    xi = np.atleast_2d(xi)
    bits = _bits(xi.shape[1])
    # factor per axis: xi if bit set, else 1 - xi
    f = np.where(bits[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    return np.prod(f, axis=2)


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Reference-coordinate derivatives, shape (npts, 2^d, d)."""
    xi = np.atleast_2d(xi)
    npts, d = xi.shape
    bits = _bits(d)
    f = np.where(bits[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])
    df = np.where(bits == 1, 1.0, -1.0)
    out = np.empty((npts, bits.shape[0], d))
    for k in range(d):
        others = np.prod(np.delete(f, k, axis=2), axis=2)
        out[:, :, k] = df[None, :, k] * others
    return out


def strain_operator(grad: np.ndarray) -> np.ndarray:
    """Map nodal velocity dofs (a*d + c) to the symmetric gradient.

    grad has shape (nq, nen, d) in physical coordinates; the result E has
    shape (nq, d*d, nen*d) with E[q, k*d + l] giving D(u)_kl.
    """
    nq, nen, d = grad.shape
    E = np.zeros((nq, d, d, nen, d))
    for k in range(d):
        for l in range(d):
            E[:, k, l, :, k] += 0.5 * grad[:, :, l]
            E[:, k, l, :, l] += 0.5 * grad[:, :, k]
    return E.reshape(nq, d * d, nen * d)


class ReferenceElement:
    """Q1 element matrices for a box element with spacing h."""

    def __init__(self, h, order: int = 2):
        self.h = np.asarray(h, dtype=float)
        self.d = self.h.size
        self.nen = 2 ** self.d
        self.order = order
        self.points, self.weights = gauss_rule(order, self.d)
        self.vol = float(np.prod(self.h))
        self.N = shape_values(self.points)
        self.G = shape_gradients(self.points) / self.h
        self.E = strain_operator(self.G)
        # physical integration weights
        self.wdet = self.weights * self.vol

    @property
    def nq(self) -> int:
        return self.points.shape[0]

    def laplacian(self) -> np.ndarray:
        return np.einsum("q,qak,qbk->ab", self.wdet, self.G, self.G)

    def anisotropic_laplacian(self, M: np.ndarray) -> np.ndarray:
        return np.einsum("q,qak,kl,qbl->ab", self.wdet, self.G, M, self.G)

    def mass(self) -> np.ndarray:
        return np.einsum("q,qa,qb->ab", self.wdet, self.N, self.N)

    def lumped_mass(self) -> np.ndarray:
        return np.einsum("q,qa->a", self.wdet, self.N)

    def sym_grad_form(self, T4: np.ndarray | None = None) -> np.ndarray:
        """Element matrix of  int D(v) : T4 : D(u); T4 = identity on d x d gives D:D."""
        d = self.d
        if T4 is None:
            Tm = np.eye(d * d)
        else:
            Tm = np.asarray(T4).reshape(d * d, d * d)
        return np.einsum("q,qip,ij,qjr->pr", self.wdet, self.E, Tm, self.E)

    def divergence(self) -> np.ndarray:
        """Element matrix B[a, b*d + c] = int N_a d_c N_b."""
        out = np.einsum("q,qa,qbc->abc", self.wdet, self.N, self.G)
        return out.reshape(self.nen, self.nen * self.d)

    def load(self) -> np.ndarray:
        """int N_a over the element."""
        return self.lumped_mass()
