"""Homogenized macro problems and first-order two-scale reconstruction.

The macro system is solved on a box: first the effective magnetostatics
(Neumann data k . n), then the anisotropic Stokes system with the effective
Maxwell stress S * Bs^ij d_i phi0 d_j phi0, using the convention

    -div[(2/Re) N:D(u0) - pi0 I + S Bs^ij d_i phi0 d_j phi0] = g / Fr^2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cell import CellSolutionSet, legendre_hadamard_min
from .errors import IncompatibleFlux, NotSPD, ValidationError
from .fem import (
    DofMap,
    PressureSpace,
    ReferenceElement,
    ScalarField,
    VectorField,
    apply_constraints,
    assemble_anisotropic_diffusion,
    assemble_body_force,
    assemble_boundary_flux,
    assemble_divergence,
    assemble_pressure_stabilization,
    assemble_stress_load,
    assemble_tensor_viscosity,
    energy_identity,
    lumped_mass,
    solve_saddle,
    solve_spd,
)
from .grid import PeriodicMesh, build_box_mesh

log = logging.getLogger(__name__)

SIGN_CONVENTION = "-div[(2/Re) N:D(u0) - pi0 I + S Bs d_i phi0 d_j phi0] = g/Fr^2"


# ----------------------------------------------------------- k fields ---


def make_k_field(spec: dict, lengths) -> Callable:
    """Boundary flux field k(x) from a config dict.

    Kinds: ``constant`` (key ``vector``), ``trig`` (solenoidal field
    k = (d_2 psi, -d_1 psi, 0...) with psi = a cos(pi x_1/L_1) cos(pi x_2/L_2),
    key ``amplitude``) and ``linear`` (k = M x + b, keys ``matrix``, ``vector``;
    compatible only when trace M = 0).
    """
    kind = spec.get("type", "constant")
    L = np.asarray(lengths, dtype=float)
    d = L.size
    if kind == "constant":
        v = np.asarray(spec.get("vector", np.eye(d)[0]), dtype=float)
        if v.size != d:
            raise ValidationError(f"k vector must have {d} components")
        return lambda X: np.broadcast_to(v, (np.atleast_2d(X).shape[0], d)).copy()
    if kind == "trig":
        a = float(spec.get("amplitude", 1.0))

        def k(X):
            X = np.atleast_2d(X)
            s1, s2 = np.pi * X[:, 0] / L[0], np.pi * X[:, 1] / L[1]
            out = np.zeros_like(X)
            out[:, 0] = -a * np.pi / L[1] * np.cos(s1) * np.sin(s2)
            out[:, 1] = a * np.pi / L[0] * np.sin(s1) * np.cos(s2)
            return out
        return k
    if kind == "linear":
        M = np.asarray(spec.get("matrix", np.zeros((d, d))), dtype=float).reshape(d, d)
        b = np.asarray(spec.get("vector", np.zeros(d)), dtype=float)
        return lambda X: np.atleast_2d(X) @ M.T + b
    raise ValidationError(f"unknown k field type {kind!r}")


@dataclass
class MacroConfig:
    Re: float = 1.0
    Fr: float = 1.0
    S: float = 1.0
    g: tuple = (0.0, 0.0)
    k: dict = field(default_factory=lambda: {"type": "constant", "vector": [1.0, 0.0]})
    lengths: tuple = (1.0, 1.0)
    n: int = 64
    tol: float = 1e-8

    def __post_init__(self):
        if not self.Re > 0:
            raise ValidationError("Re must be positive")
        if not self.Fr > 0:
            raise ValidationError("Fr must be positive")
        if not self.S >= 0:
            raise ValidationError("S must be non-negative")
        if len(self.g) != len(self.lengths):
            raise ValidationError("g and lengths must have the same dimension")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    def k_field(self) -> Callable:
        return make_k_field(self.k, self.lengths)

    def mesh(self) -> PeriodicMesh:
        return build_box_mesh(self.dim, self.lengths, self.n)


# ---------------------------------------------------------- potential ---


def check_spd(M: np.ndarray, name: str = "mu_eff") -> None:
    M = np.asarray(M, dtype=float)
    if np.abs(M - M.T).max() > 1e-8 * max(np.abs(M).max(), 1e-300):
        raise NotSPD(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    if not lam > 0:
        raise NotSPD(f"{name} has smallest eigenvalue {lam:.3e}")


def neumann_potential(mesh: PeriodicMesh, K, kfun: Callable, tol: float):
    """Zero-mean solution of the pure Neumann problem  K phi = int (k.n) tau ds."""
    F, total, total_abs = assemble_boundary_flux(mesh, kfun)
    scale = max(total_abs, 1e-300)
    if abs(total) > 1e-10 * scale:
        raise IncompatibleFlux(f"boundary flux of k integrates to {total:.3e} (|k.n| integral {total_abs:.3e})")
    F = F - F.mean()
    ones = np.ones((1, mesh.n_dof_nodes))
    phi, info = solve_spd(K, F, tol, nullspace=ones, return_info=True)
    w = lumped_mass(mesh)
    phi = phi - (w @ phi) / w.sum()
    return phi, info, total


def solve_macro_potential(mu_eff: np.ndarray, config: MacroConfig, mesh: PeriodicMesh | None = None):
    """phi0 with -div(mu_eff grad phi0) = 0, (mu_eff grad phi0).n = k.n, zero mean."""
    check_spd(mu_eff)
    mesh = config.mesh() if mesh is None else mesh
    K = assemble_anisotropic_diffusion(mesh, np.asarray(mu_eff, dtype=float))
    phi, info, _ = neumann_potential(mesh, K, config.k_field(), config.tol)
    return ScalarField(mesh, phi)


# ---------------------------------------------------------------- flow ---


def effective_maxwell_stress(B_sym: np.ndarray, grad_phi: np.ndarray, S: float) -> np.ndarray:
    """S * Bs[i,j,k,l] g_i g_j for gradients g of shape (..., d)."""
    return S * np.einsum("ijkl,...i,...j->...kl", B_sym, grad_phi, grad_phi)


@dataclass
class MacroState:
    mesh: PeriodicMesh
    phi0: ScalarField
    u0: VectorField
    pi0: ScalarField
    config: MacroConfig
    N: np.ndarray
    B_sym: np.ndarray
    info: dict = field(default_factory=dict)

    def maxwell_stress(self, ref: ReferenceElement | None = None) -> np.ndarray:
        ref = ReferenceElement(self.mesh.h) if ref is None else ref
        return effective_maxwell_stress(self.B_sym, self.phi0.grad_at_quadrature(ref), self.config.S)

    def element_maxwell_stress(self) -> np.ndarray:
        ref = ReferenceElement(self.mesh.h)
        T = self.maxwell_stress(ref)
        return np.einsum("q,eqkl->ekl", ref.weights, T)


def macro_flow_system(mesh: PeriodicMesh, N, B_sym, phi0: ScalarField, config: MacroConfig):
    d = mesh.dim
    T4 = np.asarray(N, dtype=float).transpose(2, 3, 0, 1)
    A = assemble_tensor_viscosity(mesh, T4, 2.0 / config.Re)
    Bdiv = assemble_divergence(mesh)
    C = assemble_pressure_stabilization(mesh)
    ref = ReferenceElement(mesh.h)
    f = assemble_body_force(mesh, np.asarray(config.g, float) / config.Fr ** 2)
    if config.S != 0.0:
        M = effective_maxwell_stress(B_sym, phi0.grad_at_quadrature(ref), config.S)
        f = f - assemble_stress_load(mesh, M, ref)
    boundary = np.flatnonzero(mesh.boundary_nodes)
    vd = DofMap(mesh, d, dirichlet_nodes=boundary)
    ps = PressureSpace(mesh)
    return apply_constraints(A, Bdiv, C, vd, ps, f=f, velocity_nullspace=False, pressure_nullspace=True)


def solve_macro_flow(N: np.ndarray, B_sym: np.ndarray, phi0: ScalarField, config: MacroConfig,
                     method: str = "minres") -> MacroState:
    """(u0, pi0): zero velocity on the boundary, zero-mean pressure."""
    if legendre_hadamard_min(N) <= 0:
        raise NotSPD("effective viscosity fails the Legendre-Hadamard condition")
    mesh = phi0.mesh
    system = macro_flow_system(mesh, N, B_sym, phi0, config)
    u, p, x, info = solve_saddle(system, config.tol, method=method, viscosity=1.0 / config.Re,
                                 return_info=True)
    meta = {"iterations": info.iterations, "residual": info.residual,
            "energy_identity": energy_identity(system, x), "sign_convention": SIGN_CONVENTION}
    return MacroState(mesh, phi0, VectorField(mesh, u), ScalarField(mesh, p), config,
                      np.asarray(N), np.asarray(B_sym), meta)


def solve_macro(cells: CellSolutionSet, config: MacroConfig, method: str = "minres") -> MacroState:
    """Potential then flow, with the tensors of a cell solution set."""
    t = cells.tensors
    phi0 = solve_macro_potential(t.mu_eff, config)
    return solve_macro_flow(t.N, t.B_sym, phi0, config, method)


# ------------------------------------------------------ reconstruction ---


class ReconstructedFields:
    """First-order two-scale fields evaluated at x with y = x / eps mod 1.

    Every method takes points of shape (npts, d).
    """

    def __init__(self, macro: MacroState, cells: CellSolutionSet, eps: float):
        if not eps > 0:
            raise ValueError("eps must be positive")
        self.macro = macro
        self.cells = cells
        self.eps = float(eps)
        self.d = macro.mesh.dim
        c = macro.config
        self.S = c.S
        self.Re = c.Re

    def fast(self, x):
        return np.mod(np.atleast_2d(x) / self.eps, 1.0)

    def grad_phi0(self, x):
        return self.macro.phi0.gradient(x)

    def strain_u0(self, x):
        return self.macro.u0.sym_gradient(x)

    def _coeffs(self, x):
        g = self.grad_phi0(x)
        return self.strain_u0(x), self.S * g[:, :, None] * g[:, None, :]

    def phi1(self, x):
        y = self.fast(x)
        g = self.grad_phi0(x)
        return sum(g[:, i] * self.cells.scalar[i].omega.evaluate(y) for i in range(self.d))

    def grad_y_phi1(self, x):
        y = self.fast(x)
        g = self.grad_phi0(x)
        return sum(g[:, i, None] * self.cells.scalar[i].omega.gradient(y) for i in range(self.d))

    def u1(self, x):
        y = self.fast(x)
        D, G = self._coeffs(x)
        out = np.zeros((y.shape[0], self.d))
        for (i, j), s in self.cells.viscous.items():
            out -= D[:, i, j, None] * s.chi.evaluate(y)
        for (i, j), s in self.cells.magnetic.items():
            out += G[:, i, j, None] * s.xi.evaluate(y)
        return out

    def strain_y_u1(self, x):
        y = self.fast(x)
        D, G = self._coeffs(x)
        out = np.zeros((y.shape[0], self.d, self.d))
        for (i, j), s in self.cells.viscous.items():
            out -= D[:, i, j, None, None] * s.chi.sym_gradient(y)
        for (i, j), s in self.cells.magnetic.items():
            out += G[:, i, j, None, None] * s.xi.sym_gradient(y)
        return out

    def p0(self, x):
        y = self.fast(x)
        D, G = self._coeffs(x)
        out = self.macro.pi0.evaluate(x).copy()
        for (i, j), s in self.cells.viscous.items():
            out += (2.0 / self.Re) * D[:, i, j] * s.q.evaluate(y)
        for (i, j), s in self.cells.magnetic.items():
            out -= G[:, i, j] * s.r.evaluate(y)
        return out

    def T0(self, x):
        y = self.fast(x)
        g = self.grad_phi0(x)
        out = np.zeros((y.shape[0], self.d, self.d))
        for i in range(self.d):
            for j in range(self.d):
                out += self.S * (g[:, i] * g[:, j])[:, None, None] * self.cells.tau_at(y, i, j)
        return out


def reconstruct_first_order(macro: MacroState, cells: CellSolutionSet, eps: float) -> ReconstructedFields:
    return ReconstructedFields(macro, cells, eps)
