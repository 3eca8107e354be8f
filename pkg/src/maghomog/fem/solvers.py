"""Krylov and direct solvers for the reduced systems.

Both iterative solvers are deterministic, accept a known nullspace (rows of
``nullspace``) which is projected out of the right-hand side and of the
returned solution, and verify the true residual before returning.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import NoConvergence

log = logging.getLogger(__name__)


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    restarts: int = 0
    method: str = ""


def default_maxiter(n: int) -> int:
    return max(10_000, int(50 * math.sqrt(n)))


class _Projector:
    """Euclidean projection onto the orthogonal complement of a nullspace."""

    def __init__(self, nullspace, n):
        if nullspace is None or len(nullspace) == 0:
            self.Q = None
            return
        N = np.atleast_2d(np.asarray(nullspace, dtype=float))
        if N.shape[1] != n:
            raise ValueError("nullspace vectors have the wrong length")
        q, _ = np.linalg.qr(N.T)
        self.Q = q

    def __call__(self, x):
        if self.Q is None:
            return x
        return x - self.Q @ (self.Q.T @ x)


def _check_tol(tol):
    if not (0.0 < tol <= 1e-4):
        raise ValueError(f"tol must lie in (0, 1e-4], got {tol}")


def solve_spd(A, b, tol: float = 1e-10, nullspace=None, maxiter: int | None = None,
              precond: str = "jacobi", x0=None, return_info: bool = False):
    """Preconditioned conjugate gradients with relative residual <= tol."""
    _check_tol(tol)
    A = sp.csr_matrix(A)
    n = A.shape[0]
    maxiter = default_maxiter(n) if maxiter is None else maxiter
    proj = _Projector(nullspace, n)
    b = proj(np.asarray(b, dtype=float))
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n)
        info = SolveInfo(0, 0.0, method="cg")
        return (x, info) if return_info else x
    if precond == "jacobi":
        diag = A.diagonal().copy()
        diag[diag <= 0] = 1.0
        minv = 1.0 / diag
    else:
        minv = np.ones(n)

    x = np.zeros(n) if x0 is None else proj(np.asarray(x0, dtype=float).copy())
    total = 0
    restarts = 0
    res = np.inf
    while True:
        r = b - A @ x
        r = proj(r)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        if total >= maxiter or restarts > 5:
            raise NoConvergence(
                f"conjugate gradients stopped at relative residual {res:.3e} after {total} iterations",
                residual=float(res), iterations=total)
        inner_tol = 0.5 * tol * bnorm
        z = proj(minv * r)
        p = z.copy()
        rz = r @ z
        best = res
        stall = 0
        while total < maxiter:
            total += 1
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                break
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            rn = np.linalg.norm(r)
            if rn <= inner_tol:
                break
            # singular or indefinite systems: detect stagnation of the residual
            if rn < 0.999 * best * bnorm:
                best = rn / bnorm
                stall = 0
            else:
                stall += 1
                if stall > max(200, n):
                    break
            z = proj(minv * r)
            rz_new = r @ z
            beta = rz_new / rz
            rz = rz_new
            p = z + beta * p
        x = proj(x)
        restarts += 1
        if stall > max(200, n):
            r = proj(b - A @ x)
            res = np.linalg.norm(r) / bnorm
            raise NoConvergence(
                f"conjugate gradients stagnated at relative residual {res:.3e}",
                residual=float(res), iterations=total)
    info = SolveInfo(total, float(res), restarts - 1 if restarts else 0, "cg")
    log.debug("cg: %d iterations, residual %.3e", total, res)
    return (x, info) if return_info else x


def minres(K, b, tol: float = 1e-10, minv=None, nullspace=None, maxiter: int | None = None,
           return_info: bool = False):
    """Preconditioned MINRES for symmetric (possibly indefinite) systems.

    ``minv`` is the inverse of a positive diagonal preconditioner.
    """
    _check_tol(tol)
    K = sp.csr_matrix(K)
    n = K.shape[0]
    maxiter = default_maxiter(n) if maxiter is None else maxiter
    proj = _Projector(nullspace, n)
    b = proj(np.asarray(b, dtype=float))
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n)
        info = SolveInfo(0, 0.0, method="minres")
        return (x, info) if return_info else x
    minv = np.ones(n) if minv is None else np.asarray(minv, dtype=float)

    x = np.zeros(n)
    total = 0
    restarts = 0
    inner = 0.5 * tol
    while True:
        r = proj(b - K @ x)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        if total >= maxiter or restarts > 8:
            raise NoConvergence(
                f"MINRES stopped at relative residual {res:.3e} after {total} iterations",
                residual=float(res), iterations=total)
        dx, its = _minres_sweep(K, r, minv, proj, inner * bnorm / np.linalg.norm(r), maxiter - total)
        x = proj(x + dx)
        total += its
        restarts += 1
        inner *= 0.1
    info = SolveInfo(total, float(res), max(restarts - 1, 0), "minres")
    log.debug("minres: %d iterations, residual %.3e", total, res)
    return (x, info) if return_info else x


def _minres_sweep(K, b, minv, proj, rtol, maxiter):
    """One MINRES run from zero; stops when the preconditioned residual estimate <= rtol."""
    n = b.size
    x = np.zeros(n)
    r1 = b.copy()
    y = proj(minv * r1)
    beta1 = float(r1 @ y)
    if beta1 <= 0:
        return x, 0
    beta1 = math.sqrt(beta1)
    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    eps = np.finfo(float).eps
    itn = 0
    while itn < maxiter:
        itn += 1
        v = y / beta
        y = K @ v
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = proj(minv * r2)
        oldb = beta
        bb = float(r2 @ y)
        if bb < 0:
            break
        beta = math.sqrt(bb)
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        if phibar <= rtol * beta1 or beta <= eps * beta1:
            break
    return x, itn


def saddle_preconditioner(A, C, pressure_mass, viscosity: float = 1.0) -> np.ndarray:
    """Inverse diagonal: diag(A) for velocity, lumped mass / (2 visc) + diag(C) for pressure."""
    da = np.asarray(A.diagonal(), dtype=float).copy()
    da[da <= 0] = 1.0
    dp = np.asarray(pressure_mass, dtype=float) / (2.0 * viscosity) + C.diagonal()
    dp[dp <= 0] = 1.0
    return 1.0 / np.concatenate([da, dp])


def _pins(N: np.ndarray) -> np.ndarray:
    """One dof per nullspace vector such that N[:, pins] is nonsingular."""
    pins = []
    R = np.array(N, dtype=float)
    for k in range(R.shape[0]):
        idx = int(np.argmax(np.abs(R[k])))
        pins.append(idx)
        piv = R[k, idx]
        for l in range(k + 1, R.shape[0]):
            R[l] -= (R[l, idx] / piv) * R[k]
    return np.array(pins)


def solve_direct(K, b, nullspace=None):
    """Sparse LU solve; a known nullspace is fixed by pinning one dof per vector.

    The pinned equations are implied by the others for a consistent
    right-hand side, and the result is projected onto the complement of
    the nullspace afterwards.
    """
    K = sp.csr_matrix(K)
    n = K.shape[0]
    proj = _Projector(nullspace, n)
    b = proj(np.asarray(b, dtype=float))
    if nullspace is None or len(nullspace) == 0:
        return spla.splu(K.tocsc()).solve(b)
    pins = _pins(np.atleast_2d(nullspace))
    keep = np.setdiff1d(np.arange(n), pins)
    Kk = K[keep][:, keep].tocsc()
    x = np.zeros(n)
    x[keep] = spla.splu(Kk).solve(b[keep])
    return proj(x)


def solve_saddle(system, tol: float = 1e-10, method: str = "minres", viscosity: float = 1.0,
                 maxiter: int | None = None, return_info: bool = False):
    """Solve a ReducedSaddle; returns full-length (u, p) with p of zero mean on the fluid.

    The pressure mean is taken with the consistent mass of the active region.
    """
    from .assembly import assemble_mass

    ps = system.pspace
    M = assemble_mass(ps.mesh, ps.active)
    Mr = (ps.P.T @ M @ ps.P).tocsr()
    if method == "direct":
        x = solve_direct(system.K, system.rhs, system.nullspace)
        res = np.linalg.norm(_Projector(system.nullspace, system.size)(system.rhs) - system.K @ x)
        bn = np.linalg.norm(system.rhs)
        info = SolveInfo(1, float(res / bn) if bn else 0.0, 0, "direct")
    else:
        minv = saddle_preconditioner(system.A, system.C, np.asarray(Mr.sum(axis=1)).ravel(), viscosity)
        x, info = minres(system.K, system.rhs, tol, minv, system.nullspace, maxiter, return_info=True)
    z, p = system.split(x)
    if system.pressure_nullspace:
        w = np.asarray(Mr.sum(axis=1)).ravel()
        p = p - (w @ p) / w.sum()
        x = np.concatenate([z, p])
    u_full, p_full = system.expand(x)
    if return_info:
        return u_full, p_full, x, info
    return u_full, p_full


def energy_identity(system, x) -> dict:
    """Momentum equation tested with the computed velocity itself.

    With z the reduced velocity and p the pressure, a = z.A z, l = z.f and
    w = z.B^T p (pressure work, zero for an exactly solenoidal z). The
    identity a - w - l = 0 holds up to the solver residual; ``defect`` is
    its relative violation and ``stab_work`` the part of w left by the
    pressure stabilization.
    """
    z, p = system.split(x)
    a = float(z @ (system.A @ z))
    ell = float(z @ system.f)
    w = float(z @ (system.B.T @ p))
    denom = abs(a) + abs(ell) + abs(w)
    defect = abs(a - w - ell) / denom if denom > 0 else 0.0
    return {"a": a, "l": ell, "pressure_work": w, "defect": defect,
            "stab_work": abs(w) / denom if denom > 0 else 0.0}
