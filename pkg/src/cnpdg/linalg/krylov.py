"""Krylov solvers: CG, restarted right-preconditioned GMRES, and FGMRES.

All solvers accept the operator as a CSR matrix or a callable x -> Ax and the
preconditioner as a callable r -> Mr (None for identity).  Reported residual
norms are recomputed from the returned iterate, not read off the recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class IndefiniteOperatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class KrylovConfig:
    method: str = "gmres"  # cg | gmres | fgmres
    rtol: float = 1e-6
    maxiter: int = 1000
    restart: int = 30
    atol: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("relative tolerance must lie in (0, 1)")
        if self.restart < 1:
            raise ValueError("restart length must be >= 1")
        if self.method not in ("cg", "gmres", "fgmres"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class KrylovResult:
    converged: bool
    iterations: int
    residual_norm: float
    residuals: list = field(default_factory=list)
    reason: str = ""


def _as_matvec(A):
    if callable(A) and not sp.issparse(A):
        return A
    A = sp.csr_matrix(A)
    return lambda x: A @ x


def _as_prec(M):
    if M is None:
        return lambda r: r
    if callable(M):
        return M
    return _as_matvec(M)


def cg(A, b, M=None, cfg: KrylovConfig | None = None, x0=None):
    """Preconditioned conjugate gradients; raises on detected indefiniteness."""
    cfg = cfg or KrylovConfig(method="cg")
    matvec, prec = _as_matvec(A), _as_prec(M)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), KrylovResult(True, 0, 0.0, [0.0], "zero rhs")
    target = max(cfg.rtol * bnorm, cfg.atol)
    res = [float(np.linalg.norm(r))]
    if res[0] <= target:
        return x, KrylovResult(True, 0, res[0], res, "initial guess sufficient")
    z = prec(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, cfg.maxiter + 1):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefiniteOperatorError(
                f"nonpositive curvature p.Ap = {pAp:g} at iteration {it}"
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        res.append(rnorm)
        if rnorm <= target:
            true_norm = float(np.linalg.norm(b - matvec(x)))
            return x, KrylovResult(True, it, true_norm, res, "converged")
        z = prec(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_norm = float(np.linalg.norm(b - matvec(x)))
    return x, KrylovResult(False, cfg.maxiter, true_norm, res, "max iterations")


def _gmres_cycle(matvec, prec, b, x0, target, restart, flexible, res_log, max_steps):
    """One restart cycle; returns (x, converged, steps_used)."""
    n = b.shape[0]
    r = b - matvec(x0)
    beta = float(np.linalg.norm(r))
    res_log.append(beta)
    if beta <= target:
        return x0, True, 0
    m = min(restart, max_steps)
    if m == 0:
        return x0, False, 0
    # basis vectors are grown lazily; preallocating the full restart window
    # wastes memory when convergence needs far fewer steps
    V = [r / beta]
    Z = [] if flexible else None
    H = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    steps = 0
    for j in range(m):
        z = prec(V[j])
        if flexible:
            Z.append(z)
        w = matvec(z)
        for i in range(j + 1):  # modified Gram-Schmidt
            H[i, j] = float(w @ V[i])
            w -= H[i, j] * V[i]
        H[j + 1, j] = float(np.linalg.norm(w))
        if H[j + 1, j] > 0.0:
            V.append(w / H[j + 1, j])
        else:
            V.append(np.zeros_like(w))
        for i in range(j):  # apply stored Givens rotations
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = float(np.hypot(H[j, j], H[j + 1, j]))
        if denom == 0.0:  # singular leading block: keep only completed columns
            steps = j
            break
        cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        steps = j + 1
        res_log.append(abs(g[j + 1]))
        if abs(g[j + 1]) <= target:
            break
    k = steps
    y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
    basis = Z if flexible else V
    dx = np.zeros(n)
    for i in range(k):
        dx += y[i] * basis[i]
    if not flexible:
        dx = prec(dx)
    x = x0 + dx
    return x, abs(g[k]) <= target if k else False, k


def _gmres_driver(A, b, M, cfg, x0, flexible):
    matvec, prec = _as_matvec(A), _as_prec(M)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), KrylovResult(True, 0, 0.0, [0.0], "zero rhs")
    target = max(cfg.rtol * bnorm, cfg.atol)
    res_log: list = []
    total = 0
    while total < cfg.maxiter:
        x, done, used = _gmres_cycle(
            matvec, prec, b, x, target, cfg.restart, flexible, res_log, cfg.maxiter - total
        )
        total += used
        if done:
            true_norm = float(np.linalg.norm(b - matvec(x)))
            return x, KrylovResult(True, total, true_norm, res_log, "converged")
        if used == 0:
            break
    true_norm = float(np.linalg.norm(b - matvec(x)))
    converged = true_norm <= target
    return x, KrylovResult(
        converged, total, true_norm, res_log, "converged" if converged else "max iterations"
    )


def gmres(A, b, M=None, cfg: KrylovConfig | None = None, x0=None):
    """Restarted GMRES with right preconditioning (fixed M)."""
    return _gmres_driver(A, b, M, cfg or KrylovConfig(method="gmres"), x0, flexible=False)


def fgmres(A, b, M=None, cfg: KrylovConfig | None = None, x0=None):
    """Flexible GMRES: M may change between applications (inner Krylov solves)."""
    return _gmres_driver(A, b, M, cfg or KrylovConfig(method="fgmres"), x0, flexible=True)


def solve(A, b, M=None, cfg: KrylovConfig | None = None, x0=None):
    cfg = cfg or KrylovConfig()
    fn = {"cg": cg, "gmres": gmres, "fgmres": fgmres}[cfg.method]
    return fn(A, b, M, cfg, x0)
