"""Sparse solvers: preconditioned BiCGSTAB for the implicit steps and a
shift-invert block inverse iteration for the lowest eigenpairs."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg if residual is None else f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iters: int | None = None  # default 10 sqrt(n)
    preconditioner: str = "jacobi"  # none | jacobi | ilu

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.preconditioner not in ("none", "jacobi", "ilu"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def iters_for(self, n: int) -> int:
        return self.max_iters if self.max_iters is not None else max(20, int(10 * math.sqrt(n)))


def as_csr(A) -> sp.csr_matrix:
    """Canonical CSR: sorted, duplicate-free column indices."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def _preconditioner(A, kind):
    n = A.shape[0]
    if kind == "jacobi":
        d = A.diagonal()
        if np.any(d == 0):
            raise SolverError("zero diagonal entry; Jacobi preconditioner undefined")
        inv = 1.0 / d
        return spla.LinearOperator((n, n), matvec=lambda x: inv * x.ravel(), dtype=float)
    if kind == "ilu":
        ilu = spla.spilu(sp.csc_matrix(A), drop_tol=1e-4, fill_factor=10)
        return spla.LinearOperator((n, n), matvec=ilu.solve, dtype=float)
    return None


def solve_linear(A, b, cfg: SolverConfig = SolverConfig(), x0=None) -> np.ndarray:
    """BiCGSTAB solve with ||Ax - b|| <= rel_tol ||b|| + abs_tol."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, float)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise SolverError(f"shape mismatch: A {A.shape}, b {b.shape}")
    bnorm = np.linalg.norm(b)
    target = cfg.rel_tol * bnorm + cfg.abs_tol
    if bnorm == 0:
        return np.zeros(n)
    M = _preconditioner(A, cfg.preconditioner)
    # scipy's criterion is ||r|| <= max(rtol ||b||, atol); ask for the stricter of ours
    x, info = spla.bicgstab(A, b, x0=x0, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                            maxiter=cfg.iters_for(n), M=M)
    res = float(np.linalg.norm(A @ x - b))
    if res > target:
        # one restart from the current iterate before giving up
        x, info = spla.bicgstab(A, b, x0=x, rtol=0.5 * cfg.rel_tol, atol=0.5 * cfg.abs_tol,
                                maxiter=cfg.iters_for(n), M=M)
        res = float(np.linalg.norm(A @ x - b))
    if not np.all(np.isfinite(x)) or res > target:
        raise SolverError(f"BiCGSTAB failed (info={info})", res)
    return x


def smallest_eigenpairs(A, k: int = 1, tol: float = 1e-8, max_iter: int = 2000,
                        block: int | None = None, seed: int = 12345, shift: float = 0.0):
    """k eigenpairs of smallest real part.

    Shift-invert block inverse iteration with Rayleigh-Ritz on the block;
    Ritz vectors that have converged are locked (deflated) and the remaining
    columns are kept orthogonal to them. Returns a list of (value, vector)
    with unit 2-norm vectors and ||A v - lam v|| <= tol |lam|.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    if k < 1 or k > n:
        raise ValueError("k must be between 1 and n")
    p = min(n, block if block is not None else k + 4)
    rng = np.random.default_rng(seed)
    if p >= n or n <= 64:
        vals, vecs = np.linalg.eig(A.toarray())
        order = np.argsort(vals.real)[:k]
        return [(float(vals[i].real), _unit(vecs[:, i].real)) for i in order]
    lu = spla.splu(A - shift * sp.identity(n, format="csc"))
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    locked = np.zeros((n, 0))
    locked_vals: list[float] = []
    res = np.inf
    for it in range(max_iter):
        Z = lu.solve(Q)
        if locked.shape[1]:
            Z -= locked @ (locked.T @ Z)
        Q, _ = np.linalg.qr(Z)
        basis = np.hstack([locked, Q]) if locked.shape[1] else Q
        H = basis.T @ (A @ basis)
        theta, Y = np.linalg.eig(H)
        order = np.argsort(theta.real)
        theta, Y = theta[order].real, Y[:, order].real
        X = basis @ Y
        X /= np.linalg.norm(X, axis=0)
        R = A @ X - X * theta
        res_all = np.linalg.norm(R, axis=0) / np.maximum(np.abs(theta), 1e-300)
        nconv = 0
        while nconv < k and res_all[nconv] <= tol:
            nconv += 1
        res = float(res_all[:k].max())
        if nconv >= k:
            out = [(float(theta[i]), X[:, i].copy()) for i in range(k)]
            gaps = np.diff([v for v, _ in out])
            if gaps.size and np.min(np.abs(gaps)) < 1e-10:
                log.warning("clustered eigenvalues: minimum gap %.2e", np.min(np.abs(gaps)))
            return out
        if nconv > locked.shape[1]:
            locked, _ = np.linalg.qr(X[:, :nconv])
            locked_vals = list(theta[:nconv])
            Q = X[:, nconv:nconv + p]
            if Q.shape[1] < p:
                Q = np.hstack([Q, rng.standard_normal((n, p - Q.shape[1]))])
            Q -= locked @ (locked.T @ Q)
            Q, _ = np.linalg.qr(Q)
        else:
            nl = locked.shape[1]
            Q = X[:, nl:nl + p]
            Q, _ = np.linalg.qr(Q - (locked @ (locked.T @ Q) if nl else 0))
    raise SolverError(f"eigensolver did not converge in {max_iter} iterations", res)


def _unit(v):
    return v / np.linalg.norm(v)
