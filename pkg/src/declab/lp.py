"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Solves   minimize c.x  subject to  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.
Instances in this package are small (tens of rows), so a dense tableau is
simpler and fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LPInfeasible, LPUnbounded, NumericFailure

TOL = 1e-9
MAX_ITER = 10**6


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    nit: int
    duals: np.ndarray | None = None


def drop_dependent_rows(A: np.ndarray, b: np.ndarray, tol: float = TOL):
    """Gaussian elimination on [A | b]; drops redundant equality rows.

    Raises LPInfeasible when a row reduces to 0 = nonzero.
    """
    if A.shape[0] == 0:
        return A, b
    M = np.hstack([A, b[:, None]]).astype(float)
    m, n = A.shape
    keep = []
    rows = M.copy()
    used = np.zeros(m, dtype=bool)
    col = 0
    scale = max(1.0, np.abs(M).max())
    for col in range(n):
        cand = np.where(~used)[0]
        if cand.size == 0:
            break
        piv = cand[np.argmax(np.abs(rows[cand, col]))]
        if abs(rows[piv, col]) <= tol * scale:
            continue
        used[piv] = True
        keep.append(piv)
        others = np.where(~used)[0]
        rows[others] -= np.outer(rows[others, col] / rows[piv, col], rows[piv])
    for r in np.where(~used)[0]:
        if abs(rows[r, -1]) > 1e-7 * scale:
            raise LPInfeasible("inconsistent equality constraints")
    keep = sorted(keep)
    return A[keep], b[keep]


def _pivot(T: np.ndarray, r: int, k: int) -> None:
    T[r] /= T[r, k]
    col = T[:, k].copy()
    col[r] = 0.0
    nz = np.nonzero(col)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _simplex(T: np.ndarray, basis: list, n_cols: int, tol: float, max_iter: int, it0: int = 0) -> int:
    """Bland-rule iterations on tableau T (objective in the last row). Returns iteration count."""
    m = T.shape[0] - 1
    it = it0
    while True:
        red = T[m, :n_cols]
        cand = np.nonzero(red < -tol)[0]
        if cand.size == 0:
            return it
        k = int(cand[0])
        colk = T[:m, k]
        pos = np.nonzero(colk > tol)[0]
        if pos.size == 0:
            raise LPUnbounded("objective unbounded below")
        ratios = T[pos, -1] / colk[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + tol * max(1.0, abs(rmin))]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, k)
        basis[r] = k
        it += 1
        if it >= max_iter:
            raise NumericFailure(f"simplex exceeded {max_iter} iterations")


def linprog(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = TOL, max_iter: int = MAX_ITER) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    A_eq, b_eq = drop_dependent_rows(A_eq, b_eq, tol)

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    n_tot = n + m_ub  # structural + slack columns
    A = np.zeros((m, n_tot))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # rows whose slack has coefficient +1 can start with the slack basic
    basis = [-1] * m
    for i in range(m_ub):
        if not neg[i]:
            basis[i] = n + i
    art_rows = [i for i in range(m) if basis[i] < 0]
    n_art = len(art_rows)
    T = np.zeros((m + 1, n_tot + n_art + 1))
    T[:m, :n_tot] = A
    T[:m, -1] = b
    for j, i in enumerate(art_rows):
        T[i, n_tot + j] = 1.0
        basis[i] = n_tot + j

    it = 0
    if n_art:
        T[m, : n_tot + n_art] = 0.0
        T[m, n_tot : n_tot + n_art] = 1.0
        for i in art_rows:
            T[m] -= T[i]
        it = _simplex(T, basis, n_tot + n_art, tol, max_iter)
        if -T[m, -1] > tol * max(1.0, np.abs(b).max()) * 10:
            raise LPInfeasible(f"phase-one residual {-T[m, -1]:.3e}")
        # drive remaining artificials out of the basis
        for i in range(m):
            if basis[i] >= n_tot:
                row = T[i, :n_tot]
                nz = np.nonzero(np.abs(row) > tol)[0]
                if nz.size:
                    _pivot(T, i, int(nz[0]))
                    basis[i] = int(nz[0])
        keep = [i for i in range(m) if basis[i] < n_tot]
        T = np.vstack([T[keep][:, list(range(n_tot)) + [T.shape[1] - 1]], np.zeros((1, n_tot + 1))])
        basis = [basis[i] for i in keep]
        m = len(keep)

    cost = np.zeros(n_tot)
    cost[:n] = c
    T[m, :n_tot] = cost
    T[m, -1] = 0.0
    for i, bi in enumerate(basis):
        if cost[bi] != 0.0:
            T[m] -= cost[bi] * T[i]
    it = _simplex(T, basis, n_tot, tol, max_iter, it)

    x = np.zeros(n_tot)
    for i, bi in enumerate(basis):
        x[bi] = T[i, -1]
    x = np.clip(x[:n], 0.0, None)
    return LPResult(x=x, fun=float(c @ x), nit=it)
