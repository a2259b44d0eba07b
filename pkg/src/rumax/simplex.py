"""Dense two-phase simplex kernel.

All linear programs in the package (transport plans, ambiguity polytopes,
arbitrage detection, cutting-plane masters) are solved here.  The solver keeps
an explicit basis inverse that is updated by pivot etas and refactorized
periodically.  Pricing is Dantzig by default and switches permanently to
Bland's rule once the objective stalls, which rules out cycling while keeping
the typical pivot count low.  All tie-breaks are by lowest index, so the
returned vertex is deterministic.  A run whose final basis fails verification
against a fresh factorization is retried once in a safe mode (Bland pricing
from the start, frequent refactorization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LPFailure

_TOL = 1e-9
_STALL_LIMIT = 24


@dataclass
class LPSolution:
    status: str                     # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None            # original-variable values
    fun: float | None
    duals_eq: np.ndarray | None     # multipliers of the a_eq rows
    duals_ub: np.ndarray | None     # multipliers of the a_ub rows
    iterations: int


def solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, bounds=None,
             max_iter=50000) -> LPSolution:
    """Minimize ``c @ x`` subject to ``a_ub @ x <= b_ub``, ``a_eq @ x == b_eq``.

    ``bounds`` is a sequence of ``(lo, hi)`` pairs, ``None`` meaning unbounded;
    the default is ``(0, None)`` for every variable.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    a_ub = np.zeros((0, n)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, dtype=float))
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    if bounds is None:
        bounds = [(0.0, None)] * n

    # Transform to standard form  min c'x', A x' = b, x' >= 0  via
    # x = sel @ x' + shift.  Finite upper bounds become extra <= rows.
    cols = []            # (orig index, sign) per standard column
    shift = np.zeros(n)
    extra_ub_rows = []   # (standard column, upper value after shifting)
    for j, (lo, hi) in enumerate(bounds):
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi + 1e-15:
            raise LPFailure(f"empty bound interval on variable {j}")
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_ub_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))

    n_std = len(cols)
    sel = np.zeros((n, n_std))
    for k, (j, sign) in enumerate(cols):
        sel[j, k] = sign

    m_eq, m_ub = a_eq.shape[0], a_ub.shape[0]
    m_box = len(extra_ub_rows)
    m = m_eq + m_ub + m_box
    n_slack = m_ub + m_box
    a = np.zeros((m, n_std + n_slack))
    b = np.zeros(m)
    a[:m_eq, :n_std] = a_eq @ sel
    b[:m_eq] = b_eq - a_eq @ shift
    a[m_eq:m_eq + m_ub, :n_std] = a_ub @ sel
    b[m_eq:m_eq + m_ub] = b_ub - a_ub @ shift
    for i, (k, ub_val) in enumerate(extra_ub_rows):
        a[m_eq + m_ub + i, k] = 1.0
        b[m_eq + m_ub + i] = ub_val
    a[m_eq:, n_std:] = np.eye(n_slack)
    c_std = np.concatenate([c @ sel, np.zeros(n_slack)])

    # equilibrate rows then columns; cutting-plane masters mix unit rows with
    # steep tangents and become numerically fragile without this
    row_scale = np.maximum(np.abs(a).max(axis=1, initial=0.0), 1e-12)
    a /= row_scale[:, None]
    b = b / row_scale
    col_scale = np.maximum(np.abs(a).max(axis=0, initial=0.0), 1e-12)
    a /= col_scale
    c_work = c_std / col_scale

    row_sign = np.ones(m)
    neg = b < 0
    a[neg] *= -1.0
    b[neg] *= -1.0
    row_sign[neg] = -1.0

    try:
        x_std, duals, iters, status = _two_phase(a, b, c_work, max_iter,
                                                 safe=False)
    except LPFailure:
        x_std, duals, iters, status = _two_phase(a.copy(), b.copy(), c_work,
                                                 max_iter, safe=True)
    if status != "optimal":
        return LPSolution(status, None, None, None, None, iters)

    x_std = x_std / col_scale
    x = sel @ x_std[:n_std] + shift
    y = duals * row_sign / row_scale
    return LPSolution("optimal", x, float(c @ x), y[:m_eq],
                      y[m_eq:m_eq + m_ub], iters)


def _two_phase(a, b, c, max_iter, safe):
    m, n = a.shape
    full = np.hstack([a, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    feas_target = 1e-11 * max(1.0, float(np.abs(b).sum()))
    basis, binv, it1, status = _iterate(full, b, c1, basis, max_iter,
                                        ban_entering_from=n, safe=safe,
                                        target=feas_target)
    if status == "unbounded":
        raise LPFailure("phase-1 objective unbounded")
    xb = binv @ b
    feas = float(c1[basis] @ xb)
    if feas > 1e-8 * max(1.0, float(np.abs(b).sum())):
        if not safe:
            # could be stall-induced; the safe retry gets the final word
            raise LPFailure("phase-1 ended above the feasibility target")
        return None, None, it1, "infeasible"

    # Drive artificial variables out of the basis; a row that admits no real
    # pivot is linearly dependent and gets dropped.
    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] < n:
            continue
        row = binv[i] @ full[:, :n]
        in_basis = np.isin(np.arange(n), basis)
        cand = np.flatnonzero((np.abs(row) > 1e-9) & ~in_basis)
        if cand.size:
            basis[i] = int(cand[0])
            binv = _refactor(full, basis)
        else:
            keep[i] = False
    kept_rows = np.flatnonzero(keep)
    if kept_rows.size != m:
        a = a[kept_rows]
        b = b[kept_rows]
        basis = [basis[i] for i in kept_rows]

    a2 = a[:, :n]
    basis, binv, it2, status = _iterate(a2, b, c, basis, max_iter, safe=safe)
    if status != "optimal":
        return None, None, it1 + it2, status

    # verify against a fresh factorization; drift in the eta updates shows up
    # here and triggers the safe retry in solve_lp
    binv = _refactor(a2, basis)
    xb = binv @ b
    y_kept = c[basis] @ binv
    r_chk = c - y_kept @ a2
    cost_scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    if (xb < -1e-7).any() or (r_chk < -2e-6 * cost_scale).any():
        raise LPFailure("final basis fails verification")

    x = np.zeros(n)
    for i, j in enumerate(basis):
        x[j] = xb[i]
    resid = float(np.max(np.abs(a2 @ x - b))) if b.size else 0.0
    if resid > 1e-6 * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise LPFailure(f"basic solution residual {resid:.3e}")

    y = np.zeros(m)
    y[kept_rows] = y_kept
    return x, y, it1 + it2, "optimal"


def _refactor(a, basis):
    try:
        return np.linalg.inv(a[:, basis])
    except np.linalg.LinAlgError as exc:
        raise LPFailure("singular basis") from exc


def _iterate(a, b, c, basis, max_iter, ban_entering_from=None, safe=False,
             target=None):
    m = a.shape[0]
    binv = _refactor(a, basis)
    bland = safe
    stall = 0
    enter_tol = _TOL
    last_obj = np.inf
    it = 0
    while True:
        if it >= max_iter:
            raise LPFailure(f"pivot limit {max_iter} exceeded")
        if target is not None:
            obj_now = float(c[basis] @ (binv @ b))
            if obj_now <= target:
                return basis, binv, it, "optimal"
        y = c[basis] @ binv
        r = c - y @ a
        eligible = r < -enter_tol
        if ban_entering_from is not None:
            eligible[ban_entering_from:] = False
        eligible[basis] = False
        xb = binv @ b
        found = False
        while True:
            idx = np.flatnonzero(eligible)
            if idx.size == 0:
                break
            if bland:
                j = int(idx[0])
            else:
                j = int(idx[np.argmin(r[idx])])
            d = binv @ a[:, j]
            pos = d > _TOL
            if not pos.any():
                # no blocking row: either a genuine improving ray or a column
                # that this basis inverse has numerically annihilated
                if float(np.abs(a[:, j]).max(initial=0.0)) <= 1e-12 \
                        or float(np.abs(d).max(initial=0.0)) > 1e-7:
                    return basis, binv, it, "unbounded"
                eligible[j] = False
                continue
            # exact ratio test, then prefer the largest pivot among ties so
            # noise-sized entries never enter the basis
            ratios = np.full(m, np.inf)
            ratios[pos] = xb[pos] / d[pos]
            rmin = float(ratios.min())
            tie = np.flatnonzero(ratios <= rmin + 1e-12 * (1.0 + abs(rmin)))
            tie_strong = tie[d[tie] > 1e-7]
            if tie_strong.size == 0:
                eligible[j] = False      # only noise pivots block this column
                continue
            if bland:
                i = int(tie_strong[np.argmin(np.asarray(basis)[tie_strong])])
            else:
                i = int(tie_strong[np.argmax(d[tie_strong])])
            if not safe:
                found = True
                break
            # safe mode commits a pivot only if the new basis factorizes;
            # every strong tied leaving row is tried before the column is banned
            binv_next = None
            order = tie_strong[np.argsort(-d[tie_strong], kind="stable")]
            for i_try in order:
                candidate = list(basis)
                candidate[int(i_try)] = j
                try:
                    binv_next = _refactor(a, candidate)
                    i = int(i_try)
                    break
                except LPFailure:
                    continue
            if binv_next is not None:
                found = True
                break
            eligible[j] = False
        if not found:
            # remaining reduced costs ride on numerically unusable columns
            return basis, binv, it, "optimal"

        basis[i] = j
        if safe:
            binv = binv_next
        else:
            pivrow = binv[i] / d[i]
            binv -= np.outer(d, pivrow)
            binv[i] = pivrow
        it += 1
        if not safe and it % 64 == 0:
            binv = _refactor(a, basis)

        obj = float(c[basis] @ (binv @ b))
        if obj > last_obj - 1e-13:
            stall += 1
            if stall >= _STALL_LIMIT:
                bland = True
            # prolonged churn means the remaining reduced costs are noise at
            # the current conditioning; loosen the entering threshold
            if stall and stall % 400 == 0 and enter_tol < 1e-5:
                enter_tol *= 10.0
        else:
            stall = 0
        last_obj = obj
