"""Small dense strictly convex QP solver.

Solves::

    minimize    sum_i d_i z_i^2
    subject to  rows @ z + offsets >= 0
                lower <= z <= upper

with a dual active-set method (Goldfarb and Idnani). The unconstrained
minimizer is ``z = 0``, which is where the dual method starts, so no feasible
initial point is needed. Violated constraints are added one at a time; each
addition may drop active constraints whose multipliers would turn negative.
The problems here have five variables and at most a dozen constraints, so the
projections are recomputed from scratch with dense solves instead of being
updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-12
KKT_TOL = 1e-8
MAX_ITER = 200


class QpError(RuntimeError):
    """Raised when a solve does not reach a verified KKT point."""


@dataclass
class QpProblem:
    diag: np.ndarray
    rows: np.ndarray
    offsets: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.diag = np.asarray(self.diag, dtype=float)
        nv = self.diag.size
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, nv)
        self.offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (nv,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (nv,)).copy()
        if np.any(self.diag <= 0):
            raise ValueError("quadratic diagonal must be strictly positive")
        if len(self.offsets) != len(self.rows):
            raise ValueError("need one offset per constraint row")
        if not (np.all(np.isfinite(self.rows)) and np.all(np.isfinite(self.offsets))):
            raise ValueError("constraint rows must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")

    @property
    def n_vars(self) -> int:
        return self.diag.size

    def objective(self, z: np.ndarray) -> float:
        return float(np.dot(self.diag, z * z))


@dataclass
class QpResult:
    x: np.ndarray
    row_duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    status: str
    objective: float
    kkt_residual: float
    iterations: int
    active_rows: list = field(default_factory=list)
    active_lower: list = field(default_factory=list)
    active_upper: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _stack(p: QpProblem):
    """Normalized constraints ``C z >= rhs`` plus bookkeeping of their origin."""
    nv = p.n_vars
    eye = np.eye(nv)
    C, rhs, kind, idx = [], [], [], []
    for k, (row, off) in enumerate(zip(p.rows, p.offsets)):
        C.append(row)
        rhs.append(-off)
        kind.append("row")
        idx.append(k)
    for i in range(nv):
        if np.isfinite(p.lower[i]):
            C.append(eye[i])
            rhs.append(p.lower[i])
            kind.append("lower")
            idx.append(i)
        if np.isfinite(p.upper[i]):
            C.append(-eye[i])
            rhs.append(-p.upper[i])
            kind.append("upper")
            idx.append(i)
    C = np.array(C, dtype=float).reshape(-1, nv)
    rhs = np.array(rhs, dtype=float)
    norms = np.linalg.norm(C, axis=1)
    return C, rhs, norms, kind, idx


def solve(p: QpProblem, max_iter: int = MAX_ITER) -> QpResult:
    nv = p.n_vars
    C, rhs, norms, kind, idx = _stack(p)
    zero = norms == 0.0
    if np.any(zero & (rhs > 0)):
        return _result(p, np.zeros(nv), C, rhs, norms, kind, idx, [], [], "infeasible", 0, False)
    scale = np.where(zero, 1.0, norms)
    Cn = C / scale[:, None]
    bn = rhs / scale
    ginv = 1.0 / (2.0 * p.diag)

    x = np.zeros(nv)
    active: list[int] = []
    u = np.zeros(0)
    degenerate = False
    it = 0
    while True:
        slack = Cn @ x - bn
        if active:
            slack[active] = np.inf
        slack[zero] = np.inf
        viol = int(np.argmin(slack)) if len(slack) else -1
        if viol < 0 or slack[viol] >= -FEAS_TOL:
            polished = _polish(p, active, kind, idx)
            if polished is not None:
                return _finish(p, *polished, it, degenerate)
            return _result(p, x, C, rhs, norms, kind, idx, active, u, "optimal", it, degenerate)
        n_p = Cn[viol]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                return _result(p, x, C, rhs, norms, kind, idx, active, u_plus[:-1],
                               "max_iter", it, degenerate)
            if active:
                N = Cn[active].T
                GN = ginv[:, None] * N
                nstar = np.linalg.solve(N.T @ GN, GN.T)
                r = nstar @ n_p
                z = ginv * n_p - GN @ r
            else:
                r = np.zeros(0)
                z = ginv * n_p
            # partial step: largest move keeping active multipliers nonnegative
            t1, drop = np.inf, -1
            for k, rk in enumerate(r):
                if rk > 0.0:
                    ratio = u_plus[k] / rk
                    if ratio < t1:
                        t1, drop = ratio, k
            zn = float(z @ n_p)
            # full step: makes the violated constraint active
            if zn > 1e-14 * float(n_p @ (ginv * n_p)):
                t2 = -(float(n_p @ x) - bn[viol]) / zn
            else:
                t2 = np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return _result(p, x, C, rhs, norms, kind, idx, active, u_plus[:-1],
                               "infeasible", it, degenerate)
            if not np.isfinite(t2):
                # n_p is dependent on the active rows: shift multipliers only
                degenerate = True
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                del active[drop]
                u_plus = np.delete(u_plus, drop)
                continue
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(viol)
                u = u_plus
                break
            del active[drop]
            u_plus = np.delete(u_plus, drop)


def _polish(p: QpProblem, active, kind, idx):
    """Re-solve the equality problem of the final active set directly.

    Active bounds are pinned exactly and the active rows are solved for the
    remaining variables, which removes the rounding accumulated by the
    incremental steps. Returns ``None`` when the reduced system is singular
    or yields multipliers of the wrong sign.
    """
    nv = p.n_vars
    x = np.zeros(nv)
    fixed = np.zeros(nv, dtype=bool)
    rows = []
    for j in active:
        if kind[j] == "row":
            rows.append(idx[j])
        else:
            i = idx[j]
            fixed[i] = True
            x[i] = p.lower[i] if kind[j] == "lower" else p.upper[i]
    free = ~fixed
    row_duals = np.zeros(len(p.rows))
    if rows:
        A = p.rows[rows]
        rhs = -p.offsets[rows] - A[:, fixed] @ x[fixed]
        N = A[:, free].T
        nf, q = N.shape
        # augmented system [2D  -N; N^T  0] [x; lam] = [0; rhs]
        K = np.zeros((nf + q, nf + q))
        K[:nf, :nf] = np.diag(2.0 * p.diag[free])
        K[:nf, nf:] = -N
        K[nf:, :nf] = N.T
        try:
            sol = np.linalg.solve(K, np.concatenate([np.zeros(nf), rhs]))
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        x[free] = sol[:nf]
        row_duals[rows] = sol[nf:]
    # bound multipliers from stationarity on the pinned coordinates
    grad = 2.0 * p.diag * x - p.rows.T @ row_duals
    lower_duals = np.zeros(nv)
    upper_duals = np.zeros(nv)
    for j in active:
        if kind[j] == "lower":
            lower_duals[idx[j]] = grad[idx[j]]
        elif kind[j] == "upper":
            upper_duals[idx[j]] = -grad[idx[j]]
    duals = np.concatenate([row_duals, lower_duals, upper_duals])
    if np.any(duals < -KKT_TOL * max(1.0, float(np.max(np.abs(duals), initial=0.0)))):
        return None
    return x, row_duals, lower_duals, upper_duals


def _finish(p, x, row_duals, lower_duals, upper_duals, it, degenerate) -> QpResult:
    res = kkt_residuals(p, x, row_duals, lower_duals, upper_duals)
    return QpResult(
        x=x, row_duals=row_duals, lower_duals=lower_duals, upper_duals=upper_duals,
        status="optimal", objective=p.objective(x), kkt_residual=max(res.values()),
        iterations=it,
        active_rows=[int(k) for k in np.flatnonzero(row_duals)],
        active_lower=[int(k) for k in np.flatnonzero(lower_duals)],
        active_upper=[int(k) for k in np.flatnonzero(upper_duals)],
        degenerate=degenerate,
    )


def kkt_residuals(p: QpProblem, x, row_duals, lower_duals, upper_duals) -> dict:
    """Scaled KKT residuals.

    Constraint rows are normalized to unit length. Stationarity and
    complementarity are divided by the magnitude of the objective gradient
    (at least 1), so the numbers are comparable across problem scales.
    """
    rn = np.linalg.norm(p.rows, axis=1)
    rn = np.where(rn == 0.0, 1.0, rn)
    g = (p.rows @ x + p.offsets) / rn
    grad = 2.0 * p.diag * x
    pulled = p.rows.T @ row_duals
    scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)), float(np.max(np.abs(pulled), initial=0.0)))
    stat = (grad - pulled - lower_duals + upper_duals) / scale
    fin_lo = np.isfinite(p.lower)
    fin_hi = np.isfinite(p.upper)
    lo_gap = np.where(fin_lo, x - np.where(fin_lo, p.lower, 0.0), 0.0)
    hi_gap = np.where(fin_hi, np.where(fin_hi, p.upper, 0.0) - x, 0.0)
    comp = np.concatenate([row_duals * rn * g, lower_duals * lo_gap, upper_duals * hi_gap]) / scale
    primal = np.concatenate([np.maximum(0.0, -g), np.maximum(0.0, -lo_gap), np.maximum(0.0, -hi_gap)])
    duals = np.concatenate([row_duals, lower_duals, upper_duals])
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal": float(np.max(primal, initial=0.0)),
        "dual": float(max(0.0, -np.min(duals, initial=0.0))),
        "complementarity": float(np.max(np.abs(comp), initial=0.0)),
    }


def _result(p, x, C, rhs, norms, kind, idx, active, u, status, it, degenerate) -> QpResult:
    nv = p.n_vars
    row_duals = np.zeros(len(p.rows))
    lower_duals = np.zeros(nv)
    upper_duals = np.zeros(nv)
    act = {"row": [], "lower": [], "upper": []}
    for j, lam in zip(active, u):
        lam = float(lam) / norms[j]
        target = {"row": row_duals, "lower": lower_duals, "upper": upper_duals}[kind[j]]
        target[idx[j]] = lam
        act[kind[j]].append(idx[j])
    res = kkt_residuals(p, x, row_duals, lower_duals, upper_duals)
    return QpResult(
        x=x, row_duals=row_duals, lower_duals=lower_duals, upper_duals=upper_duals,
        status=status, objective=p.objective(x), kkt_residual=max(res.values()),
        iterations=it,
        active_rows=sorted(act["row"]), active_lower=sorted(act["lower"]),
        active_upper=sorted(act["upper"]), degenerate=degenerate,
    )
