"""Small dense linear algebra and Hildreth's dual QP solver.

Matrices are plain 2-D ``numpy`` arrays (row-major, float64).  The QP form is

    minimize    0.5 * x' E x + f' x
    subject to  M x <= gamma

with ``E`` symmetric positive definite.
"""
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionMismatch, NotPositiveDefinite

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
UNCONSTRAINED = "unconstrained_optimum_feasible"
INFEASIBLE = "infeasible"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
FEAS_TOL = 1e-6
POLISH_EVERY = 5
POLISH_MAX_SUBSETS = 64


def as_matrix(a, name="matrix"):
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def as_vector(v, name="vector"):
    out = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} has non-finite entries")
    return out


def _factor(E):
    E = as_matrix(E, "E")
    if E.shape[0] != E.shape[1]:
        raise DimensionMismatch(f"E must be square, got {E.shape}")
    scale = max(1.0, np.abs(E).max())
    if np.abs(E - E.T).max() > 1e-12 * scale:
        raise NotPositiveDefinite("E is not symmetric")
    try:
        return cho_factor(E, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def solve_spd(E, rhs):
    """Solve ``E x = rhs`` for symmetric positive definite ``E`` (Cholesky)."""
    fac = _factor(E)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != fac[0].shape[0]:
        raise DimensionMismatch(
            f"rhs has {rhs.shape[0]} rows, E is {fac[0].shape[0]}x{fac[0].shape[0]}")
    return cho_solve(fac, rhs, check_finite=False)


@dataclass(frozen=True)
class QpProblem:
    E: np.ndarray
    f: np.ndarray
    M: np.ndarray = None
    gamma: np.ndarray = None

    def __post_init__(self):
        E = as_matrix(self.E, "E")
        f = as_vector(self.f, "f")
        n = E.shape[0]
        if E.shape != (n, n) or f.shape != (n,):
            raise DimensionMismatch(f"E {E.shape} and f {f.shape} disagree")
        if self.M is None or np.size(self.M) == 0:
            M = np.zeros((0, n))
            gamma = np.zeros(0)
        else:
            M = as_matrix(self.M, "M")
            gamma = as_vector(self.gamma, "gamma")
            if M.shape[1] != n or gamma.shape != (M.shape[0],):
                raise DimensionMismatch(
                    f"M {M.shape} / gamma {gamma.shape} do not match n={n}")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "gamma", gamma)

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def m(self):
        return self.M.shape[0]

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ self.E @ x + self.f @ x


@dataclass
class QpSolution:
    delta_u: np.ndarray
    duals: np.ndarray
    status: str
    iterations: int = 0
    kkt: float = field(default=float("nan"))


def hildreth_qp(p, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solve a strictly convex inequality-constrained QP by Hildreth's method.

    The unconstrained minimizer is returned directly when it is feasible.
    Otherwise the dual

        maximize  -0.5 l' H l - l' K,   l >= 0,
        H = M E^-1 M',  K = gamma + M E^-1 f

    is solved by cyclic coordinate ascent and the primal recovered as
    ``x = -E^-1 (f + M' l)``.  One iteration is one full pass over the
    multipliers that can move (positive ones, or those whose constraint is
    currently violated); the remaining multipliers are rechecked before
    declaring convergence.

    Infeasibility is not detected in general: an infeasible problem lets the
    multipliers grow without bound and the solver stops with status
    ``max_iterations``.  Rows of ``M`` that are identically zero cannot be
    influenced by ``x``; if one of them is violated the status is
    ``infeasible``.

    Parameters
    ----------
    p : QpProblem
    tol : float
        Stop when no multiplier changed by more than ``tol`` in a pass.
    max_iter : int
        Maximum number of passes.

    Returns
    -------
    QpSolution
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    fac = _factor(p.E)
    x0 = -cho_solve(fac, p.f, check_finite=False)
    m = p.m
    if m == 0 or np.all(p.M @ x0 <= p.gamma):
        sol = QpSolution(x0, np.zeros(m), UNCONSTRAINED, 0)
        sol.kkt = kkt_residual(p, sol)
        return sol

    P = cho_solve(fac, p.M.T, check_finite=False)  # E^-1 M', n x m
    hdiag = np.einsum("ij,ji->i", p.M, P)
    K = p.gamma - p.M @ x0
    movable = hdiag > 1e-14 * max(1.0, hdiag.max())

    lam = np.zeros(m)
    s = np.zeros(p.n)  # M' lam, kept in sync with lam
    status = MAX_ITERATIONS
    it = 0
    while it < max_iter:
        if it and it % POLISH_EVERY == 0:
            polished = _polish(p, fac, x0, lam)
            if polished is not None:
                lam = polished
                status = OPTIMAL
                break
        # multiplier each coordinate would take if updated right now
        w = -(K + P.T @ s - hdiag * lam)
        cand = np.flatnonzero(movable & ((lam > 0) | (w > 0)))
        it += 1
        delta = 0.0
        for i in cand:
            Mi = p.M[i]
            li = lam[i]
            new = max(0.0, li - (K[i] + P[:, i] @ s) / hdiag[i])
            if new != li:
                s += Mi * (new - li)
                lam[i] = new
                delta = max(delta, abs(new - li))
        if delta <= tol:
            # confirm nothing outside the pass set wants to enter
            w = -(K + P.T @ s - hdiag * lam)
            outside = movable & (lam == 0) & (w > tol * hdiag)
            if not outside.any():
                status = OPTIMAL
                break

    x = x0 - P @ lam
    if status == OPTIMAL and np.any(p.M[~movable] @ x - p.gamma[~movable] > FEAS_TOL):
        status = INFEASIBLE
    sol = QpSolution(x, lam, status, it)
    sol.kkt = kkt_residual(p, sol)
    return sol


def _polish(p, fac, x0, lam):
    """Try to certify the optimum from the rows carrying positive multipliers.

    Solves the equality-constrained QP on that row set (or on subsets of it
    when it is larger than ``n`` or its solution fails the checks).  A subset
    whose solution is primal feasible with nonnegative multipliers is the
    unique KKT point; its multipliers are returned.  None if no subset works.
    """
    act = np.flatnonzero(lam > 0)
    if act.size == 0:
        return None
    # strongest multipliers first so the likely active set is tried early
    act = act[np.argsort(-lam[act])]
    tried = 0
    for size in range(min(act.size, p.n), 0, -1):
        for rows in combinations(act, size):
            tried += 1
            if tried > POLISH_MAX_SUBSETS:
                return None
            rows = np.array(rows)
            Ma = p.M[rows]
            P = cho_solve(fac, Ma.T, check_finite=False)
            try:
                la = np.linalg.solve(Ma @ P, Ma @ x0 - p.gamma[rows])
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(la)) or la.min() < 0:
                continue
            x = x0 - P @ la
            if np.any(p.M @ x - p.gamma > 1e-9 * (1.0 + np.abs(p.gamma).max())):
                continue
            out = np.zeros_like(lam)
            out[rows] = la
            return out
    return None


def kkt_residual(p, s):
    """Largest of the stationarity, primal feasibility and complementarity
    violations of ``s`` for problem ``p``."""
    x = as_vector(s.delta_u, "delta_u")
    lam = as_vector(s.duals, "duals")
    if x.shape != (p.n,) or lam.shape != (p.m,):
        raise DimensionMismatch(
            f"solution sizes ({x.size}, {lam.size}) vs problem ({p.n}, {p.m})")
    stat = np.abs(p.E @ x + p.f + p.M.T @ lam).max()
    if p.m == 0:
        return float(stat)
    slack = p.M @ x - p.gamma
    feas = max(0.0, slack.max())
    comp = np.abs(lam * slack).max()
    return float(max(stat, feas, comp))
