"""Receding-horizon spacing controller: prediction model, cost, constraints.

The decision vector ``dU = [du(k), ..., du(k+Nc-1)]`` drives the prediction
model; predicted outputs over ``Np`` steps are ``Y = F x(k) + Phi dU`` and the
cost

    J = (Rs - Y)'(Rs - Y) + R dU'dU

is minimized subject to input bounds and (optionally) spacing/velocity bounds.

How ``dU`` maps to the applied command depends on ``MpcConfig.formulation``:

``positional``
    ``dU`` is the future command sequence itself (zero after ``Nc``); the
    applied command is ``dU[0]`` and the bounds apply to ``dU`` directly.
``increment``
    the same prediction model, but ``dU`` is applied as an increment,
    ``u(k) = u(k-1) + dU[0]``.  The model then ignores the held input, and
    with the default weights the closed loop has an unstable oscillatory
    mode that only input saturation keeps bounded.  Kept for comparison.
``augmented``
    ``u(k-1)`` is appended to the state so increments act on a held input;
    ``u(k) = u(k-1) + dU[0]``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import matqp
from .errors import DimensionMismatch, ValidationError

G = 9.81

POSITIONAL = "positional"
INCREMENT = "increment"
AUGMENTED = "augmented"
FORMULATIONS = (POSITIONAL, INCREMENT, AUGMENTED)
CUMULATIVE = "cumulative"
LITERAL = "literal"


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = matqp.as_matrix(self.A, "A")
        B = matqp.as_matrix(self.B, "B")
        if B.shape[0] == 1 and A.shape[0] != 1:
            B = B.T
        C = matqp.as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n) or B.shape != (n, 1) or C.shape[1] != n:
            raise DimensionMismatch(
                f"A {A.shape}, B {B.shape}, C {C.shape} are inconsistent")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def q(self):
        return self.C.shape[0]


def acc_state_space(T=0.1, tau=0.5):
    """Error-state model of the follower: lag actuator, spacing/range-rate outputs.

    State ``e = (err, d err/dt, a2)`` with ``err = SIVD - range``; outputs
    ``y = (err, range_rate)``.
    """
    A = np.array([[1.0, T, 0.0],
                  [0.0, 1.0, T],
                  [0.0, 0.0, 1.0 - T / tau]])
    B = np.array([[0.0], [0.0], [T / tau]])
    C = np.array([[1.0, 0.0, 0.0],
                  [0.0, -1.0, 0.0]])
    return StateSpace(A, B, C)


def augment(ss):
    """Velocity-form model with the previous input appended to the state.

    ``x_a = (x, u(k-1))``; an increment ``du`` changes the held input, so
    inputs beyond the control horizon stay at their last value.
    """
    n = ss.n
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = ss.A
    A[:n, n:] = ss.B
    A[n, n] = 1.0
    B = np.vstack([ss.B, [[1.0]]])
    C = np.hstack([ss.C, np.zeros((ss.q, 1))])
    return StateSpace(A, B, C)


@dataclass(frozen=True)
class MpcConfig:
    """Controller parameters.  Defaults are the values used for the ACC study."""

    sample_time: float = 0.1
    tau: float = 0.5
    np_: int = 230
    nc: int = 3
    r_weight: float = 1.0
    set_point: float = 0.0
    u_min: float = -0.5 * G
    u_max: float = 0.25 * G
    input_constraint_mode: str = CUMULATIVE
    formulation: str = POSITIONAL
    input_constraints: bool = True
    state_constraints: bool = True
    state_constraint_steps: int = 10
    state_constraint_stride: int = 1
    qp_tol: float = matqp.DEFAULT_TOL
    qp_max_iter: int = matqp.DEFAULT_MAX_ITER

    def __post_init__(self):
        checks = [
            (self.sample_time > 0, "sample_time > 0"),
            (self.tau > 0, "tau > 0"),
            (int(self.nc) == self.nc and self.nc >= 1, "nc >= 1"),
            (int(self.np_) == self.np_ and self.nc <= self.np_, "nc <= np"),
            (self.r_weight >= 0, "r_weight >= 0"),
            (self.u_min < self.u_max, "u_min < u_max"),
            (self.input_constraint_mode in (CUMULATIVE, LITERAL),
             "input_constraint_mode in {cumulative, literal}"),
            (self.formulation in FORMULATIONS,
             f"formulation in {FORMULATIONS}"),
            (self.state_constraint_steps >= 1, "state_constraint_steps >= 1"),
            (self.state_constraint_stride >= 1, "state_constraint_stride >= 1"),
            (self.qp_tol > 0, "qp_tol > 0"),
            (self.qp_max_iter >= 1, "qp_max_iter >= 1"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ValidationError(f"invalid MpcConfig: requires {rule}")
        for name in ("sample_time", "tau", "r_weight", "set_point", "u_min", "u_max"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"invalid MpcConfig: {name} must be finite")


@dataclass(frozen=True)
class PredictionMatrices:
    F: np.ndarray
    Phi: np.ndarray
    q: int
    np_: int
    nc: int


def build_prediction(ss, np_, nc):
    """Stack the predicted outputs: block row m of F is C A^m and block
    (m, j) of Phi is C A^(m-j) B for j <= min(m, Nc) (1-based)."""
    if not 1 <= nc <= np_:
        raise DimensionMismatch(f"need 1 <= Nc <= Np, got Nc={nc}, Np={np_}")
    q, n = ss.q, ss.n
    F = np.zeros((q * np_, n))
    Phi = np.zeros((q * np_, nc))
    # impulse[m] = C A^m B
    impulse = np.zeros((np_, q))
    CA = ss.C.copy()
    for m in range(np_):
        impulse[m] = (CA @ ss.B)[:, 0]
        CA = CA @ ss.A
        F[q * m:q * (m + 1)] = CA
    for m in range(np_):
        for j in range(min(m + 1, nc)):
            Phi[q * m:q * (m + 1), j] = impulse[m - j]
    return PredictionMatrices(F, Phi, q, np_, nc)


def reference_vector(pm, cfg):
    return np.full(pm.q * pm.np_, float(cfg.set_point))


def _tracking_error(pm, cfg, state):
    state = matqp.as_vector(state, "state")
    if state.shape != (pm.F.shape[1],):
        raise DimensionMismatch(
            f"state has {state.size} entries, model has {pm.F.shape[1]}")
    return reference_vector(pm, cfg) - pm.F @ state


def build_cost(pm, cfg, state):
    """Quadratic cost ``0.5 dU'E dU + f'dU`` equal to J up to a constant."""
    W = pm.Phi.T @ pm.Phi + cfg.r_weight * np.eye(pm.nc)
    E = 2.0 * W
    E = 0.5 * (E + E.T)
    f = -2.0 * pm.Phi.T @ _tracking_error(pm, cfg, state)
    return E, f


def cost_value(pm, cfg, state, delta_u):
    """J evaluated directly from predicted outputs (used as a reference)."""
    state = matqp.as_vector(state, "state")
    delta_u = np.asarray(delta_u, dtype=float)
    Y = pm.F @ state + pm.Phi @ delta_u
    r = reference_vector(pm, cfg) - Y
    return float(r @ r + cfg.r_weight * delta_u @ delta_u)


def optimal_delta_u_unconstrained(pm, cfg, state):
    W = pm.Phi.T @ pm.Phi + cfg.r_weight * np.eye(pm.nc)
    return matqp.solve_spd(W, pm.Phi.T @ _tracking_error(pm, cfg, state))


def build_input_constraints(u_prev, cfg):
    """Input bounds as ``M dU <= gamma``.

    ``cumulative`` bounds every future input ``u_prev + sum(du[:j+1])``;
    ``literal`` bounds each increment against the same right-hand sides.
    """
    nc = cfg.nc
    if cfg.input_constraint_mode == CUMULATIVE:
        L = np.tril(np.ones((nc, nc)))
    else:
        L = np.eye(nc)
    M = np.vstack([L, -L])
    gamma = np.concatenate([np.full(nc, cfg.u_max - u_prev),
                            np.full(nc, u_prev - cfg.u_min)])
    return M, gamma


def state_constraint_rows(pm, steps=None, stride=1):
    """Indices of predicted-output rows for steps 1, 1+stride, ... <= steps."""
    steps = pm.np_ if steps is None else min(int(steps), pm.np_)
    idx = [pm.q * m + i for m in range(0, steps, stride) for i in range(pm.q)]
    return np.array(idx, dtype=int)


def build_state_constraints(pm, state, sivd, v_preceding, steps=None, stride=1):
    """Collision-avoidance and forward-motion bounds on predicted outputs.

    With outputs ``(err, range_rate)`` the bounds ``err <= sivd`` and
    ``range_rate <= v_preceding`` mean range >= 0 and follower speed >= 0.
    The preceding speed (and hence sivd) is held over the horizon.
    """
    if pm.q != 2:
        raise DimensionMismatch("state constraints expect outputs (err, range_rate)")
    state = matqp.as_vector(state, "state")
    if state.shape != (pm.F.shape[1],):
        raise DimensionMismatch(
            f"state has {state.size} entries, model has {pm.F.shape[1]}")
    rows = state_constraint_rows(pm, steps, stride)
    bound = np.tile([float(sivd), float(v_preceding)], pm.np_)[rows]
    M = pm.Phi[rows]
    gamma = bound - pm.F[rows] @ state
    return M, gamma


@dataclass
class StepDiagnostics:
    delta_u: np.ndarray
    duals: np.ndarray
    status: str
    kkt: float
    iterations: int = 0
    clamped: bool = False
    dropped_rows: int = 0
    extra: dict = field(default_factory=dict)


class MpcController:
    """Spacing controller with the prediction matrices built once.

    ``step`` takes the measured error state ``(err, d err/dt, a2)``, the
    previously applied command and the current preceding-vehicle speed and
    returns the new acceleration command with solver diagnostics.  The
    command is clamped to ``[u_min, u_max]`` as a safety net when input
    constraints are on; after a converged solve the clamp is inactive.
    """

    def __init__(self, cfg=None, ss=None):
        self.cfg = cfg or MpcConfig()
        self.base = ss or acc_state_space(self.cfg.sample_time, self.cfg.tau)
        self.model = augment(self.base) if self.cfg.formulation == AUGMENTED else self.base
        self.pm = build_prediction(self.model, self.cfg.np_, self.cfg.nc)
        self.E, _ = build_cost(self.pm, self.cfg, np.zeros(self.model.n))

    def model_state(self, state, u_prev):
        state = matqp.as_vector(state, "state")
        if self.cfg.formulation == AUGMENTED:
            return np.append(state, float(u_prev))
        return state

    def problem(self, state, u_prev, sivd, v_preceding):
        cfg = self.cfg
        x = self.model_state(state, u_prev)
        _, f = build_cost(self.pm, cfg, x)
        Ms, gs = [], []
        if cfg.input_constraints:
            if cfg.formulation == POSITIONAL:
                # commands bounded directly: u_min <= dU[j] <= u_max
                M, g = build_input_constraints(0.0, replace(cfg, input_constraint_mode=LITERAL))
            else:
                M, g = build_input_constraints(u_prev, cfg)
            Ms.append(M)
            gs.append(g)
        if cfg.state_constraints:
            M, g = build_state_constraints(
                self.pm, x, sivd, v_preceding,
                cfg.state_constraint_steps, cfg.state_constraint_stride)
            Ms.append(M)
            gs.append(g)
        dropped = 0
        if Ms:
            M = np.vstack(Ms)
            g = np.concatenate(gs)
            # rows independent of dU cannot be influenced
            live = np.abs(M).max(axis=1) > 0
            dropped = int((~live).sum())
            M, g = M[live], g[live]
        else:
            M = g = None
        return matqp.QpProblem(self.E, f, M, g), dropped

    def step(self, state, u_prev, sivd=0.0, v_preceding=0.0):
        cfg = self.cfg
        prob, dropped = self.problem(state, u_prev, sivd, v_preceding)
        sol = matqp.hildreth_qp(prob, cfg.qp_tol, cfg.qp_max_iter)
        u = float(sol.delta_u[0])
        if cfg.formulation != POSITIONAL:
            u += float(u_prev)
        clamped = False
        if cfg.input_constraints:
            lo, hi = cfg.u_min, cfg.u_max
            if u < lo or u > hi:
                # flag only clamps beyond solver round-off
                clamped = u < lo - matqp.FEAS_TOL or u > hi + matqp.FEAS_TOL
                u = min(max(u, lo), hi)
        diag = StepDiagnostics(sol.delta_u, sol.duals, sol.status, sol.kkt,
                               sol.iterations, clamped, dropped)
        return u, diag


def mpc_step(ss, cfg, state, u_prev, sivd=0.0, v_preceding=0.0):
    """One receding-horizon step; returns ``(u_applied, diagnostics)``."""
    return MpcController(cfg, ss).step(state, u_prev, sivd, v_preceding)
