"""Two-vehicle closed loop: preceding-vehicle profiles, error state, logging."""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import plant
from .errors import ConfigError
from .mpc import MpcConfig, MpcController

PROFILES = ("constant", "accelerating", "sudden_brake", "stopped", "cut_in")
TIERS = ("linear", "nonlinear")
PRECEDING_MODELS = ("profile", "throttle")

COLUMNS = ("t", "x1", "v1", "a1", "x2", "v2", "a2", "u", "range", "range_rate",
           "sivd", "err", "qp_status", "gear", "omega_e", "p_man", "throttle", "brake")
NONLINEAR_COLUMNS = ("gear", "omega_e", "p_man", "throttle", "brake")


@dataclass(frozen=True)
class ScenarioConfig:
    """Initial conditions and preceding-vehicle behaviour.

    Defaults reproduce the accelerating-leader transitional manoeuvre: the
    follower at 30 m/s closes on a leader that starts 60 m ahead at 10 m/s
    and accelerates towards 31.3 m/s.
    """

    initial_range: float = 60.0
    v_acc0: float = 30.0
    v_prec0: float = 10.0
    headway: float = 1.0
    profile: str = "accelerating"
    v_final: float = 31.3
    time_const: float = 15.0
    decel: float = 5.0
    t_start: float = 2.0
    range_drop: float = 10.0
    t_event: float = 5.0
    duration: float = 60.0
    plant_tier: str = "linear"
    preceding_model: str = "profile"
    preceding_throttle: float = 50.0

    def __post_init__(self):
        checks = [
            (self.initial_range > 0, "initial_range > 0"),
            (self.v_acc0 >= 0 and self.v_prec0 >= 0, "speeds >= 0"),
            (self.headway > 0, "headway > 0"),
            (self.duration > 0, "duration > 0"),
            (self.profile in PROFILES, f"profile in {PROFILES}"),
            (self.plant_tier in TIERS, f"plant_tier in {TIERS}"),
            (self.preceding_model in PRECEDING_MODELS,
             f"preceding_model in {PRECEDING_MODELS}"),
            (self.time_const > 0, "time_const > 0"),
            (self.decel > 0, "decel > 0"),
            (self.v_final >= 0, "v_final >= 0"),
            (self.range_drop >= 0, "range_drop >= 0"),
            (0 <= self.preceding_throttle <= 90, "0 <= preceding_throttle <= 90"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ConfigError(f"invalid ScenarioConfig: requires {rule}")
        if self.preceding_model == "throttle" and self.plant_tier != "nonlinear":
            raise ConfigError("preceding_model = throttle needs plant_tier = nonlinear")


@dataclass(frozen=True)
class ErrorState:
    """Follower error state in the frame moving with the leader.

    ``err`` is the spacing error SIVD - range (positive when too close),
    ``err_dot`` its time derivative (follower minus leader speed) and
    ``acc`` the follower's acceleration.
    """

    err: float
    err_dot: float
    acc: float

    def as_vector(self):
        return np.array([self.err, self.err_dot, self.acc])


def compute_sivd(h, v_preceding):
    return h * v_preceding


def build_error_state(x1, v1, x2, v2, a2, h):
    rng = x1 - x2
    if rng <= 0:
        warnings.warn(f"vehicles overlap (range {rng:.3f} m)", RuntimeWarning, stacklevel=2)
    sivd = compute_sivd(h, v1)
    return ErrorState(-(rng - sivd), v2 - v1, a2)


def preceding_profile(cfg, t):
    """Leader ``(x1, v1, a1)`` at time ``t``; x1 is relative to the follower's
    start position."""
    x0, v0 = cfg.initial_range, cfg.v_prec0
    kind = cfg.profile
    if kind == "stopped":
        return x0, 0.0, 0.0
    if kind == "constant":
        return x0 + v0 * t, v0, 0.0
    if kind == "cut_in":
        drop = cfg.range_drop if t >= cfg.t_event else 0.0
        return x0 + v0 * t - drop, v0, 0.0
    if kind == "accelerating":
        vf, tc = cfg.v_final, cfg.time_const
        decay = math.exp(-t / tc)
        v = vf - (vf - v0) * decay
        x = x0 + vf * t - (vf - v0) * tc * (1.0 - decay)
        return x, v, (vf - v0) / tc * decay
    # sudden_brake: cruise, then constant deceleration down to v_final (>= 0)
    ts, d = cfg.t_start, cfg.decel
    v_end = max(0.0, min(cfg.v_final, v0))
    if t <= ts:
        return x0 + v0 * t, v0, 0.0
    x_ts = x0 + v0 * ts
    t_brake = (v0 - v_end) / d
    tau = t - ts
    if tau < t_brake:
        return x_ts + v0 * tau - 0.5 * d * tau * tau, v0 - d * tau, -d
    x_end = x_ts + v0 * t_brake - 0.5 * d * t_brake * t_brake
    return x_end + v_end * (tau - t_brake), v_end, 0.0


@dataclass
class TrajectoryLog:
    """Per-tick records of both vehicles, the command and controller status."""

    sample_time: float
    rows: list = field(default_factory=list)
    nonlinear: bool = False

    def append(self, **row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name):
        return np.array([r.get(name) for r in self.rows], dtype=float)

    def statuses(self):
        return [r["qp_status"] for r in self.rows]


class _LinearFollower:
    def __init__(self, scn, cfg, params):
        self.T, self.tau = cfg.sample_time, cfg.tau
        self.s = plant.LagState(0.0, scn.v_acc0, 0.0)

    def measure(self):
        return self.s.x, self.s.v, self.s.a, {}

    def advance(self, u):
        self.s = plant.lag_plant_step(self.s, u, self.T, self.tau)


class _NonlinearFollower:
    def __init__(self, scn, cfg, params, v0=None, x0=0.0):
        self.T = cfg.sample_time
        self.p = params
        self.s = plant.cruise_state(scn.v_acc0 if v0 is None else v0, params, x0)
        self.pending = None

    def measure(self):
        s = self.s
        return s.position, s.velocity, plant.acceleration(s, self.p), {
            "gear": s.gear, "omega_e": s.omega_e, "p_man": s.p_man,
            "throttle": s.throttle, "brake": s.brake_torque}

    def command(self, u):
        throttle, brake = plant.llc_command(u, self.s, self.p)
        self.s = plant.actuate(self.s, throttle, brake)
        return throttle, brake

    def advance(self, u):
        self.s = plant.integrate(self.s, self.p, self.T)


class _ThrottleLeader:
    """Leader simulated on the nonlinear plant at a fixed throttle."""

    def __init__(self, scn, cfg, params):
        self.veh = _NonlinearFollower(scn, cfg, params, v0=scn.v_prec0,
                                      x0=scn.initial_range)
        self.veh.s = plant.actuate(self.veh.s, scn.preceding_throttle, 0.0)

    def state(self):
        x, v, a, _ = self.veh.measure()
        return x, v, a

    def advance(self):
        self.veh.advance(None)


def run_closed_loop(scn, cfg=None, params=None, controller=None):
    """Simulate the follower under MPC for ``scn.duration`` seconds.

    Returns a :class:`TrajectoryLog` with ``round(duration / T) + 1`` rows.
    Collisions are recorded (range <= 0) and the run continues.
    """
    cfg = cfg or MpcConfig()
    params = params or plant.VehicleParams()
    if not isinstance(scn, ScenarioConfig) or not isinstance(cfg, MpcConfig):
        raise ConfigError("run_closed_loop expects ScenarioConfig and MpcConfig")
    ctrl = controller or MpcController(cfg)
    T = cfg.sample_time
    steps = int(round(scn.duration / T))
    nonlinear = scn.plant_tier == "nonlinear"
    follower = (_NonlinearFollower if nonlinear else _LinearFollower)(scn, cfg, params)
    leader = _ThrottleLeader(scn, cfg, params) if scn.preceding_model == "throttle" else None

    log = TrajectoryLog(T, nonlinear=nonlinear)
    u_prev = 0.0
    for k in range(steps + 1):
        t = round(k * T, 9)
        x1, v1, a1 = leader.state() if leader else preceding_profile(scn, t)
        x2, v2, a2, extra = follower.measure()
        rng = x1 - x2
        sivd = compute_sivd(scn.headway, v1)
        e = ErrorState(-(rng - sivd), v2 - v1, a2)
        u, diag = ctrl.step(e.as_vector(), u_prev, sivd, v1)
        if nonlinear:
            throttle, brake = follower.command(u)
            extra.update(throttle=throttle, brake=brake)
        log.append(t=t, x1=x1, v1=v1, a1=a1, x2=x2, v2=v2, a2=a2, u=u,
                   range=rng, range_rate=v1 - v2, sivd=sivd, err=e.err,
                   qp_status=diag.status, **extra)
        if k < steps:
            follower.advance(u)
            if leader:
                leader.advance()
        u_prev = u
    return log
