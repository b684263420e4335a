"""Vehicle plants.

Two tiers share the interface "acceleration command in, vehicle state out":

* the first-order-lag point mass ``tau a' + a = u`` discretized with the
  controller's own sample time;
* a longitudinal vehicle with manifold-pressure and engine-speed dynamics,
  five-speed gearbox, throttle/brake actuation and a lower-level controller
  that maps desired acceleration to throttle or brake torque.

The engine sub-maps (throttle flow, speed-density outflow, combustion torque,
friction, drag, rolling resistance) are simple closed forms whose constants
live in :class:`VehicleParams`.
"""
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import StateOutOfRange

G = 9.81
P_ATM = 101325.0


@dataclass(frozen=True)
class LagState:
    x: float = 0.0
    v: float = 0.0
    a: float = 0.0


def lag_plant_step(s, u, T, tau):
    """Advance the lag plant one sample with a zero-order-held command."""
    k = T / tau
    x = s.x + T * s.v
    v = s.v + T * s.a
    a = (1.0 - k) * s.a + k * u
    if v < 0.0:
        v = 0.0
        a = max(a, 0.0)
    return LagState(x, v, a)


@dataclass(frozen=True)
class VehicleParams:
    displacement: float = 0.0038        # V_d, m^3
    manifold_volume: float = 0.0027     # V_man, m^3
    manifold_temp: float = 293.0        # T_man, K
    engine_inertia: float = 0.1454      # I_e, kg m^2
    mass: float = 1644.0                # kg
    accessory_torque: float = 25.0      # T_a, N m
    tyre_radius: float = 0.3            # r_eff, m
    wheel_inertia: float = 2.8          # I_w per wheel, kg m^2
    grade: float = 0.0                  # rad
    gas_constant: float = 287.0         # J/(kg K)
    p_atm: float = P_ATM
    max_air_flow: float = 0.12          # kg/s at wide-open throttle
    volumetric_eff: float = 0.9
    torque_per_air: float = 7.5e5       # J/kg
    friction_c0: float = 20.0           # N m
    friction_c1: float = 0.03           # N m s/rad
    air_density: float = 1.225
    drag_coeff: float = 0.30
    frontal_area: float = 2.2
    rolling_coeff: float = 0.015
    gear_ratios: tuple = (3.5, 2.0, 1.4, 1.0, 0.8)
    final_drive: float = 3.06
    idle_speed: float = 73.0            # rad/s
    redline: float = 628.0              # rad/s
    upshift: tuple = (6.0, 11.0, 17.0, 24.0)
    downshift: tuple = (5.0, 10.0, 16.0, 23.0)

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if name == "grade":
                ok = math.isfinite(val)
            elif isinstance(val, tuple):
                ok = len(val) > 0 and all(v > 0 for v in val)
            else:
                ok = val > 0 and math.isfinite(val)
            if not ok:
                raise ValueError(f"VehicleParams.{name} out of range: {val!r}")
        if len(self.upshift) != len(self.gear_ratios) - 1 or \
                len(self.downshift) != len(self.gear_ratios) - 1:
            raise ValueError("shift tables need one entry per gear change")

    @property
    def effective_mass(self):
        return self.mass + 4.0 * self.wheel_inertia / self.tyre_radius ** 2

    def total_ratio(self, gear):
        return self.gear_ratios[gear - 1] * self.final_drive


@dataclass(frozen=True)
class PowertrainState:
    position: float = 0.0
    velocity: float = 0.0
    p_man: float = 0.5 * P_ATM
    omega_e: float = 100.0
    gear: int = 1
    throttle: float = 0.0
    brake_torque: float = 0.0


# -- sub-maps ---------------------------------------------------------------

def throttle_factor(alpha):
    alpha = min(max(alpha, 0.0), 90.0)
    return 0.5 * (1.0 - math.cos(alpha * math.pi / 90.0))


def pressure_factor(ratio):
    ratio = min(max(ratio, 0.0), 1.0)
    if ratio <= 0.5:
        return 1.0
    return 2.0 * math.sqrt(ratio * (1.0 - ratio))


def air_in(alpha, p_man, p):
    return p.max_air_flow * throttle_factor(alpha) * pressure_factor(p_man / p.p_atm)


def air_out(p_man, omega_e, p):
    return (p.volumetric_eff * p.displacement / (4.0 * math.pi) * omega_e
            * p_man / (p.gas_constant * p.manifold_temp))


def combustion_torque(p_man, omega_e, p):
    # k_T * m_ao / omega does not depend on omega for speed-density flow
    return p.torque_per_air * air_out(p_man, 1.0, p)


def friction_torque(omega_e, p):
    return p.friction_c0 + p.friction_c1 * omega_e


def aero_force(v, p):
    return 0.5 * p.air_density * p.drag_coeff * p.frontal_area * v * v


def rolling_torque(p):
    return p.rolling_coeff * p.mass * G * p.tyre_radius


def steady_manifold_pressure(alpha, omega_e, p):
    """Manifold pressure at which inflow equals speed-density outflow."""
    a = p.max_air_flow * throttle_factor(alpha)
    b = air_out(p.p_atm, omega_e, p)
    if 2.0 * a <= b:
        ratio = a / b
    else:
        ratio = 4.0 * a * a / (4.0 * a * a + b * b)
    return ratio * p.p_atm


def engine_net_torque(p_man, omega_e, p):
    return (combustion_torque(p_man, omega_e, p) - friction_torque(omega_e, p)
            - p.accessory_torque)


def kinematic_engine_speed(v, gear, p):
    return v * p.total_ratio(gear) / p.tyre_radius


def engine_speed(v, gear, p):
    return min(max(kinematic_engine_speed(v, gear, p), p.idle_speed), p.redline)


def road_load(v, p):
    """Drag, rolling resistance and grade force opposing motion."""
    return aero_force(v, p) + rolling_torque(p) / p.tyre_radius + p.mass * G * math.sin(p.grade)


# -- dynamics ---------------------------------------------------------------

def check_state(s, p):
    if not 0.0 < s.p_man <= p.p_atm * (1.0 + 1e-12):
        raise StateOutOfRange(f"p_man={s.p_man} outside (0, {p.p_atm}]")
    if not p.idle_speed - 1e-9 <= s.omega_e <= p.redline + 1e-9:
        raise StateOutOfRange(f"omega_e={s.omega_e} outside [idle, redline]")
    if s.gear not in range(1, len(p.gear_ratios) + 1):
        raise StateOutOfRange(f"gear={s.gear}")
    if not (math.isfinite(s.velocity) and math.isfinite(s.position)):
        raise StateOutOfRange("non-finite position/velocity")


def powertrain_derivatives(s, p):
    """Return ``(dp_man, domega_e, accel)`` at state ``s``.

    The torque converter is locked while the engine turns at or above idle,
    so engine and wheels form one rigid body: the pump torque ``T_p`` is
    whatever the wheels absorb.  Below idle speed the coupling slips, the
    engine holds idle and its net torque reaches the wheels.
    """
    check_state(s, p)
    r = p.tyre_radius
    ratio = p.total_ratio(s.gear)
    m_ai = air_in(s.throttle, s.p_man, p)
    m_ao = air_out(s.p_man, s.omega_e, p)
    dp_man = p.gas_constant * p.manifold_temp / p.manifold_volume * (m_ai - m_ao)

    t_net = engine_net_torque(s.p_man, s.omega_e, p)
    if s.omega_e >= p.redline:
        t_net = min(t_net, 0.0)  # fuel cut
    resist = road_load(s.velocity, p)
    f_brake = s.brake_torque / r
    m_eff = p.effective_mass
    locked = kinematic_engine_speed(s.velocity, s.gear, p) >= p.idle_speed
    if locked:
        inertia = m_eff + p.engine_inertia * (ratio / r) ** 2
        accel = (t_net * ratio / r - resist - f_brake) / inertia
        f_drive = m_eff * accel + resist + f_brake
    else:
        f_drive = t_net * ratio / r
        accel = (f_drive - resist - f_brake) / m_eff
    t_pump = f_drive * r / ratio
    domega = (t_net - t_pump) / p.engine_inertia if locked else 0.0
    return dp_man, domega, accel


def gear_schedule(velocity, current_gear, p=None):
    """Next gear with hysteresis; at most one shift per call."""
    up = p.upshift if p else (6.0, 11.0, 17.0, 24.0)
    down = p.downshift if p else (5.0, 10.0, 16.0, 23.0)
    top = len(up) + 1
    g = int(current_gear)
    if g < top and velocity > up[g - 1]:
        return g + 1
    if g > 1 and velocity < down[g - 2]:
        return g - 1
    return g


def static_drive_force(alpha, v, gear, p):
    """Wheel force at steady manifold pressure for throttle ``alpha``."""
    omega = engine_speed(v, gear, p)
    p_ss = steady_manifold_pressure(alpha, omega, p)
    return engine_net_torque(p_ss, omega, p) * p.total_ratio(gear) / p.tyre_radius


def llc_command(a_des, s, p, tol=1e-3, max_iter=60):
    """Translate a desired acceleration into ``(throttle_deg, brake_torque)``."""
    v = s.velocity
    f_des = (p.effective_mass * a_des + aero_force(v, p) + p.rolling_coeff * p.mass * G
             + p.mass * G * math.sin(p.grade))
    if f_des < 0.0:
        return 0.0, -f_des * p.tyre_radius
    lo, hi = 0.0, 90.0
    if static_drive_force(hi, v, s.gear, p) <= f_des:
        return hi, 0.0
    if static_drive_force(lo, v, s.gear, p) >= f_des:
        return lo, 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        err = static_drive_force(mid, v, s.gear, p) - f_des
        if abs(err) <= tol:
            return mid, 0.0
        if err < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), 0.0


def _rk4(s, p, dt):
    """One RK4 step in the current gear (no shifting)."""
    def deriv(x, v, pm):
        st = replace(s, position=x, velocity=max(v, 0.0),
                     p_man=min(max(pm, 1e-9), p.p_atm),
                     omega_e=engine_speed(max(v, 0.0), s.gear, p))
        dp, _, acc = powertrain_derivatives(st, p)
        if v <= 0.0 and acc < 0.0:
            acc = 0.0  # standstill: resistances cannot push backwards
        return np.array([max(v, 0.0), acc, dp])

    y = np.array([s.position, s.velocity, s.p_man])
    k1 = deriv(*y)
    k2 = deriv(*(y + 0.5 * dt * k1))
    k3 = deriv(*(y + 0.5 * dt * k2))
    k4 = deriv(*(y + dt * k3))
    y = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    v = max(float(y[1]), 0.0)
    pm = min(max(float(y[2]), 1e-9), p.p_atm)
    return replace(s, position=float(y[0]), velocity=v, p_man=pm,
                   omega_e=engine_speed(v, s.gear, p))


def _rk4_substep(s, p, dt):
    """RK4 substep with the gear schedule applied.  A shift is placed at the
    (linearly interpolated) threshold crossing inside the substep so the
    result converges at the integrator's order rather than O(dt)."""
    out = _rk4(s, p, dt)
    gear = gear_schedule(out.velocity, s.gear, p)
    if gear == s.gear:
        return out
    thr = p.upshift[s.gear - 1] if gear > s.gear else p.downshift[s.gear - 2]
    dv = out.velocity - s.velocity
    theta = (thr - s.velocity) / dv if dv else 1.0
    if 0.0 < theta < 1.0:
        mid = _rk4(s, p, theta * dt)
        mid = replace(mid, gear=gear, omega_e=engine_speed(mid.velocity, gear, p))
        out = _rk4(mid, p, (1.0 - theta) * dt)
    return replace(out, gear=gear, omega_e=engine_speed(out.velocity, gear, p))


def actuate(s, throttle, brake_torque):
    return replace(s, throttle=float(throttle), brake_torque=float(brake_torque))


def integrate(s, p, duration, dt=0.01):
    """Integrate with the actuator settings already stored in ``s``."""
    n = max(1, int(round(duration / dt)))
    for _ in range(n):
        s = _rk4_substep(s, p, dt)
    return s


def nonlinear_plant_step(s, a_des, p, T, dt=0.01):
    """One controller period: LLC once, then fixed-step RK4 substeps."""
    if T <= 0:
        raise ValueError("T must be positive")
    check_state(s, p)
    throttle, brake = llc_command(a_des, s, p)
    return integrate(actuate(s, throttle, brake), p, T, dt)


def acceleration(s, p):
    acc = powertrain_derivatives(s, p)[2]
    return 0.0 if s.velocity <= 0.0 and acc < 0.0 else acc


def cruise_state(v, p, position=0.0, gear=None):
    """Steady cruise at speed ``v``: gear from the schedule, throttle holding
    speed, manifold pressure at its equilibrium."""
    if gear is None:
        gear = 1
        for _ in range(len(p.gear_ratios)):
            gear = gear_schedule(v, gear, p)
    omega = engine_speed(v, gear, p)
    s = PowertrainState(position, v, 0.5 * p.p_atm, omega, gear)
    throttle, brake = llc_command(0.0, s, p)
    p_ss = steady_manifold_pressure(throttle, omega, p)
    return replace(s, p_man=p_ss, throttle=throttle, brake_torque=brake)

