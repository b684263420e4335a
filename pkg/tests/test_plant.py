import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accmpc import plant
from accmpc.errors import StateOutOfRange
from accmpc.plant import (LagState, PowertrainState, VehicleParams, gear_schedule,
                          lag_plant_step, llc_command, nonlinear_plant_step)

P = VehicleParams()
finite = st.floats(-50, 50, allow_nan=False)


def test_lag_step_example():
    s = lag_plant_step(LagState(0.0, 30.0, 0.0), -4.905, 0.1, 0.5)
    assert s.x == pytest.approx(3.0)
    assert s.v == pytest.approx(30.0)
    assert s.a == pytest.approx(-0.981)


def test_lag_fixed_point_and_standstill():
    s = lag_plant_step(LagState(0.0, 10.0, 1.3), 1.3, 0.1, 0.5)
    assert s.a == pytest.approx(1.3, abs=1e-15)
    s = lag_plant_step(LagState(0.0, 0.0, -1.0), -2.0, 0.1, 0.5)
    assert s.v == 0.0 and s.a == 0.0


@settings(max_examples=200, deadline=None)
@given(finite, st.floats(0, 40), finite, finite)
def test_lag_contracts_geometrically(x, v, a, u):
    s = LagState(x, v + 1000.0, a)  # keep clear of the standstill clamp
    for _ in range(25):  # 5 tau at T = 0.1, tau = 0.5
        s = lag_plant_step(s, u, 0.1, 0.5)
    assert abs(s.a - u) <= 0.8 ** 25 * abs(a - u) * (1 + 1e-9) + 1e-12


def test_lag_reaches_tolerance_within_five_tau_for_small_gaps():
    # 0.8**25 = 0.0038, so a 0.25 m/s^2 gap closes to 1e-3 within 2.5 s
    s = LagState(0.0, 100.0, 0.0)
    for _ in range(25):
        s = lag_plant_step(s, 0.25, 0.1, 0.5)
    assert abs(s.a - 0.25) <= 1e-3


def test_lag_full_deceleration_needs_longer_than_five_tau():
    s = LagState(0.0, 100.0, 0.0)
    steps = 0
    while abs(s.a + 4.905) > 1e-3:
        s = lag_plant_step(s, -4.905, 0.1, 0.5)
        steps += 1
    assert steps == math.ceil(math.log(1e-3 / 4.905) / math.log(0.8))


@settings(max_examples=200, deadline=None)
@given(*[finite] * 8, st.floats(0, 3), st.floats(0, 3))
def test_lag_superposition(x1, v1, a1, u1, x2, v2, a2, u2, c1, c2):
    # large speeds and nonnegative weights keep every step on the linear branch
    v1, v2 = abs(v1) + 200, abs(v2) + 200
    s1 = lag_plant_step(LagState(x1, v1, a1), u1, 0.1, 0.5)
    s2 = lag_plant_step(LagState(x2, v2, a2), u2, 0.1, 0.5)
    mix = LagState(c1 * x1 + c2 * x2, c1 * v1 + c2 * v2, c1 * a1 + c2 * a2)
    s = lag_plant_step(mix, c1 * u1 + c2 * u2, 0.1, 0.5)
    for got, e1, e2 in zip((s.x, s.v, s.a), (s1.x, s1.v, s1.a), (s2.x, s2.v, s2.a)):
        scale = 1 + abs(c1 * e1) + abs(c2 * e2)
        assert abs(got - (c1 * e1 + c2 * e2)) <= 1e-12 * scale


def test_speed_density_and_torque_values():
    p_man, omega = 0.8 * P.p_atm, 300.0
    m_ao = plant.air_out(p_man, omega, P)
    hand = 0.9 * 0.0038 / (4 * math.pi) * 300.0 * 81060.0 / (287.0 * 293.0)
    assert m_ao == pytest.approx(hand, rel=1e-12)
    assert m_ao == pytest.approx(0.0787, abs=5e-4)
    assert plant.combustion_torque(p_man, omega, P) == pytest.approx(7.5e5 * hand / 300.0)
    assert plant.combustion_torque(p_man, omega, P) == pytest.approx(197, abs=0.5)


def test_steady_manifold_pressure_balances_flows():
    for alpha in (5.0, 20.0, 45.0, 90.0):
        for omega in (80.0, 250.0, 600.0):
            pm = plant.steady_manifold_pressure(alpha, omega, P)
            assert plant.air_in(alpha, pm, P) == pytest.approx(plant.air_out(pm, omega, P),
                                                               rel=1e-9)
            s = PowertrainState(0.0, 20.0, pm, omega, 3, alpha)
            assert plant.powertrain_derivatives(s, P)[0] == pytest.approx(0.0, abs=1e-6)


def test_rolling_only_at_rest():
    s = PowertrainState(0.0, 0.0, 1000.0, P.idle_speed, 1, 0.0)
    acc = plant.powertrain_derivatives(s, P)[2]
    assert acc < 0
    assert plant.acceleration(s, P) == 0.0


def test_state_checks():
    with pytest.raises(StateOutOfRange):
        plant.powertrain_derivatives(PowertrainState(p_man=0.0, omega_e=100.0), P)
    with pytest.raises(StateOutOfRange):
        plant.powertrain_derivatives(PowertrainState(omega_e=10.0), P)
    with pytest.raises(StateOutOfRange):
        plant.powertrain_derivatives(PowertrainState(omega_e=100.0, gear=6), P)
    with pytest.raises(ValueError):
        VehicleParams(mass=-1.0)


@pytest.mark.parametrize("v, gear, expected", [
    (30.0, 5, 5), (12.0, 2, 3), (10.5, 3, 3), (4.0, 2, 1), (6.5, 1, 2), (5.5, 2, 2),
])
def test_gear_schedule(v, gear, expected):
    assert gear_schedule(v, gear) == expected
    assert gear_schedule(v, gear, P) == expected


def test_gear_schedule_single_shift_per_call():
    assert gear_schedule(40.0, 1) == 2
    assert gear_schedule(0.0, 5) == 4


def test_llc_fixed_point():
    s = plant.cruise_state(25.0, P)
    throttle, brake = llc_command(0.0, s, P)
    assert brake == 0.0
    assert throttle == pytest.approx(s.throttle, abs=1e-6)
    force = plant.static_drive_force(throttle, s.velocity, s.gear, P)
    assert force == pytest.approx(plant.road_load(s.velocity, P), abs=1e-3)


def test_llc_brake_and_saturation():
    s = plant.cruise_state(30.0, P)
    throttle, brake = llc_command(-4.905, s, P)
    assert throttle == 0.0 and brake > 0
    f_des = P.effective_mass * -4.905 + plant.road_load(30.0, P)
    assert brake == pytest.approx(-f_des * P.tyre_radius)
    assert llc_command(100.0, s, P) == (90.0, 0.0)


def test_steady_cruise_holds_speed():
    for v in (12.0, 20.0, 30.0):
        s = plant.cruise_state(v, P)
        s1 = nonlinear_plant_step(s, 0.0, P, 0.1)
        assert abs(s1.velocity - v) <= 0.01


def test_braking_monotone_and_floored():
    s = plant.cruise_state(30.0, P)
    prev = s.velocity
    for _ in range(150):
        s = nonlinear_plant_step(s, -0.5 * 9.81, P, 0.1)
        assert s.velocity <= prev + 1e-12
        assert s.velocity >= 0.0
        prev = s.velocity
    assert s.velocity == 0.0


def test_full_throttle_accelerates():
    s = plant.actuate(plant.cruise_state(3.0, P), 90.0, 0.0)
    prev = s.velocity
    for _ in range(50):
        s = plant.integrate(s, P, 0.1)
        assert s.velocity > prev
        prev = s.velocity


def _random_state(rng):
    v = float(rng.uniform(0, 45))
    gear = int(rng.integers(1, 6))
    omega = plant.engine_speed(v, gear, P)
    return PowertrainState(0.0, v, float(rng.uniform(1.0, P.p_atm)), omega, gear,
                           float(rng.uniform(0, 90)), float(rng.choice([0.0, rng.uniform(0, 4000)])))


def test_random_substeps_stay_admissible():
    rng = np.random.default_rng(99)
    for _ in range(100_000):
        s = plant._rk4_substep(_random_state(rng), P, 0.01)
        assert 0.0 < s.p_man <= P.p_atm
        assert P.idle_speed <= s.omega_e <= P.redline


def test_manifold_pressure_cannot_leave_its_range():
    # inflow vanishes at p_atm; with a closed throttle the pressure decays
    # at rate k with k * dt < 1, so the explicit substep stays positive
    for omega in (P.idle_speed, 300.0, P.redline):
        k = P.gas_constant * P.manifold_temp / P.manifold_volume * plant.air_out(1.0, omega, P)
        assert k * 0.01 < 1.0
        for alpha in (0.0, 45.0, 90.0):
            top = PowertrainState(0.0, 10.0, P.p_atm, omega, 3, alpha)
            assert plant.powertrain_derivatives(top, P)[0] <= 0.0
            low = PowertrainState(0.0, 10.0, 1.0, omega, 3, alpha)
            assert plant.powertrain_derivatives(low, P)[0] >= -k * 1.0 - 1e-12


def test_braking_kinetic_energy_non_increasing():
    rng = np.random.default_rng(4)
    for _ in range(40):
        v0 = float(rng.uniform(1, 40))
        s = plant.cruise_state(v0, P)
        f_hold = P.effective_mass * 1.0 + plant.road_load(v0, P)   # at least 1 m/s^2 of braking
        s = plant.actuate(s, 0.0, f_hold * P.tyre_radius)
        ke = s.velocity ** 2
        for _ in range(300):
            s = plant._rk4_substep(s, P, 0.01)
            assert s.velocity ** 2 <= ke + 1e-12
            ke = s.velocity ** 2


def test_rk4_step_halving_agreement():
    s0 = plant.actuate(plant.cruise_state(5.0, P), 90.0, 0.0)
    coarse = plant.integrate(s0, P, 10.0, dt=0.01)
    fine = plant.integrate(s0, P, 10.0, dt=0.001)
    assert abs(coarse.velocity - fine.velocity) <= 1e-3
