"""Synthetic ground-truth plant: a three-zone RC network with nonlinear valves.

Each zone exchanges heat with outdoors (conduction), its neighbours (zone 1
and 3 couple only through zone 2), and the supply air stream.  The air-handling
units run at constant fan speed, so the supply air enters at a temperature
between outdoor and chilled-water temperature depending on the valve angle;
the valve-to-flow map saturates, which is what makes the actuation nonlinear.
The model stands in for the real building: controllers only ever see its
sampled outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class TruthPlant:
    """Physical constants of the simulated three-zone cooling plant."""

    capacitance: np.ndarray  # (3,) J/K
    ua_out: np.ndarray  # (3,) W/K conduction to outdoors
    coupling: np.ndarray  # (2,) W/K for zone pairs (1,2) and (2,3)
    vent_ua: np.ndarray  # (3,) W/K of the constant supply-air stream
    coil_effectiveness: float  # max fraction of (T_out - T_sup) removed at full flow
    valve_shape: float  # saturation exponent of the valve-to-flow map
    theta_max: float  # degrees at full flow
    solar_aperture: np.ndarray  # (3,) W per (W/m^2); zone 3 is the most exposed
    occupancy_heat: np.ndarray  # (3,) W during working hours
    occupancy_hours: tuple[float, float] = (7.0, 19.0)
    process_noise_std: float = 0.0  # degC per 10-minute step; 0 disables

    def __post_init__(self):
        for name, size in (
            ("capacitance", 3),
            ("ua_out", 3),
            ("coupling", 2),
            ("vent_ua", 3),
            ("solar_aperture", 3),
            ("occupancy_heat", 3),
        ):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            if arr.shape != (size,):
                raise ValueError(f"{name} must have shape ({size},)")
            object.__setattr__(self, name, arr)

    def valve_flow(self, theta):
        """Fractional water flow for a valve angle; monotone and saturating."""
        frac = np.clip(np.asarray(theta, dtype=float) / self.theta_max, 0.0, 1.0)
        k = self.valve_shape
        return (1.0 - np.exp(-k * frac)) / (1.0 - np.exp(-k))

    def supply_air_temp(self, theta, t_sup: float, t_out: float):
        """Air temperature leaving the cooling coil for a given valve angle."""
        eff = self.coil_effectiveness * self.valve_flow(theta)
        return t_out - eff * (t_out - t_sup)

    def occupancy_gains(self, minutes_of_day: float) -> np.ndarray:
        """Deterministic internal heat schedule (working hours square wave)."""
        hour = (minutes_of_day / 60.0) % 24.0
        lo, hi = self.occupancy_hours
        if lo <= hour < hi:
            return self.occupancy_heat.copy()
        return np.zeros(3)


def default_plant() -> TruthPlant:
    """Nominal constants; see `demos/` for the closed-loop behaviour they give."""
    return TruthPlant(
        capacitance=np.array([4.0e6, 5.5e6, 4.5e6]),
        ua_out=np.array([110.0, 95.0, 120.0]),
        coupling=np.array([85.0, 85.0]),
        vent_ua=np.array([380.0, 450.0, 420.0]),
        coil_effectiveness=0.85,
        valve_shape=3.0,
        theta_max=90.0,
        solar_aperture=np.array([0.40, 0.30, 1.10]),
        occupancy_heat=np.array([500.0, 850.0, 700.0]),
    )


def perturbed_plant(plant: TruthPlant, fraction: float, seed: int) -> TruthPlant:
    """Independently scale every constant by (1 +- fraction); used to keep the
    evaluation plant disjoint from the one that generated training data."""
    rng = np.random.default_rng(seed)

    def scale(arr):
        return arr * (1.0 + fraction * rng.uniform(-1.0, 1.0, size=np.shape(arr)))

    return replace(
        plant,
        capacitance=scale(plant.capacitance),
        ua_out=scale(plant.ua_out),
        coupling=scale(plant.coupling),
        vent_ua=scale(plant.vent_ua),
        coil_effectiveness=float(
            np.clip(scale(np.array([plant.coil_effectiveness]))[0], 0.05, 0.98)
        ),
        solar_aperture=scale(plant.solar_aperture),
        occupancy_heat=scale(plant.occupancy_heat),
    )


def heat_flows(
    plant: TruthPlant,
    T: np.ndarray,
    theta: np.ndarray,
    t_sup: float,
    t_out: float,
    r_sol: float,
    gains: np.ndarray,
) -> np.ndarray:
    """Net heat flow into each zone in W."""
    T = np.asarray(T, dtype=float)
    t_sa = plant.supply_air_temp(np.asarray(theta, dtype=float), t_sup, t_out)
    q = plant.ua_out * (t_out - T)
    q = q + plant.vent_ua * (t_sa - T)
    q = q + plant.solar_aperture * r_sol
    q = q + np.asarray(gains, dtype=float)
    g12, g23 = plant.coupling
    q[0] += g12 * (T[1] - T[0])
    q[1] += g12 * (T[0] - T[1]) + g23 * (T[2] - T[1])
    q[2] += g23 * (T[1] - T[2])
    return q


def plant_step(
    plant: TruthPlant,
    T: np.ndarray,
    theta: np.ndarray,
    t_sup: float,
    t_out: float,
    r_sol: float,
    gains: np.ndarray,
    dt_seconds: float = 120.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One forward-Euler step of the RC network; deterministic given the rng."""
    q = heat_flows(plant, T, theta, t_sup, t_out, r_sol, gains)
    T_next = np.asarray(T, dtype=float) + dt_seconds * q / plant.capacitance
    if rng is not None and plant.process_noise_std > 0.0:
        scale = plant.process_noise_std * np.sqrt(dt_seconds / 600.0)
        T_next = T_next + rng.normal(0.0, scale, size=3)
    return T_next


def equilibrium_bound(plant: TruthPlant, t_sup: float, t_out: float, r_sol: float) -> np.ndarray:
    """Upper bound on steady-state zone temperatures with valves closed and all
    gains active: solve the linear balance at theta = 0."""
    n = 3
    A = np.zeros((n, n))
    b = np.zeros(n)
    t_sa = plant.supply_air_temp(np.zeros(3), t_sup, t_out)
    for i in range(n):
        A[i, i] = plant.ua_out[i] + plant.vent_ua[i]
        b[i] = (
            plant.ua_out[i] * t_out
            + plant.vent_ua[i] * t_sa[i]
            + plant.solar_aperture[i] * r_sol
            + plant.occupancy_heat[i]
        )
    g12, g23 = plant.coupling
    A[0, 0] += g12
    A[0, 1] -= g12
    A[1, 1] += g12 + g23
    A[1, 0] -= g12
    A[1, 2] -= g23
    A[2, 2] += g23
    A[2, 1] -= g23
    return np.linalg.solve(A, b)


# ---------------------------------------------------------------------------
# weather scenarios


@dataclass(frozen=True)
class WeatherScenario:
    """One day of disturbances at the control period."""

    label: str
    period_minutes: float
    t_out: np.ndarray
    t_sup: np.ndarray
    r_sol: np.ndarray

    def __post_init__(self):
        for name in ("t_out", "t_sup", "r_sol"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            object.__setattr__(self, name, arr)
        if not (len(self.t_out) == len(self.t_sup) == len(self.r_sol)):
            raise ValueError("scenario traces must have equal length")

    @property
    def n(self) -> int:
        return len(self.t_out)

    def minutes(self) -> np.ndarray:
        return np.arange(self.n) * self.period_minutes


def diurnal_traces(minutes: np.ndarray, peak_t_out: float = 35.0):
    """Smooth synthetic day: outdoor low ~22 degC at 02:00, peak at 14:00;
    solar between 06:00 and 18:00; supply water warms slightly under load."""
    hours = (minutes / 60.0) % 24.0
    half_span = (peak_t_out - 22.0) / 2.0
    t_out = peak_t_out - half_span + half_span * -np.cos(2 * np.pi * (hours - 2.0) / 24.0)
    sun = np.sin(np.pi * (hours - 6.0) / 12.0)
    r_sol = 900.0 * np.clip(sun, 0.0, None) ** 1.5
    t_sup = 10.5 + 1.0 * np.clip(np.sin(np.pi * (hours - 7.0) / 12.0), 0.0, None)
    return t_out, t_sup, r_sol


def make_hot_day(duration_hours: float = 24.0, period_minutes: float = 10.0) -> WeatherScenario:
    n = int(round(duration_hours * 60.0 / period_minutes))
    minutes = np.arange(n) * period_minutes
    t_out, t_sup, r_sol = diurnal_traces(minutes, peak_t_out=35.0)
    return WeatherScenario("hot", period_minutes, t_out, t_sup, r_sol)


def make_scenarios(hot: WeatherScenario) -> dict[str, WeatherScenario]:
    """Hot day plus its -2 degC (warm) and -5 degC (mild) shifted versions;
    supply water and solar traces are shared."""
    peak = float(np.max(hot.t_out))
    if abs(peak - 35.0) > 0.75:
        raise ValueError(f"hot trace must peak at 35 degC, got {peak:.2f}")
    warm = WeatherScenario("warm", hot.period_minutes, hot.t_out - 2.0, hot.t_sup, hot.r_sol)
    mild = WeatherScenario("mild", hot.period_minutes, hot.t_out - 5.0, hot.t_sup, hot.r_sol)
    return {"hot": hot, "warm": warm, "mild": mild}
