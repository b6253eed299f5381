"""Closed-loop simulation harness and the synthetic data recorder.

Controllers interact with the plant through a narrow observation interface
(measured temperatures, last command, current disturbances), so the MPC never
reads plant internals.  Everything a run produces lands in a
:class:`SimTrace`; wall-clock solver times are kept out of the trace proper so
that repeated runs are byte-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mpc as mpc_mod
from .baselines import PiParams, PiState, avg_step, onoff_step, pi_step, ref_solve
from .building import BuildingState, ZoneModelSet
from .chiller import PolyCurve1, PolySurface2, electrical_power
from .errors import DataError
from .pipeline import CHANNELS, RawSeries
from .plant import TruthPlant, WeatherScenario, plant_step
from .serialize import fmt_float, read_csv, write_csv


@dataclass
class Observation:
    """What a controller is allowed to see at one control instant."""

    step: int
    minutes: float
    T: np.ndarray
    T_prev: np.ndarray
    theta_prev: np.ndarray
    t_sup: float
    t_out: float
    r_sol: float


@dataclass
class StepInfo:
    """Optional solver bookkeeping a controller can report per step."""

    slack: float = 0.0
    iterations: int = 0
    converged: bool = True
    wall_time: float = 0.0


class PiController:
    name = "pi"

    def __init__(self, params: PiParams | None = None):
        self.params = params or PiParams()
        self.state = PiState(self.params)

    def reset(self):
        self.state.reset()

    def step(self, obs: Observation) -> np.ndarray:
        return pi_step(self.state, obs.T, obs.t_out)

    def info(self) -> StepInfo:
        return StepInfo()


class OnOffController:
    name = "onoff"

    def __init__(self, setpoint=20.5, hysteresis=0.2, theta_min=0.0, theta_max=90.0):
        self.setpoint = setpoint
        self.hysteresis = hysteresis
        self.theta_min = theta_min
        self.theta_max = theta_max
        self._prev = np.full(3, theta_min)

    def reset(self):
        self._prev = np.full(3, self.theta_min)

    def step(self, obs: Observation) -> np.ndarray:
        theta = onoff_step(
            obs.T, self.setpoint, self.hysteresis, self._prev, self.theta_min, self.theta_max
        )
        self._prev = theta
        return theta

    def info(self) -> StepInfo:
        return StepInfo()


class AvgController:
    name = "avg"

    def __init__(self, seed: int, theta_min=0.0, theta_max=90.0, mode="uniform"):
        self.seed = seed
        self.theta_min = theta_min
        self.theta_max = theta_max
        self.mode = mode
        self.rng = np.random.default_rng(seed)

    def reset(self):
        self.rng = np.random.default_rng(self.seed)

    def step(self, obs: Observation) -> np.ndarray:
        return avg_step(self.rng, self.theta_min, self.theta_max, self.mode)

    def info(self) -> StepInfo:
        return StepInfo()


class MpcController:
    name = "mpc"

    def __init__(
        self,
        models: ZoneModelSet,
        surface: PolySurface2,
        cop_curve: PolyCurve1,
        config: mpc_mod.MpcConfig,
        pi_params: PiParams | None = None,
    ):
        self.models = models
        self.surface = surface
        self.cop_curve = cop_curve
        self.config = config
        self.pi_params = pi_params
        self.prev: mpc_mod.MpcSolution | None = None
        self.last_info = StepInfo()

    def reset(self):
        self.prev = None
        self.last_info = StepInfo()

    def step(self, obs: Observation) -> np.ndarray:
        state = BuildingState(obs.T, obs.T_prev, obs.theta_prev, obs.t_sup, obs.t_out)
        theta, solution = mpc_mod.control_step(
            self.models, self.surface, self.cop_curve, state, self.config,
            prev=self.prev, pi_params=self.pi_params,
        )
        self.prev = solution
        self.last_info = StepInfo(
            slack=float(np.sum(solution.delta[1] ** 2)),
            iterations=solution.diagnostics.iterations,
            converged=solution.diagnostics.converged,
            wall_time=solution.diagnostics.wall_time,
        )
        return theta

    def info(self) -> StepInfo:
        return self.last_info


class RefController:
    """Oracle receding-horizon controller: true plant, perfect previews."""

    name = "ref"

    def __init__(
        self,
        plant: TruthPlant,
        surface: PolySurface2,
        cop_curve: PolyCurve1,
        scenario: WeatherScenario,
        gains: np.ndarray,
        t_max=21.0,
        rho=100.0,
        rho_terminal=200.0,
        theta_min=0.0,
        theta_max=90.0,
        horizon_hours=5.0,
    ):
        self.plant = plant
        self.surface = surface
        self.cop_curve = cop_curve
        self.scenario = scenario
        self.gains = np.asarray(gains, dtype=float)
        self.t_max = t_max
        self.rho = rho
        self.rho_terminal = rho_terminal
        self.theta_min = theta_min
        self.theta_max = theta_max
        self.horizon = int(round(horizon_hours * 60.0 / scenario.period_minutes))
        self._prev_plan: np.ndarray | None = None
        self.last_info = StepInfo()

    def reset(self):
        self._prev_plan = None
        self.last_info = StepInfo()

    def _preview(self, series: np.ndarray, k: int) -> np.ndarray:
        end = k + self.horizon
        if end <= len(series):
            return series[k:end]
        pad = np.repeat(series[-1:], end - len(series), axis=0)
        return np.concatenate([series[k:], pad], axis=0)

    def step(self, obs: Observation) -> np.ndarray:
        k = obs.step
        guess = None
        if self._prev_plan is not None:
            guess = np.vstack([self._prev_plan[1:], self._prev_plan[-1:]])
        t0 = time.perf_counter()
        plan, diag = ref_solve(
            self.plant,
            self.surface,
            self.cop_curve,
            obs.T,
            self._preview(self.scenario.t_out, k),
            self._preview(self.scenario.t_sup, k),
            self._preview(self.scenario.r_sol, k),
            self._preview(self.gains, k),
            t_max=self.t_max,
            rho=self.rho,
            rho_terminal=self.rho_terminal,
            theta_min=self.theta_min,
            theta_max=self.theta_max,
            horizon=self.horizon,
            control_period_minutes=self.scenario.period_minutes,
            guess=guess,
        )
        self._prev_plan = plan
        self.last_info = StepInfo(
            slack=0.0,
            iterations=diag.iterations,
            converged=diag.converged,
            wall_time=time.perf_counter() - t0,
        )
        return plan[0]

    def info(self) -> StepInfo:
        return self.last_info


TRACE_COLUMNS = (
    "step",
    "minutes",
    "T1",
    "T2",
    "T3",
    "theta1",
    "theta2",
    "theta3",
    "T_sup",
    "T_out",
    "R_sol",
    "E_kw",
    "slack",
    "iterations",
    "converged",
)


@dataclass
class SimTrace:
    """Complete closed-loop record at the 10-minute control period."""

    controller: str
    scenario: str
    t_init: float
    period_minutes: float
    T: np.ndarray  # (n, 3) measured at each step
    theta: np.ndarray  # (n, 3) applied at each step
    t_sup: np.ndarray
    t_out: np.ndarray
    r_sol: np.ndarray
    energy_kw: np.ndarray
    slack: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    wall_times: np.ndarray  # excluded from the CSV: timing is run-dependent
    error: str = ""

    @property
    def n(self) -> int:
        return len(self.energy_kw)

    def rows(self) -> np.ndarray:
        steps = np.arange(self.n)
        return np.column_stack(
            [
                steps,
                steps * self.period_minutes,
                self.T,
                self.theta,
                self.t_sup,
                self.t_out,
                self.r_sol,
                self.energy_kw,
                self.slack,
                self.iterations,
                self.converged.astype(float),
            ]
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# controller={self.controller} scenario={self.scenario} ")
            fh.write(f"t_init={fmt_float(self.t_init)} period_minutes={fmt_float(self.period_minutes)}\n")
            if self.error:
                fh.write(f"# error={self.error}\n")
            write_csv(fh, TRACE_COLUMNS, self.rows())


def run_closed_loop(
    plant: TruthPlant,
    controller,
    scenario: WeatherScenario,
    t_init: float,
    surface: PolySurface2,
    cop_curve: PolyCurve1,
    steps: int | None = None,
    plant_dt: float = 120.0,
    noise_rng: np.random.Generator | None = None,
    theta_limits: tuple[float, float] = (0.0, 90.0),
) -> SimTrace:
    """Alternate controller and plant at the scenario period.

    Zone temperatures start uniformly at ``t_init``;  internal occupancy gains
    follow the plant's schedule and are never shown to the controller.  A
    controller exception truncates the trace and stores the error message.
    """
    steps = scenario.n if steps is None else min(steps, scenario.n)
    n_sub = max(1, int(round(scenario.period_minutes * 60.0 / plant_dt)))
    controller.reset()

    T = np.full(3, float(t_init))
    T_prev = T.copy()
    theta_prev = np.zeros(3)
    rec = {name: [] for name in ("T", "theta", "E", "slack", "iters", "conv", "wall")}
    error = ""
    k_done = 0
    for k in range(steps):
        minutes = k * scenario.period_minutes
        obs = Observation(
            step=k,
            minutes=minutes,
            T=T.copy(),
            T_prev=T_prev.copy(),
            theta_prev=theta_prev.copy(),
            t_sup=float(scenario.t_sup[k]),
            t_out=float(scenario.t_out[k]),
            r_sol=float(scenario.r_sol[k]),
        )
        try:
            theta = np.clip(controller.step(obs), theta_limits[0], theta_limits[1])
        except Exception as exc:  # record and truncate
            error = f"step {k}: {type(exc).__name__}: {exc}"
            break
        info = controller.info()
        energy = electrical_power(surface, cop_curve, obs.t_out, float(np.sum(theta)))

        rec["T"].append(T.copy())
        rec["theta"].append(theta.copy())
        rec["E"].append(energy)
        rec["slack"].append(info.slack)
        rec["iters"].append(info.iterations)
        rec["conv"].append(info.converged)
        rec["wall"].append(info.wall_time)

        gains = plant.occupancy_gains(minutes)
        T_new = T.copy()
        for _ in range(n_sub):
            T_new = plant_step(
                plant, T_new, theta, obs.t_sup, obs.t_out, obs.r_sol, gains,
                dt_seconds=plant_dt, rng=noise_rng,
            )
        T_prev, T = T, T_new
        theta_prev = theta
        k_done = k + 1

    return SimTrace(
        controller=getattr(controller, "name", type(controller).__name__),
        scenario=scenario.label,
        t_init=float(t_init),
        period_minutes=scenario.period_minutes,
        T=np.array(rec["T"]).reshape(k_done, 3),
        theta=np.array(rec["theta"]).reshape(k_done, 3),
        t_sup=scenario.t_sup[:k_done].copy(),
        t_out=scenario.t_out[:k_done].copy(),
        r_sol=scenario.r_sol[:k_done].copy(),
        energy_kw=np.array(rec["E"]),
        slack=np.array(rec["slack"]),
        iterations=np.array(rec["iters"], dtype=float),
        converged=np.array(rec["conv"], dtype=bool),
        wall_times=np.array(rec["wall"]),
        error=error,
    )


def trace_energy_kwh(trace: SimTrace) -> float:
    return float(np.sum(trace.energy_kw) * trace.period_minutes / 60.0)


def metrics(trace: SimTrace, ref_energy_kwh: float, t_max: float = 21.0) -> tuple[float, float]:
    """(normalized energy, average comfort violation in degC)."""
    if ref_energy_kwh <= 0:
        raise ValueError("reference energy must be positive")
    energy = trace_energy_kwh(trace)
    violation = float(np.mean(np.maximum(0.0, trace.T - t_max)))
    return energy / ref_energy_kwh, violation


# ---------------------------------------------------------------------------
# synthetic recording: weeks of plant operation under mixed excitation


def generate_recording(
    plant: TruthPlant,
    n_samples: int,
    seed: int,
    period_minutes: float = 2.0,
    control_period_minutes: float = 10.0,
    process_noise_std: float = 0.04,
    measurement_noise_std: float = 0.05,
    artifact_rate: float = 0.002,
    start: str = "2021-08-01T00:00:00",
) -> RawSeries:
    """Drive the plant through PI, on/off, ramp and random-hold excitation.

    Mirrors a months-long data-collection campaign compressed into one
    deterministic pass: day-varying weather, working-hours occupancy with
    door-opening bursts, process and measurement noise, plus a sprinkle of
    spikes and dropouts for the cleaning stage to chew on.
    """
    from dataclasses import replace

    from .plant import diurnal_traces

    rng = np.random.default_rng(seed)
    noisy_plant = replace(plant, process_noise_std=process_noise_std)
    sub_per_control = max(1, int(round(control_period_minutes / period_minutes)))
    dt = period_minutes * 60.0

    minutes = np.arange(n_samples) * period_minutes
    day_idx = (minutes // (24 * 60.0)).astype(int)
    n_days = int(day_idx.max()) + 1
    day_peaks = rng.uniform(26.0, 36.0, size=n_days)
    t_out = np.empty(n_samples)
    t_sup = np.empty(n_samples)
    r_sol = np.empty(n_samples)
    for d in range(n_days):
        mask = day_idx == d
        o, s, r = diurnal_traces(minutes[mask], peak_t_out=day_peaks[d])
        t_out[mask] = o + rng.normal(0, 0.1)
        t_sup[mask] = s + rng.uniform(-0.5, 0.5)
        r_sol[mask] = r

    modes = ("pi", "onoff", "ramp", "random")
    pi = PiState(PiParams(theta_min=0.0, theta_max=plant.theta_max))
    T = np.full(3, 22.0)
    theta = np.zeros(3)
    ramp_rate = np.zeros(3)
    onoff_prev = np.zeros(3)
    segment_len = int(6 * 60 / period_minutes)  # new excitation mode every 6 h

    temps = np.empty((n_samples, 3))
    thetas = np.empty((n_samples, 3))
    mode = "pi"
    for k in range(n_samples):
        if k % segment_len == 0:
            mode = modes[rng.integers(len(modes))]
            if mode == "pi":
                pi = PiState(PiParams(setpoint=float(rng.uniform(19.0, 22.0)), theta_max=plant.theta_max))
            elif mode == "ramp":
                ramp_rate = rng.uniform(-1.0, 1.0, 3) * plant.theta_max / segment_len * 4
                theta = rng.uniform(0, plant.theta_max, 3)
        if k % sub_per_control == 0:
            if mode == "pi":
                theta = pi_step(pi, T, t_out[k])
            elif mode == "onoff":
                theta = onoff_step(T, 20.5, 0.2, onoff_prev, 0.0, plant.theta_max)
                onoff_prev = theta
            elif mode == "random":
                if rng.random() < 0.3:
                    theta = rng.uniform(0, plant.theta_max, 3)
            else:
                theta = np.clip(theta + ramp_rate * sub_per_control, 0.0, plant.theta_max)

        gains = noisy_plant.occupancy_gains(minutes[k] % (24 * 60.0))
        if np.any(gains > 0) and rng.random() < 0.05:
            gains = gains + rng.uniform(0.0, 300.0, 3)  # door openings, gatherings
        temps[k] = T
        thetas[k] = theta
        T = plant_step(
            noisy_plant, T, theta, t_sup[k], t_out[k], r_sol[k], gains, dt_seconds=dt, rng=rng
        )

    temps_meas = temps + rng.normal(0.0, measurement_noise_std, temps.shape)
    channels = {
        "T1": temps_meas[:, 0].copy(),
        "T2": temps_meas[:, 1].copy(),
        "T3": temps_meas[:, 2].copy(),
        "theta1": thetas[:, 0].copy(),
        "theta2": thetas[:, 1].copy(),
        "theta3": thetas[:, 2].copy(),
        "T_sup": t_sup,
        "T_out": t_out,
        "R_sol": r_sol,
    }
    # sensor artifacts: isolated spikes and short dropouts on the temperatures
    for name in ("T1", "T2", "T3", "T_sup", "T_out"):
        arr = channels[name]
        spikes = rng.random(n_samples) < artifact_rate
        arr[spikes] += rng.choice([-1.0, 1.0], size=int(spikes.sum())) * rng.uniform(
            5.0, 12.0, size=int(spikes.sum())
        )
        drops = rng.random(n_samples) < artifact_rate
        arr[drops] = np.nan
    # one long outage that must split the series instead of being imputed
    if n_samples > 600:
        outage = int(rng.integers(300, n_samples - 200))
        for name in CHANNELS:
            channels[name][outage : outage + 40] = np.nan

    return RawSeries(np.datetime64(start, "s"), period_minutes, channels)
