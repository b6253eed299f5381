"""Comparison controllers: PI, rule-based ON/OFF, randomized AVG, oracle REF.

The PI loops act per zone on the cooling error with conditional-integration
anti-windup and an outdoor-temperature feedforward.  REF is the efficiency
reference: the same receding-horizon program as the MPC but with the true
plant as its model, perfect disturbance previews, a five-hour horizon and no
uncertainty tightening.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import shooting
from .chiller import COP_FLOOR, PolyCurve1, PolySurface2
from .plant import TruthPlant, plant_step


@dataclass(frozen=True)
class PiParams:
    """Shared gains for the three per-zone PI loops.

    Tuned on the synthetic plant by the step-response heuristic in
    ``demos/05_baselines_and_tuning.py``; the setpoint sits half a degree
    below the comfort bound so regulation noise stays on the safe side.
    """

    kp: float = 18.0
    ki: float = 1.8  # per control step (degrees per degC per step)
    ff: float = 1.2
    setpoint: float = 20.5
    theta_min: float = 0.0
    theta_max: float = 90.0


class PiState:
    """Mutable per-zone integrator state of the PI baseline."""

    def __init__(self, params: PiParams):
        self.params = params
        self.integrator = np.zeros(3)

    def reset(self) -> None:
        self.integrator[:] = 0.0


def pi_step(state: PiState, T_meas: np.ndarray, t_out: float) -> np.ndarray:
    """One PI update for all zones; returns clamped valve angles.

    Cooling sign convention: temperature above the setpoint opens the valve.
    The integrator only moves while the output is unsaturated (or while the
    error pushes back off the stop), and its weight is capped at the full
    valve span.
    """
    p = state.params
    e = np.asarray(T_meas, dtype=float) - p.setpoint
    ff_term = p.ff * (t_out - p.setpoint)
    raw = p.kp * e + state.integrator + ff_term
    theta = np.clip(raw, p.theta_min, p.theta_max)
    span = p.theta_max - p.theta_min
    for i in range(3):
        saturated_high = raw[i] > p.theta_max and e[i] > 0
        saturated_low = raw[i] < p.theta_min and e[i] < 0
        if not (saturated_high or saturated_low):
            state.integrator[i] += p.ki * e[i]
    np.clip(state.integrator, -span, span, out=state.integrator)
    return theta


def onoff_step(
    T_meas: np.ndarray,
    setpoint: float,
    hysteresis: float,
    prev_theta: np.ndarray,
    theta_min: float,
    theta_max: float,
) -> np.ndarray:
    """Per-zone bang-bang rule with a symmetric hysteresis band."""
    if hysteresis < 0:
        raise ValueError("hysteresis must be non-negative")
    T_meas = np.asarray(T_meas, dtype=float)
    theta = np.asarray(prev_theta, dtype=float).copy()
    theta[T_meas > setpoint + hysteresis / 2.0] = theta_max
    theta[T_meas < setpoint - hysteresis / 2.0] = theta_min
    return theta


def avg_step(
    rng: np.random.Generator,
    theta_min: float,
    theta_max: float,
    mode: str = "uniform",
) -> np.ndarray:
    """Uniform random valves per zone; the `midpoint` mode is the constant
    alternative reading of the same baseline."""
    if mode == "uniform":
        return rng.uniform(theta_min, theta_max, size=3)
    if mode == "midpoint":
        return np.full(3, 0.5 * (theta_min + theta_max))
    raise ValueError(f"unknown AVG mode {mode!r}")


# ---------------------------------------------------------------------------
# REF: oracle MPC on the true plant

REF_HORIZON_HOURS = 5.0


@dataclass
class RefDiagnostics:
    objective: float
    kkt_residual: float
    converged: bool
    iterations: int


def ref_problem_args(
    plant: TruthPlant,
    T0: np.ndarray,
    t_out_seq: np.ndarray,
    t_sup_seq: np.ndarray,
    r_sol_seq: np.ndarray,
    gains_seq: np.ndarray,
    horizon: int,
    t_max: float,
    rho: float,
    rho_terminal: float,
    control_period_minutes: float = 10.0,
    dt_sub: float = 120.0,
) -> tuple:
    n_sub = max(1, int(round(control_period_minutes * 60.0 / dt_sub)))
    return (
        plant.capacitance.copy(),
        plant.ua_out.copy(),
        float(plant.coupling[0]),
        float(plant.coupling[1]),
        plant.vent_ua.copy(),
        float(plant.coil_effectiveness),
        float(plant.valve_shape),
        float(plant.theta_max),
        plant.solar_aperture.copy(),
        np.asarray(t_out_seq, dtype=float)[:horizon].copy(),
        np.asarray(t_sup_seq, dtype=float)[:horizon].copy(),
        np.asarray(r_sol_seq, dtype=float)[:horizon].copy(),
        np.asarray(gains_seq, dtype=float)[:horizon].copy(),
        np.asarray(T0, dtype=float).copy(),
        float(dt_sub),
        int(n_sub),
        # chiller coefficients appended by ref_solve
    )


def ref_solve(
    plant: TruthPlant,
    surface: PolySurface2,
    cop_curve: PolyCurve1,
    T0: np.ndarray,
    t_out_seq: np.ndarray,
    t_sup_seq: np.ndarray,
    r_sol_seq: np.ndarray,
    gains_seq: np.ndarray,
    t_max: float = 21.0,
    rho: float = 100.0,
    rho_terminal: float = 200.0,
    theta_min: float = 0.0,
    theta_max: float = 90.0,
    horizon: int | None = None,
    control_period_minutes: float = 10.0,
    guess: np.ndarray | None = None,
    kkt_tol: float = 1e-6,
    max_iter: int = 400,
) -> tuple[np.ndarray, RefDiagnostics]:
    """Solve the oracle horizon program; returns the valve plan (H, 3).

    Disturbance previews must cover the horizon (default five hours at the
    ten-minute period); the dynamics are the true plant integrated exactly as
    the simulation harness integrates it, so predictions are perfect up to
    process noise.
    """
    if horizon is None:
        horizon = int(round(REF_HORIZON_HOURS * 60.0 / control_period_minutes))
    for name, seq in (
        ("t_out_seq", t_out_seq),
        ("t_sup_seq", t_sup_seq),
        ("r_sol_seq", r_sol_seq),
    ):
        if len(seq) < horizon:
            raise ValueError(f"{name} must cover the horizon ({horizon} steps)")
    if np.asarray(gains_seq).shape[0] < horizon:
        raise ValueError("gains_seq must cover the horizon")

    base = ref_problem_args(
        plant,
        T0,
        t_out_seq,
        t_sup_seq,
        r_sol_seq,
        gains_seq,
        horizon,
        t_max,
        rho,
        rho_terminal,
        control_period_minutes,
    )
    args = base + (
        surface.coeffs.copy(),
        cop_curve.coeffs.copy(),
        int(horizon),
        float(t_max),
        float(rho),
        float(rho_terminal),
        float(COP_FLOOR),
    )
    nvar = 3 * horizon
    lower = np.full(nvar, float(theta_min))
    upper = np.full(nvar, float(theta_max))
    if guess is None:
        guess = _ref_pi_guess(plant, T0, t_out_seq, t_sup_seq, r_sol_seq, gains_seq, horizon, theta_min, theta_max, control_period_minutes)
    x, f, g, kkt, iters, evals, status = shooting.minimize_box(
        shooting.plant_shoot_obj,
        args,
        np.asarray(guess, dtype=float).ravel().copy(),
        lower,
        upper,
        max_iter,
        kkt_tol,
        10,
    )
    diag = RefDiagnostics(
        objective=float(f),
        kkt_residual=float(kkt),
        converged=status == shooting.STATUS_CONVERGED,
        iterations=int(iters),
    )
    return x.reshape(horizon, 3), diag


def _ref_pi_guess(
    plant: TruthPlant,
    T0: np.ndarray,
    t_out_seq,
    t_sup_seq,
    r_sol_seq,
    gains_seq,
    horizon: int,
    theta_min: float,
    theta_max: float,
    control_period_minutes: float,
) -> np.ndarray:
    """Virtual PI rolled out on the true plant as the warm start."""
    pi = PiState(PiParams(theta_min=theta_min, theta_max=theta_max))
    T = np.asarray(T0, dtype=float).copy()
    theta = np.empty((horizon, 3))
    n_sub = max(1, int(round(control_period_minutes * 60.0 / 120.0)))
    for t in range(horizon):
        theta[t] = pi_step(pi, T, float(t_out_seq[t]))
        for _ in range(n_sub):
            T = plant_step(
                plant,
                T,
                theta[t],
                float(t_sup_seq[t]),
                float(t_out_seq[t]),
                float(r_sol_seq[t]),
                np.asarray(gains_seq[t], dtype=float),
                dt_seconds=120.0,
            )
    return theta
