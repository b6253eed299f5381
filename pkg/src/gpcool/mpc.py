"""Receding-horizon controller on top of the zone GPs and chiller surfaces.

The program minimises predicted chiller electrical energy plus quadratic
penalties on violations of the variance-tightened comfort bound::

    min   sum_t E(theta_sum_t) + rho * Delta_t  ... + rho_N * Delta_N
    s.t.  T_{t+1} = gp_mean(features_t)           (eliminated by shooting)
          T_t + beta * std_t <= T_max + delta_t   (delta = relu of violation)
          theta in [theta_min, theta_max], delta >= 0

Temperatures and slacks are both eliminated, leaving a smooth box-constrained
problem over the valve plan, solved by the projected quasi-Newton loop in
:mod:`gpcool.shooting`.  Stage 0 holds the measured temperatures and carries
no constraint; slacks cover predicted stages 1..N with the terminal stage
weighted separately.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import shooting
from .baselines import PiParams, PiState, pi_step
from .building import BuildingState, ZoneModelSet, feature_vector
from .chiller import COP_FLOOR, PolyCurve1, PolySurface2
from .errors import NumericalError
from .pipeline import FeatureSpec


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, comfort bound, tightening and solver constants."""

    horizon: int = 12
    t_max: float = 21.0
    beta: float = 2.0
    rho: float = 100.0
    rho_terminal: float = 200.0
    theta_min: float = 0.0
    theta_max: float = 90.0
    kkt_tol: float = 1e-6
    max_iter: int = 400
    lbfgs_memory: int = 10
    multistart: bool = True  # add deterministic auxiliary starts to each solve

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rho <= 0 or self.rho_terminal <= 0:
            raise ValueError("slack weights must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.theta_min >= self.theta_max:
            raise ValueError("theta_min must be below theta_max")


@dataclass
class MpcDiagnostics:
    iterations: int
    evals: int
    kkt_residual: float
    converged: bool
    wall_time: float
    warm_start_source: str
    n_starts: int
    polish_used: bool = False


@dataclass(frozen=True)
class MpcProblem:
    """Packed, immutable instance of the horizon program."""

    models: ZoneModelSet
    surface: PolySurface2
    cop_curve: PolyCurve1
    state: BuildingState
    config: MpcConfig
    args: tuple
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class MpcSolution:
    theta: np.ndarray  # (N, 3)
    delta: np.ndarray  # (N+1, 3); row 0 is the unconstrained measured stage
    temps: np.ndarray  # (N, 3) predicted stages 1..N
    stds: np.ndarray  # (N, 3)
    energy: np.ndarray  # (N,)
    objective: float
    diagnostics: MpcDiagnostics


def _wiring_arrays(specs: tuple[FeatureSpec, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    zone_of = {"T1": 0, "T2": 1, "T3": 2, "theta1": 0, "theta2": 1, "theta3": 2}
    kinds = np.zeros((3, 7), dtype=np.int64)
    zones = np.zeros((3, 7), dtype=np.int64)
    dims = np.zeros(3, dtype=np.int64)
    for i, spec in enumerate(specs):
        k = 0
        for channel, delay in spec.inputs:
            for lag in range(delay):
                if channel in ("T1", "T2", "T3"):
                    kinds[i, k] = shooting.KIND_T_CUR if lag == 0 else shooting.KIND_T_PREV
                    zones[i, k] = zone_of[channel]
                elif channel.startswith("theta"):
                    kinds[i, k] = shooting.KIND_THETA
                    zones[i, k] = zone_of[channel]
                elif channel == "T_sup":
                    kinds[i, k] = shooting.KIND_T_SUP
                elif channel == "T_out":
                    kinds[i, k] = shooting.KIND_T_OUT
                else:
                    raise ValueError(f"unsupported channel {channel!r} in MPC wiring")
                k += 1
        dims[i] = k
    return kinds, zones, dims


def build_problem(
    models: ZoneModelSet,
    surface: PolySurface2,
    cop_curve: PolyCurve1,
    state: BuildingState,
    config: MpcConfig,
) -> MpcProblem:
    """Pack the GP data, wiring and constants into the solver's layout."""
    n_max = max(m.n for m in models.models)
    if n_max == 0:
        raise ValueError("MPC needs trained zone models (empty dataset supplied)")
    X = np.zeros((3, n_max, 7))
    Kinv = np.zeros((3, n_max, n_max))
    alpha = np.zeros((3, n_max))
    inv_ell2 = np.zeros((3, 7))
    slope = np.zeros((3, 7))
    offset = np.zeros(3)
    sigma2 = np.zeros(3)
    n_arr = np.zeros(3, dtype=np.int64)
    for i, model in enumerate(models.models):
        n, d = model.n, model.dataset.d
        if n == 0:
            raise ValueError("MPC needs trained zone models (empty dataset supplied)")
        X[i, :n, :d] = model.dataset.X
        eye = np.eye(n)
        Kinv[i, :n, :n] = scipy.linalg.cho_solve(
            (model.chol_factor, True), eye, check_finite=False
        )
        alpha[i, :n] = model.alpha
        h = model.hyperparams
        inv_ell2[i, :d] = 1.0 / h.lengthscales**2
        slope[i, :d] = h.mean_slope
        offset[i] = h.mean_offset
        sigma2[i] = h.vertical_scale**2
        n_arr[i] = n
    kinds, zones, dims = _wiring_arrays(models.specs)

    args = (
        X,
        Kinv,
        alpha,
        inv_ell2,
        slope,
        offset,
        sigma2,
        n_arr,
        dims,
        kinds,
        zones,
        state.T.copy(),
        state.T_prev.copy(),
        float(state.T_sup),
        float(state.T_out),
        surface.coeffs.copy(),
        cop_curve.coeffs.copy(),
        int(config.horizon),
        float(config.t_max),
        float(config.beta),
        float(config.rho),
        float(config.rho_terminal),
        float(COP_FLOOR),
    )
    nvar = 3 * config.horizon
    return MpcProblem(
        models=models,
        surface=surface,
        cop_curve=cop_curve,
        state=state,
        config=config,
        args=args,
        lower=np.full(nvar, config.theta_min),
        upper=np.full(nvar, config.theta_max),
    )


def objective_value_grad(problem: MpcProblem, theta: np.ndarray) -> tuple[float, np.ndarray]:
    """Reduced objective and gradient at a flattened valve plan."""
    u = np.asarray(theta, dtype=float).ravel()
    f, g = shooting.gp_shoot_obj(u, problem.args)
    return float(f), g


def predict_trajectories(problem: MpcProblem, theta: np.ndarray):
    """(temps, stds, energy) the shooting model predicts for a valve plan."""
    u = np.asarray(theta, dtype=float).ravel()
    _, _, temps, stds, energy = shooting.gp_shoot_full(u, problem.args)
    return temps, stds, energy


def slacks_for(problem: MpcProblem, temps: np.ndarray, stds: np.ndarray) -> np.ndarray:
    """Optimal slacks: the positive part of each tightened-constraint violation."""
    cfg = problem.config
    delta = np.zeros((cfg.horizon + 1, 3))
    delta[1:] = np.maximum(0.0, temps + cfg.beta * stds - cfg.t_max)
    return delta


@dataclass
class WarmStart:
    theta: np.ndarray
    delta: np.ndarray
    temps: np.ndarray
    stds: np.ndarray
    energy: np.ndarray
    source: str = "pi"


def warm_start(problem: MpcProblem, pi_params: PiParams | None = None) -> WarmStart:
    """Roll a virtual PI controller forward through the GP model and record
    the valve, temperature, slack and energy trajectories it produces."""
    cfg = problem.config
    state = problem.state
    params = pi_params or PiParams(theta_min=cfg.theta_min, theta_max=cfg.theta_max)
    pi = PiState(params)
    theta = np.empty((cfg.horizon, 3))
    T_cur, T_prev = state.T.copy(), state.T_prev.copy()
    temps = np.empty((cfg.horizon, 3))
    stds = np.empty((cfg.horizon, 3))
    for t in range(cfg.horizon):
        theta[t] = pi_step(pi, T_cur, state.T_out)
        for i, (model, spec) in enumerate(zip(problem.models.models, problem.models.specs)):
            x = feature_vector(spec, T_cur, T_prev, theta[t], state.T_sup, state.T_out)
            temps[t, i] = model.predict_mean(x)
            stds[t, i] = np.sqrt(model.predict_var(x) + shooting.STD_SMOOTHING)
        T_prev, T_cur = T_cur, temps[t].copy()
    _, _, temps_k, stds_k, energy = shooting.gp_shoot_full(theta.ravel(), problem.args)
    delta = slacks_for(problem, temps_k, stds_k)
    return WarmStart(theta=theta, delta=delta, temps=temps_k, stds=stds_k, energy=energy, source="pi")


def _aux_starts(problem: MpcProblem) -> list[np.ndarray]:
    cfg = problem.config
    nvar = 3 * cfg.horizon
    return [
        np.full(nvar, 0.5 * (cfg.theta_min + cfg.theta_max)),
        np.full(nvar, cfg.theta_max),
        np.full(nvar, cfg.theta_min),
    ]


def solve(
    problem: MpcProblem,
    guess: np.ndarray | None = None,
    extra_starts: list[np.ndarray] | None = None,
    warm_start_source: str = "explicit",
) -> MpcSolution:
    """Minimise the reduced program from one or more starting plans.

    ``guess`` defaults to a cold start at mid-range valves.  When
    ``extra_starts`` is None and the config enables multistart, two
    deterministic auxiliary plans (mid-range, fully open) are added; pass an
    empty list to force a single-start solve.  The best local solution found
    is returned; if the quasi-Newton loop stops short of the KKT tolerance, a
    scipy L-BFGS-B polish runs from the best iterate before giving up.
    """
    cfg = problem.config
    nvar = 3 * cfg.horizon
    t0 = time.perf_counter()
    if guess is None:
        guess = np.full(nvar, 0.5 * (cfg.theta_min + cfg.theta_max))
        if warm_start_source == "explicit":
            warm_start_source = "cold"
    starts = [np.asarray(guess, dtype=float).ravel().copy()]
    if extra_starts is None:
        extra = _aux_starts(problem) if cfg.multistart else []
    else:
        extra = [np.asarray(s, dtype=float).ravel().copy() for s in extra_starts]
    for cand in extra:
        if not any(np.array_equal(cand, s) for s in starts):
            starts.append(cand)

    best = None
    total_iters = 0
    total_evals = 0
    for x0 in starts:
        if x0.size != nvar:
            raise ValueError(f"start has {x0.size} entries, expected {nvar}")
        x, f, g, kkt, iters, evals, status = shooting.minimize_box(
            shooting.gp_shoot_obj,
            problem.args,
            x0,
            problem.lower,
            problem.upper,
            cfg.max_iter,
            cfg.kkt_tol,
            cfg.lbfgs_memory,
        )
        total_iters += iters
        total_evals += evals
        if best is None or f < best[1]:
            best = (x, f, kkt, status)

    x, f, kkt, status = best
    polish_used = False
    if status != shooting.STATUS_CONVERGED:
        x, f, kkt, status = _polish(problem, x, f, kkt, status)
        polish_used = True

    temps, stds, energy = predict_trajectories(problem, x)
    delta = slacks_for(problem, temps, stds)
    diag = MpcDiagnostics(
        iterations=total_iters,
        evals=total_evals,
        kkt_residual=float(kkt),
        converged=status == shooting.STATUS_CONVERGED,
        wall_time=time.perf_counter() - t0,
        warm_start_source=warm_start_source,
        n_starts=len(starts),
        polish_used=polish_used,
    )
    return MpcSolution(
        theta=x.reshape(cfg.horizon, 3),
        delta=delta,
        temps=temps,
        stds=stds,
        energy=energy,
        objective=float(f),
        diagnostics=diag,
    )


def _polish(problem: MpcProblem, x: np.ndarray, f: float, kkt: float, status: int):
    """Fallback refinement with scipy's L-BFGS-B from the best iterate."""
    import scipy.optimize

    cfg = problem.config
    res = scipy.optimize.minimize(
        lambda u: shooting.gp_shoot_obj(u, problem.args),
        x,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(problem.lower, problem.upper)),
        options=dict(maxiter=cfg.max_iter, ftol=1e-14, gtol=cfg.kkt_tol),
    )
    if res.fun <= f:
        f_new, g_new = shooting.gp_shoot_obj(res.x, problem.args)
        bound_eps = 1e-9 * (cfg.theta_max - cfg.theta_min + 1.0)
        kkt_new = shooting._kkt_residual(res.x, g_new, problem.lower, problem.upper, bound_eps)
        st = shooting.STATUS_CONVERGED if kkt_new <= cfg.kkt_tol else status
        return res.x, float(f_new), float(kkt_new), st
    return x, f, kkt, status


def shift_guess(previous: MpcSolution) -> np.ndarray:
    """Receding-horizon guess: drop the applied stage, repeat the last one."""
    theta = previous.theta
    return np.vstack([theta[1:], theta[-1:]])


def control_step(
    models: ZoneModelSet,
    surface: PolySurface2,
    cop_curve: PolyCurve1,
    state: BuildingState,
    config: MpcConfig,
    prev: MpcSolution | None = None,
    pi_params: PiParams | None = None,
) -> tuple[np.ndarray, MpcSolution]:
    """One receding-horizon update: solve and return the first-stage valves.

    The warm start is the previous solution shifted one stage when available,
    otherwise the virtual-PI trajectory.  On non-convergence the best iterate
    is still applied (the solution carries the flag); valves are clipped to
    bounds as a final guarantee.
    """
    problem = build_problem(models, surface, cop_curve, state, config)
    if prev is not None and prev.theta.shape == (config.horizon, 3):
        guess, source = shift_guess(prev), "shifted"
    else:
        guess, source = warm_start(problem, pi_params).theta, "pi"
    solution = solve(problem, guess, warm_start_source=source)
    theta_apply = np.clip(solution.theta[0], config.theta_min, config.theta_max)
    return theta_apply, solution


def solution_rows(solution: MpcSolution) -> np.ndarray:
    """(stage, theta1..3, delta1..3, T1..3, std1..3, E) rows for CSV dumps."""
    n = solution.theta.shape[0]
    return np.column_stack(
        [
            np.arange(1, n + 1),
            solution.theta,
            solution.delta[1:],
            solution.temps,
            solution.stds,
            solution.energy,
        ]
    )


def _warm_up() -> None:
    """Compile the numba kernels on a toy instance."""
    from .gp import Dataset, Hyperparams, fit

    rng = np.random.default_rng(0)
    models = []
    from .pipeline import ZONE_SPECS

    for spec in ZONE_SPECS:
        X = rng.uniform(0, 1, size=(2, spec.dim))
        h = Hyperparams(1.0, np.ones(spec.dim), 0.1, np.zeros(spec.dim), 20.0)
        models.append(fit(Dataset(X, np.full(2, 20.0)), h))
    from .building import ZoneModelSet
    from .chiller import DEFAULT_COP, DEFAULT_THERMAL

    mset = ZoneModelSet(models=tuple(models))
    state = BuildingState(np.full(3, 20.0), np.full(3, 20.0), np.zeros(3), 11.0, 25.0)
    cfg = MpcConfig(horizon=2, max_iter=5, multistart=False)
    problem = build_problem(mset, DEFAULT_THERMAL, DEFAULT_COP, state, cfg)
    solve(problem, extra_starts=[])
