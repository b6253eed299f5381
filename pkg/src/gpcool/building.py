"""Coupled three-zone temperature model built from per-zone GPs.

Each zone has its own GP over the lagged features of :data:`pipeline.ZONE_SPECS`;
stepping the set chains the GP means autoregressively while the per-step
standard deviation is read point-wise from the GP variances (uncertainty is
not propagated between steps).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .gp import GpPosterior, fit, load_model, save_model
from .pipeline import ZONE_SPECS, FeatureSpec

TEMP_SANITY_BAND = (5.0, 45.0)
CONTROL_PERIOD_MINUTES = 10.0
STD_SMOOTHING = 1e-12  # inside sqrt; keeps the MPC constraint differentiable


class ExtrapolationWarning(UserWarning):
    """State outside the physical sanity band; predictions are extrapolations."""


@dataclass(frozen=True)
class BuildingState:
    """Measured state: zone temperatures (current and one lag), valve angles
    last applied, and the two measured disturbances."""

    T: np.ndarray  # (3,) zone temperatures at t
    T_prev: np.ndarray  # (3,) zone temperatures at t-1
    theta: np.ndarray  # (3,) valve angles last applied
    T_sup: float
    T_out: float

    def __post_init__(self):
        for name in ("T", "T_prev", "theta"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            if arr.shape != (3,):
                raise ValueError(f"{name} must have shape (3,)")
            object.__setattr__(self, name, arr)

    def check_sanity(self) -> bool:
        lo, hi = TEMP_SANITY_BAND
        temps = np.concatenate([self.T, self.T_prev, [self.T_sup, self.T_out]])
        return bool(np.all((temps >= lo) & (temps <= hi)))


@dataclass(frozen=True)
class ZoneModelSet:
    """The three trained zone GPs plus their feature wiring."""

    models: tuple[GpPosterior, GpPosterior, GpPosterior]
    specs: tuple[FeatureSpec, FeatureSpec, FeatureSpec] = ZONE_SPECS
    control_period_minutes: float = CONTROL_PERIOD_MINUTES

    def __post_init__(self):
        if len(self.models) != 3 or len(self.specs) != 3:
            raise ValueError("a ZoneModelSet wraps exactly three zone models")
        for model, spec in zip(self.models, self.specs):
            if model.n > 0 and model.dataset.d != spec.dim:
                raise DataError(
                    f"{spec.name}: model dim {model.dataset.d} != spec dim {spec.dim}"
                )
            if model.hyperparams.dim != spec.dim:
                raise DataError(
                    f"{spec.name}: hyperparam dim {model.hyperparams.dim} != spec dim {spec.dim}"
                )


def feature_vector(
    spec: FeatureSpec,
    T: np.ndarray,
    T_prev: np.ndarray,
    theta: np.ndarray,
    T_sup: float,
    T_out: float,
) -> np.ndarray:
    """Assemble one zone's GP input from the current state (lags <= 2)."""
    zone_index = {"T1": 0, "T2": 1, "T3": 2, "theta1": 0, "theta2": 1, "theta3": 2}
    out = np.empty(spec.dim)
    k = 0
    for channel, delay in spec.inputs:
        for lag in range(delay):
            if channel.startswith("T") and channel in ("T1", "T2", "T3"):
                source = T if lag == 0 else T_prev
                if lag > 1:
                    raise DataError(f"{spec.name}: temperature lag {lag} unsupported")
                out[k] = source[zone_index[channel]]
            elif channel.startswith("theta"):
                if lag > 0:
                    raise DataError(f"{spec.name}: valve lag {lag} unsupported")
                out[k] = theta[zone_index[channel]]
            elif channel == "T_sup":
                out[k] = T_sup
            elif channel == "T_out":
                out[k] = T_out
            else:
                raise DataError(f"{spec.name}: unknown channel {channel!r}")
            k += 1
    return out


def step(models: ZoneModelSet, state: BuildingState) -> tuple[np.ndarray, np.ndarray]:
    """One 10-minute prediction: per-zone next temperature and point-wise std."""
    if not state.check_sanity():
        warnings.warn(
            "state outside the [5, 45] degC sanity band; extrapolating",
            ExtrapolationWarning,
            stacklevel=2,
        )
    T_next = np.empty(3)
    std = np.empty(3)
    for i, (model, spec) in enumerate(zip(models.models, models.specs)):
        x = feature_vector(spec, state.T, state.T_prev, state.theta, state.T_sup, state.T_out)
        T_next[i] = model.predict_mean(x)
        std[i] = np.sqrt(model.predict_var(x) + STD_SMOOTHING)
    return T_next, std


def rollout(
    models: ZoneModelSet,
    state: BuildingState,
    thetas: np.ndarray,
    t_sup=None,
    t_out=None,
    feedback: np.ndarray | None = None,
    correction_interval: int = 12,
) -> tuple[np.ndarray, np.ndarray]:
    """Chain `step` over a valve schedule; returns (means, stds), each (H, 3).

    ``thetas`` is (H, 3).  Disturbances default to the values frozen in the
    state; per-step arrays of length H are also accepted.  When ``feedback``
    (measured temperatures, (H, 3), entry k = truth after k+1 steps) is given,
    the predicted lags are overwritten with measurements every
    ``correction_interval`` steps; the std stays point-wise per step.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    horizon = thetas.shape[0]
    if horizon < 1 or thetas.shape[1] != 3:
        raise ValueError("thetas must be (H, 3) with H >= 1")
    t_sup_seq = _disturbance_sequence(t_sup, state.T_sup, horizon, "t_sup")
    t_out_seq = _disturbance_sequence(t_out, state.T_out, horizon, "t_out")
    if feedback is not None:
        feedback = np.asarray(feedback, dtype=float)
        if feedback.shape != (horizon, 3):
            raise ValueError(f"feedback must be ({horizon}, 3), got {feedback.shape}")
        if correction_interval < 1:
            raise ValueError("correction_interval must be >= 1")

    means = np.empty((horizon, 3))
    stds = np.empty((horizon, 3))
    T_cur, T_prev = state.T.copy(), state.T_prev.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("once", ExtrapolationWarning)
        for k in range(horizon):
            if feedback is not None and k > 0 and k % correction_interval == 0:
                T_cur = feedback[k - 1].copy()
                T_prev = feedback[k - 2].copy() if k >= 2 else state.T.copy()
            s = BuildingState(T_cur, T_prev, thetas[k], t_sup_seq[k], t_out_seq[k])
            T_next, std = step(models, s)
            means[k] = T_next
            stds[k] = std
            T_prev, T_cur = T_cur, T_next
    return means, stds


def _disturbance_sequence(value, default: float, horizon: int, name: str) -> np.ndarray:
    if value is None:
        return np.full(horizon, default)
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(horizon, float(arr[0]))
    if arr.size != horizon:
        raise ValueError(f"{name} must be scalar or length {horizon}, got {arr.size}")
    return arr.astype(float)


def rollout_trace_rows(means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    """(step, mean1..3, std1..3) rows for CSV export."""
    horizon = means.shape[0]
    return np.column_stack([np.arange(horizon), means, stds])


# ---------------------------------------------------------------------------
# persistence: one gp bundle per zone plus a tiny index file


def save_model_set(directory: str | Path, models: ZoneModelSet) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for model, spec in zip(models.models, models.specs):
        path = directory / f"{spec.name}.gpmodel"
        save_model(path, model, meta={"feature_spec": spec.name, "target": spec.target})
        paths.append(path)
    return paths


def load_model_set(directory: str | Path) -> ZoneModelSet:
    directory = Path(directory)
    models = []
    for spec in ZONE_SPECS:
        path = directory / f"{spec.name}.gpmodel"
        if not path.exists():
            raise DataError(f"missing model file {path}")
        posterior, meta = load_model(path)
        if meta.get("feature_spec", spec.name) != spec.name:
            raise DataError(f"{path}: feature_spec mismatch")
        models.append(posterior)
    return ZoneModelSet(models=tuple(models))
