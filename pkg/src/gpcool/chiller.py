"""Chiller thermal-power and COP surfaces, and the ridge fit that produces them.

Thermal power is a bivariate cubic in outdoor temperature and the summed valve
opening; electrical power divides it by a quartic COP curve.  The shipped
default coefficients reproduce the plant calibration this package is built
around; :func:`fit_ridge` refits a surface from logged samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .serialize import fmt_float

COP_FLOOR = 0.1  # guards the electrical-power division outside calibration

#: monomial order of the cubic surface coefficients
SURFACE_TERMS = (
    "T_out",
    "theta_sum",
    "T_out^2",
    "T_out*theta_sum",
    "theta_sum^2",
    "T_out^3",
    "T_out^2*theta_sum",
    "T_out*theta_sum^2",
    "theta_sum^3",
    "1",
)


def _surface_monomials(t_out, theta_sum):
    t, s = np.broadcast_arrays(
        np.asarray(t_out, dtype=float), np.asarray(theta_sum, dtype=float)
    )
    one = np.ones_like(t)
    return np.stack(
        [t, s, t * t, t * s, s * s, t**3, t * t * s, t * s * s, s**3, one],
        axis=-1,
    )


@dataclass(frozen=True)
class PolySurface2:
    """Bivariate cubic in (T_out, theta_sum); coefficients in SURFACE_TERMS order."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).copy()
        object.__setattr__(self, "coeffs", c)
        if c.shape != (10,) or not np.all(np.isfinite(c)):
            raise ValueError("PolySurface2 needs exactly 10 finite coefficients")

    def __call__(self, t_out, theta_sum):
        return _surface_monomials(t_out, theta_sum) @ self.coeffs


@dataclass(frozen=True)
class PolyCurve1:
    """Univariate quartic in thermal power Q; coefficients high power first.

    Concavity over ``concavity_range`` is checked on construction by sampling
    second differences, since the electrical-power model relies on a concave
    performance curve there.
    """

    coeffs: np.ndarray
    concavity_range: tuple[float, float] = (10.0, 60.0)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).copy()
        object.__setattr__(self, "coeffs", c)
        if c.shape != (5,) or not np.all(np.isfinite(c)):
            raise ValueError("PolyCurve1 needs exactly 5 finite coefficients")
        lo, hi = self.concavity_range
        q = np.arange(lo, hi + 0.5, 1.0)
        vals = np.polyval(c, q)
        second = vals[2:] - 2.0 * vals[1:-1] + vals[:-2]
        if np.any(second > 1e-12):
            raise ValueError(
                f"COP curve is not concave on [{lo}, {hi}] "
                f"(max second difference {second.max():.3e})"
            )

    def raw(self, q):
        """Polynomial value without the floor clamp."""
        return np.polyval(self.coeffs, np.asarray(q, dtype=float))


#: printed calibration constants of the reference plant
DEFAULT_THERMAL = PolySurface2(
    np.array(
        [
            -3.15,  # T_out
            -3.03e-2,  # theta_sum
            1.73e-1,  # T_out^2
            -1.56e-3,  # T_out*theta_sum
            3.09e-4,  # theta_sum^2
            -2.75e-3,  # T_out^3
            4.90e-4,  # T_out^2*theta_sum
            -6.86e-5,  # T_out*theta_sum^2
            2.56e-6,  # theta_sum^3
            20.22,  # constant
        ]
    )
)

DEFAULT_COP = PolyCurve1(np.array([3.30e-7, -2.69e-5, -2.67e-3, 2.34e-1, -4.45e-4]))


def thermal_power(surface: PolySurface2, t_out, theta_sum):
    """Chiller thermal power Q in kW."""
    return surface(t_out, theta_sum)


def cop(curve: PolyCurve1, q):
    """Coefficient of performance, floored at COP_FLOOR outside calibration."""
    raw = curve.raw(q)
    clamped = np.maximum(raw, COP_FLOOR)
    if np.any(raw < COP_FLOOR):
        warnings.warn(
            f"COP below {COP_FLOOR} clamped (thermal power outside calibrated range)",
            RuntimeWarning,
            stacklevel=2,
        )
    return clamped if isinstance(q, np.ndarray) else float(clamped)


def electrical_power(surface: PolySurface2, curve: PolyCurve1, t_out, theta_sum):
    """Electrical power E = Q / COP(Q) in kW."""
    q = thermal_power(surface, t_out, theta_sum)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c = np.maximum(curve.raw(q), COP_FLOOR)
    e = q / c
    return e if isinstance(e, np.ndarray) and e.ndim else float(e)


def electrical_power_grad(surface: PolySurface2, curve: PolyCurve1, t_out: float, theta_sum: float):
    """E and dE/d(theta_sum) at a point; the clamp freezes the COP derivative."""
    q = float(surface(t_out, theta_sum))
    c_raw = float(curve.raw(q))
    sc = surface.coeffs
    dq = (
        sc[1]
        + sc[3] * t_out
        + 2.0 * sc[4] * theta_sum
        + sc[6] * t_out**2
        + 2.0 * sc[7] * t_out * theta_sum
        + 3.0 * sc[8] * theta_sum**2
    )
    if c_raw <= COP_FLOOR:
        return q / COP_FLOOR, dq / COP_FLOOR
    dc = float(np.polyval(np.polyder(curve.coeffs), q))
    e = q / c_raw
    de = dq * (c_raw - q * dc) / c_raw**2
    return e, de


def augment_zero_flow(samples: list[tuple[float, float, float]], t_out_grid) -> list[tuple[float, float, float]]:
    """Append (t_out, 0, 0) rows representing the closed-valve regime."""
    grid = np.atleast_1d(np.asarray(t_out_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("t_out_grid must be non-empty")
    return list(samples) + [(float(t), 0.0, 0.0) for t in grid]


def fit_ridge(
    samples: list[tuple[float, float, float]],
    degree: int = 3,
    lam: float = 1e-3,
) -> PolySurface2:
    """Ridge regression of a cubic surface on (t_out, theta_sum, q) samples.

    The penalty acts on standardised monomials and excludes the constant term.
    Solved through an augmented least-squares system (QR under the hood), not
    the raw normal equations.
    """
    if degree != 3:
        raise ValueError("only cubic surfaces (degree=3) are supported")
    if lam < 0:
        raise ValueError("ridge weight must be non-negative")
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 10:
        raise ValueError("need at least 10 (t_out, theta_sum, q) samples")
    t_out, theta_sum, q = arr[:, 0], arr[:, 1], arr[:, 2]
    Phi = _surface_monomials(t_out, theta_sum)

    scale = np.std(Phi[:, :9], axis=0)
    scale[scale == 0] = 1.0
    Phi_std = Phi.copy()
    Phi_std[:, :9] /= scale
    if lam > 0:
        reg = np.zeros((9, 10))
        reg[:, :9] = np.sqrt(lam) * np.eye(9)
        A = np.vstack([Phi_std, reg])
        b = np.concatenate([q, np.zeros(9)])
    else:
        A, b = Phi_std, q
    coeffs_std, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if lam == 0 and rank < 10:
        raise NumericalError(
            f"rank-deficient design matrix (rank {rank} < 10); use lam > 0"
        )
    coeffs = coeffs_std.copy()
    coeffs[:9] /= scale
    return PolySurface2(coeffs)


def fit_residual_norm(surface: PolySurface2, samples) -> float:
    arr = np.asarray(samples, dtype=float)
    return float(np.linalg.norm(surface(arr[:, 0], arr[:, 1]) - arr[:, 2]))


# ---------------------------------------------------------------------------
# coefficient files: one coefficient per line, documented order


def save_coefficients(path: str | Path, values: np.ndarray, labels: tuple[str, ...]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for value, label in zip(values, labels):
            fh.write(f"{fmt_float(value)}  # {label}\n")


def load_surface(path: str | Path) -> PolySurface2:
    return PolySurface2(_load_column(path, 10))


def load_cop_curve(path: str | Path) -> PolyCurve1:
    return PolyCurve1(_load_column(path, 5))


def _load_column(path: str | Path, expected: int) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#")[0].strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: {exc}") from exc
    if len(values) != expected:
        raise DataError(f"{path}: expected {expected} coefficients, found {len(values)}")
    return np.array(values)
