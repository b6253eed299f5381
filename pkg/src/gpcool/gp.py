"""Exact Gaussian-process regression with a linear mean and SE-ARD kernel.

The model is ``y = m(x) + f(x) + eps`` with ``m(x) = A x + b``, ``f`` a
zero-mean GP with anisotropic squared-exponential covariance and
``eps ~ N(0, noise_std**2)``.  Everything is closed form: training factors
``K + noise_std**2 I`` once with a Cholesky decomposition, prediction reuses
the factor.  Hyperparameters are tuned by maximising the log marginal
likelihood with L-BFGS-B over log-transformed scale parameters (which keeps
them positive) and the raw mean coefficients.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import DataError, NumericalError
from .serialize import parse_float_list, read_csv, read_kv, write_csv, write_kv

JITTER_START = 1e-10  # relative to vertical_scale**2
JITTER_MAX = 1e-4
LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class Hyperparams:
    """Kernel, noise and mean parameters of one GP.

    Attributes
    ----------
    vertical_scale : float
        Prior standard deviation of the latent function (> 0).
    lengthscales : ndarray, shape (d,)
        Per-dimension horizontal scales (> 0).
    noise_std : float
        Observation noise standard deviation (> 0).
    mean_slope : ndarray, shape (d,)
        Linear mean coefficients.
    mean_offset : float
        Mean intercept.
    """

    vertical_scale: float
    lengthscales: np.ndarray
    noise_std: float
    mean_slope: np.ndarray
    mean_offset: float

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        slope = np.atleast_1d(np.asarray(self.mean_slope, dtype=float)).copy()
        object.__setattr__(self, "lengthscales", ell)
        object.__setattr__(self, "mean_slope", slope)
        if not (np.isfinite(self.vertical_scale) and self.vertical_scale > 0):
            raise ValueError("vertical_scale must be positive and finite")
        if not (np.isfinite(self.noise_std) and self.noise_std > 0):
            raise ValueError("noise_std must be positive and finite")
        if ell.ndim != 1 or not np.all(np.isfinite(ell)) or np.any(ell <= 0):
            raise ValueError("lengthscales must be a vector of positive finite values")
        if slope.shape != ell.shape:
            raise ValueError("mean_slope and lengthscales must have equal length")
        if not np.isfinite(self.mean_offset):
            raise ValueError("mean_offset must be finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def mean(self, x: np.ndarray) -> np.ndarray:
        """Linear mean ``A x + b`` for a single point or a stack of rows."""
        x = np.asarray(x, dtype=float)
        return x @ self.mean_slope + self.mean_offset


@dataclass(frozen=True)
class Dataset:
    """Training features ``X`` (N rows, d columns) and labels ``y`` (N)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float)).copy()
        y = np.atleast_1d(np.asarray(self.y, dtype=float)).copy()
        if X.size == 0:
            X = X.reshape(0, X.shape[1] if X.ndim == 2 and X.shape[1] else 0)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if X.ndim != 2:
            raise DataError("X must be a 2-D array")
        if y.shape != (X.shape[0],):
            raise DataError(f"y has length {y.shape[0]}, expected {X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def kernel_eval(x: np.ndarray, x2: np.ndarray, h: Hyperparams) -> float:
    """SE-ARD covariance between two points."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != (h.dim,) or x2.shape != (h.dim,):
        raise ValueError(f"expected vectors of length {h.dim}, got {x.shape} and {x2.shape}")
    z = (x - x2) / h.lengthscales
    return float(h.vertical_scale**2 * np.exp(-0.5 * np.dot(z, z)))


def kernel_matrix(X: np.ndarray, h: Hyperparams) -> np.ndarray:
    """Gram matrix of the SE-ARD kernel; exactly symmetric by construction."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise ValueError("kernel_matrix requires finite inputs")
    if X.shape[1] != h.dim:
        raise ValueError(f"X has {X.shape[1]} columns, hyperparams expect {h.dim}")
    Z = X / h.lengthscales
    diff = Z[:, None, :] - Z[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return h.vertical_scale**2 * np.exp(-0.5 * sq)


def kernel_vector(X: np.ndarray, x: np.ndarray, h: Hyperparams) -> np.ndarray:
    """Vector of covariances between each row of ``X`` and the point ``x``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (h.dim,):
        raise ValueError(f"expected query of length {h.dim}, got {x.shape}")
    Z = (X - x) / h.lengthscales
    return h.vertical_scale**2 * np.exp(-0.5 * np.einsum("ij,ij->i", Z, Z))


def _chol_with_jitter(K: np.ndarray, noise_var: float, sigma2: float):
    """Cholesky of ``K + noise_var I + jitter I`` with escalating jitter.

    Returns (lower factor, jitter actually added).  Raises NumericalError when
    even the largest allowed jitter cannot rescue the factorisation.
    """
    n = K.shape[0]
    jitter = JITTER_START * sigma2
    last_exc: Exception | None = None
    while jitter <= JITTER_MAX * sigma2 * (1 + 1e-12):
        try:
            L = scipy.linalg.cholesky(
                K + (noise_var + jitter) * np.eye(n), lower=True, check_finite=False
            )
            return L, jitter
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky failed up to jitter {JITTER_MAX * sigma2:.3e}"
    ) from last_exc


@dataclass(frozen=True)
class GpPosterior:
    """Trained GP: dataset, hyperparameters and the cached solves.

    ``chol_factor`` is the lower Cholesky factor of
    ``K + noise_std**2 I + jitter I`` and ``alpha`` solves
    ``(K + noise_std**2 I + jitter I) alpha = y - m(X)``.  An empty dataset is
    allowed and yields the prior (mean ``m(x)``, variance ``vertical_scale**2``).
    """

    dataset: Dataset
    hyperparams: Hyperparams
    chol_factor: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.dataset.n

    def predict_mean(self, x: np.ndarray) -> float:
        h = self.hyperparams
        x = np.asarray(x, dtype=float).ravel()
        if self.n == 0:
            return float(h.mean(x))
        kx = kernel_vector(self.dataset.X, x, h)
        return float(h.mean(x) + kx @ self.alpha)

    def predict_var(self, x: np.ndarray) -> float:
        h = self.hyperparams
        sigma2 = h.vertical_scale**2
        if self.n == 0:
            return float(sigma2)
        kx = kernel_vector(self.dataset.X, np.asarray(x, dtype=float).ravel(), h)
        v = scipy.linalg.solve_triangular(self.chol_factor, kx, lower=True, check_finite=False)
        var = sigma2 - float(v @ v)
        return float(min(max(var, 0.0), sigma2))

    def predict_mean_batch(self, X: np.ndarray) -> np.ndarray:
        h = self.hyperparams
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n == 0:
            return h.mean(X)
        Kq = _cross_kernel(X, self.dataset.X, h)
        return h.mean(X) + Kq @ self.alpha

    def predict_var_batch(self, X: np.ndarray) -> np.ndarray:
        h = self.hyperparams
        sigma2 = h.vertical_scale**2
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n == 0:
            return np.full(X.shape[0], sigma2)
        Kq = _cross_kernel(X, self.dataset.X, h)
        V = scipy.linalg.solve_triangular(self.chol_factor, Kq.T, lower=True, check_finite=False)
        var = sigma2 - np.einsum("ij,ij->j", V, V)
        return np.clip(var, 0.0, sigma2)

    def predict_mean_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean and its gradient with respect to the query point."""
        h = self.hyperparams
        x = np.asarray(x, dtype=float).ravel()
        if self.n == 0:
            return float(h.mean(x)), h.mean_slope.copy()
        X = self.dataset.X
        kx = kernel_vector(X, x, h)
        mu = float(h.mean(x) + kx @ self.alpha)
        # d k(x, x_n)/dx = k(x, x_n) (x_n - x) / ell^2
        scaled = (X - x) / h.lengthscales**2
        dmu = h.mean_slope + scaled.T @ (self.alpha * kx)
        return mu, dmu

    def predict_var_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Variance (clamped to [0, vertical_scale**2]) and its gradient."""
        h = self.hyperparams
        sigma2 = h.vertical_scale**2
        x = np.asarray(x, dtype=float).ravel()
        if self.n == 0:
            return float(sigma2), np.zeros(h.dim)
        X = self.dataset.X
        kx = kernel_vector(X, x, h)
        q = scipy.linalg.cho_solve((self.chol_factor, True), kx, check_finite=False)
        var = sigma2 - float(kx @ q)
        scaled = (X - x) / h.lengthscales**2
        dvar = -2.0 * (scaled.T @ (q * kx))
        if var <= 0.0:
            return 0.0, np.zeros(h.dim)
        if var >= sigma2:
            return float(sigma2), np.zeros(h.dim)
        return float(var), dvar


def _cross_kernel(A: np.ndarray, B: np.ndarray, h: Hyperparams) -> np.ndarray:
    Za = A / h.lengthscales
    Zb = B / h.lengthscales
    sq = (
        np.sum(Za**2, axis=1)[:, None]
        - 2.0 * Za @ Zb.T
        + np.sum(Zb**2, axis=1)[None, :]
    )
    return h.vertical_scale**2 * np.exp(-0.5 * np.maximum(sq, 0.0))


def fit(dataset: Dataset, h: Hyperparams) -> GpPosterior:
    """Factor the training covariance and cache the weight vector."""
    if dataset.n > 0 and dataset.d != h.dim:
        raise ValueError(f"dataset dim {dataset.d} != hyperparam dim {h.dim}")
    if dataset.n == 0:
        return GpPosterior(dataset, h, np.empty((0, 0)), np.empty(0), 0.0)
    K = kernel_matrix(dataset.X, h)
    L, jitter = _chol_with_jitter(K, h.noise_std**2, h.vertical_scale**2)
    resid = dataset.y - h.mean(dataset.X)
    alpha = scipy.linalg.cho_solve((L, True), resid, check_finite=False)
    return GpPosterior(dataset, h, L, alpha, jitter)


def _pack(h: Hyperparams) -> np.ndarray:
    """Optimisation vector: [log sigma, log ell_1..d, log noise, A_1..d, b]."""
    return np.concatenate(
        [
            [np.log(h.vertical_scale)],
            np.log(h.lengthscales),
            [np.log(h.noise_std)],
            h.mean_slope,
            [h.mean_offset],
        ]
    )


def _unpack(vec: np.ndarray, d: int) -> Hyperparams:
    return Hyperparams(
        vertical_scale=float(np.exp(vec[0])),
        lengthscales=np.exp(vec[1 : 1 + d]),
        noise_std=float(np.exp(vec[1 + d])),
        mean_slope=vec[2 + d : 2 + 2 * d].copy(),
        mean_offset=float(vec[2 + 2 * d]),
    )


def log_marginal_likelihood(dataset: Dataset, h: Hyperparams) -> tuple[float, np.ndarray]:
    """LML value and gradient in the packed parameterisation of :func:`_pack`.

    The gradient covers log vertical scale, log lengthscales, log noise and
    the raw mean parameters, in that order.
    """
    if dataset.n == 0:
        raise ValueError("log marginal likelihood needs at least one data point")
    X, y = dataset.X, dataset.y
    n, d = dataset.n, dataset.d
    sigma2 = h.vertical_scale**2
    K = kernel_matrix(X, h)
    L, jitter = _chol_with_jitter(K, h.noise_std**2, sigma2)
    resid = y - h.mean(X)
    alpha = scipy.linalg.cho_solve((L, True), resid, check_finite=False)
    value = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * n * LOG2PI
    )

    Kinv = scipy.linalg.cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv  # dLML/dK = W/2 for symmetric dK

    grad = np.empty(2 * d + 3)
    # jitter scales with sigma2, so it contributes to the log-sigma derivative
    grad[0] = 0.5 * float(np.sum(W * (2.0 * (K + jitter * np.eye(n)))))
    Z = X / h.lengthscales
    for i in range(d):
        Di = (Z[:, i][:, None] - Z[:, i][None, :]) ** 2
        grad[1 + i] = 0.5 * float(np.sum(W * (K * Di)))
    grad[1 + d] = 0.5 * float(np.trace(W)) * 2.0 * h.noise_std**2
    grad[2 + d : 2 + 2 * d] = X.T @ alpha
    grad[2 + 2 * d] = float(np.sum(alpha))
    return value, grad


@dataclass
class OptResult:
    """Diagnostics from :func:`optimize_hyperparams`."""

    converged: bool
    grad_norm: float
    iterations: int
    lml_initial: float
    lml_final: float
    warning: str = ""
    wall_time: float = 0.0


def optimize_hyperparams(
    dataset: Dataset,
    h0: Hyperparams,
    max_iters: int = 200,
    grad_tol: float = 1e-5,
) -> tuple[Hyperparams, OptResult]:
    """Maximise the log marginal likelihood starting from ``h0``.

    L-BFGS-B works on the packed log-space vector, so positivity of the scale
    parameters holds throughout.  The returned hyperparameters never score
    below the initial point: if the line search fails immediately, ``h0`` is
    returned with a warning flag instead of a worse iterate.
    """
    d = dataset.d
    t0 = time.perf_counter()
    lml0, _ = log_marginal_likelihood(dataset, h0)

    def objective(vec: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            value, grad = log_marginal_likelihood(dataset, _unpack(vec, d))
        except NumericalError:
            return 1e25, np.zeros_like(vec)
        return -value, -grad

    bounds = [(-15.0, 15.0)] * (d + 2) + [(None, None)] * (d + 1)
    res = scipy.optimize.minimize(
        objective,
        _pack(h0),
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options=dict(maxiter=max_iters, ftol=1e-14, gtol=grad_tol, maxls=40),
    )
    h_best = _unpack(res.x, d)
    lml_final, grad_final = log_marginal_likelihood(dataset, h_best)
    warning = ""
    if lml_final < lml0 - 1e-12:
        h_best, lml_final = h0, lml0
        _, grad_final = log_marginal_likelihood(dataset, h0)
        warning = f"optimizer returned a worse point ({res.message}); kept the initial one"
    elif not res.success and "ABNORMAL" in str(res.message).upper():
        warning = f"line search gave up early: {res.message}"
    grad_norm = float(np.max(np.abs(grad_final)))
    diag = OptResult(
        converged=grad_norm <= grad_tol,
        grad_norm=grad_norm,
        iterations=int(res.nit),
        lml_initial=float(lml0),
        lml_final=float(lml_final),
        warning=warning,
        wall_time=time.perf_counter() - t0,
    )
    return h_best, diag


def default_init(dataset: Dataset) -> Hyperparams:
    """Data-driven starting point for hyperparameter optimisation."""
    y = dataset.y
    b0 = float(np.mean(y)) if dataset.n else 0.0
    spread = float(np.std(y - b0)) if dataset.n > 1 else 1.0
    spread = max(spread, 1e-3)
    if dataset.n > 1:
        ell0 = np.std(dataset.X, axis=0) * 2.0
        ell0[ell0 < 1e-3] = 1.0
    else:
        ell0 = np.ones(dataset.d)
    return Hyperparams(
        vertical_scale=spread,
        lengthscales=ell0,
        noise_std=0.3 * spread,
        mean_slope=np.zeros(dataset.d),
        mean_offset=b0,
    )


# ---------------------------------------------------------------------------
# persistence


def save_model(path: str | Path, posterior: GpPosterior, meta: dict[str, str] | None = None) -> None:
    """Write hyperparameters + dataset as one key-value/CSV text bundle."""
    h, data = posterior.hyperparams, posterior.dataset
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# gpcool gp model v1\n")
        write_kv(
            fh,
            {
                "vertical_scale": h.vertical_scale,
                "lengthscales": h.lengthscales,
                "noise_std": h.noise_std,
                "mean_slope": h.mean_slope,
                "mean_offset": h.mean_offset,
            },
        )
        for key, value in (meta or {}).items():
            fh.write(f"meta.{key} = {value}\n")
        fh.write("[data]\n")
        if data.n:
            table = np.column_stack([data.X, data.y])
        else:
            table = np.empty((0, data.d + 1))
        header = [f"x{i}" for i in range(data.d)] + ["y"]
        write_csv(fh, header, table)


def load_model(path: str | Path) -> tuple[GpPosterior, dict[str, str]]:
    """Read a bundle written by :func:`save_model` and refit the posterior."""
    with open(path, "r", encoding="utf-8") as fh:
        head: list[str] = []
        for line in fh:
            if line.strip() == "[data]":
                break
            head.append(line)
        else:
            raise DataError(f"{path}: missing [data] section")
        kv = read_kv(io_from_lines(head))
        header, table = read_csv(fh)
    meta = {k[len("meta.") :]: v for k, v in kv.items() if k.startswith("meta.")}
    h = Hyperparams(
        vertical_scale=float(kv["vertical_scale"]),
        lengthscales=parse_float_list(kv["lengthscales"]),
        noise_std=float(kv["noise_std"]),
        mean_slope=parse_float_list(kv["mean_slope"]),
        mean_offset=float(kv["mean_offset"]),
    )
    d = len(header) - 1
    if d != h.dim:
        raise DataError(f"{path}: dataset dim {d} != hyperparam dim {h.dim}")
    dataset = Dataset(X=table[:, :d].reshape(-1, d), y=table[:, d] if table.size else np.empty(0))
    return fit(dataset, h), meta


def io_from_lines(lines: list[str]):
    import io

    return io.StringIO("".join(lines))
