"""Gaussian-process forecasting with a rational quadratic kernel.

The forecaster regresses each topic independently on its revealed history and
reports, per future step, the predicted traffic vector together with one
scalar uncertainty: the Euclidean norm of the per-topic posterior standard
deviations.  :func:`oracle_forecast` is a test-harness predictor whose error
bound holds exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import linalg

from .core import NumericalError, ParameterError, as_series

_JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class RationalQuadraticKernel:
    variance: float = 1.0
    length_scale: float = 5.0
    alpha: float = 1.0
    noise_variance: float = 0.1

    def __post_init__(self):
        if self.variance <= 0 or self.length_scale <= 0 or self.alpha <= 0:
            raise ParameterError("kernel variance, length_scale and alpha must be positive")
        if self.noise_variance < 0:
            raise ParameterError("kernel noise_variance must be >= 0")


def kernel_eval(kern: RationalQuadraticKernel, t1, t2):
    """``variance * (1 + (t1 - t2)^2 / (2 alpha l^2))^(-alpha)``; broadcasts over arrays."""
    d2 = (np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)) ** 2
    return kern.variance * (1.0 + d2 / (2.0 * kern.alpha * kern.length_scale**2)) ** (-kern.alpha)


def gram_matrix(kern, a, b):
    return kernel_eval(kern, np.asarray(a, dtype=float)[:, None], np.asarray(b, dtype=float)[None, :])


def cholesky_with_jitter(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating a diagonal jitter until it succeeds."""
    scale = max(float(np.mean(np.diag(K))), 1.0)
    for jitter in _JITTERS:
        try:
            return linalg.cholesky(K + jitter * scale * np.eye(len(K)), lower=True)
        except linalg.LinAlgError:
            continue
    raise NumericalError("kernel matrix is not positive definite even after jitter")


def gp_fit_predict(history, query_times, kern: RationalQuadraticKernel, times=None):
    """Posterior mean and standard deviation of the latent process.

    ``history`` holds observations at times ``1..n`` unless ``times`` is
    given.  The history is centred on its mean before regression and the mean
    is added back to the predictions.

    Returns
    -------
    means, stds : ndarray
        Arrays with the length of ``query_times``.
    """
    y = np.asarray(history, dtype=float).ravel()
    if y.size == 0:
        raise ParameterError("history must be nonempty")
    if times is None:
        times = np.arange(1, y.size + 1, dtype=float)
    q = np.asarray(query_times, dtype=float).ravel()
    offset = y.mean()
    K = gram_matrix(kern, times, times) + kern.noise_variance * np.eye(y.size)
    L = cholesky_with_jitter(K)
    Ks = gram_matrix(kern, times, q)
    alpha = linalg.cho_solve((L, True), y - offset)
    means = Ks.T @ alpha + offset
    v = linalg.solve_triangular(L, Ks, lower=True)
    var = kern.variance - np.einsum("ij,ij->j", v, v)
    return means, np.sqrt(np.clip(var, 0.0, None))


@dataclass(frozen=True)
class Forecast:
    """Predicted traffic for steps ``start_time .. start_time + H - 1``.

    ``means`` has shape ``(H, k)``; ``uncertainties[s]`` bounds (or estimates)
    the Euclidean error of ``means[s]``.
    """

    start_time: int
    means: np.ndarray
    uncertainties: np.ndarray

    def __post_init__(self):
        if len(self.means) != len(self.uncertainties) or len(self.means) < 1:
            raise ParameterError("means and uncertainties need equal length >= 1")
        if np.any(np.asarray(self.uncertainties) < 0):
            raise ParameterError("uncertainties must be nonnegative")

    @property
    def horizon(self) -> int:
        return len(self.means)


def forecast(series, t: int, H: int, kern: RationalQuadraticKernel | None = None,
             z: float = 1.0, scale_variance: bool = True) -> Forecast:
    """GP forecast made at time ``t`` from the prefix ``series[:t-1]``.

    Each topic gets its own regression with the kernel variance multiplied by
    that topic's empirical history variance (when ``scale_variance``).  The
    scalar uncertainty is ``z * sqrt(sum_i std_i^2)``.
    """
    hist = as_series(series)[: t - 1]
    if len(hist) < 2:
        raise ParameterError("forecast needs at least two history points")
    if H < 1:
        raise ParameterError("forecast horizon must be >= 1")
    kern = kern or RationalQuadraticKernel()
    times = np.arange(1, len(hist) + 1, dtype=float)
    query = np.arange(t, t + H, dtype=float)
    k = hist.shape[1]
    means = np.empty((H, k))
    var_sum = np.zeros(H)
    for i in range(k):
        kern_i = kern
        if scale_variance:
            v = float(np.var(hist[:, i]))
            if v > 0:
                kern_i = replace(kern, variance=kern.variance * v)
        mu, sd = gp_fit_predict(hist[:, i], query, kern_i, times=times)
        means[:, i] = mu
        var_sum += sd**2
    return Forecast(t, np.clip(means, 0.0, None), z * np.sqrt(var_sum))


class GPPredictor:
    """Callable predictor ``(history, t, H) -> Forecast`` backed by :func:`forecast`."""

    def __init__(self, kernel: RationalQuadraticKernel | None = None, z: float = 1.0,
                 scale_variance: bool = True):
        self.kernel = kernel or RationalQuadraticKernel()
        self.z = z
        self.scale_variance = scale_variance

    def __call__(self, history, t: int, H: int) -> Forecast:
        return forecast(history, t, H, self.kernel, self.z, self.scale_variance)


BoundSchedule = Callable[[int, int], float]


def oracle_forecast(truth, t: int, H: int, bound_schedule: BoundSchedule, rng) -> Forecast:
    """Perturb the true traffic by at most ``bound_schedule(t, s)`` in Euclidean norm.

    ``s`` runs over ``1..H`` so that ``s = 1`` is the step ``t`` itself;
    ``truth`` rows are indexed from time 1.  Clamping the perturbed means at
    zero only moves them towards the (nonnegative) truth, and the bound is
    re-checked afterwards.
    """
    truth = as_series(truth)
    if t < 1 or t + H - 1 > len(truth):
        raise ParameterError("oracle forecast window runs past the series")
    k = truth.shape[1]
    target = truth[t - 1 : t - 1 + H]
    eps = np.array([float(bound_schedule(t, s)) for s in range(1, H + 1)])
    direction = rng.standard_normal((H, k))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radius = eps * rng.uniform(0.0, 1.0, size=H)
    means = np.clip(target + direction / norms * radius[:, None], 0.0, None)
    err = np.linalg.norm(means - target, axis=1)
    bad = err > eps
    means[bad] = target[bad]
    return Forecast(t, means, eps)


class OraclePredictor:
    """Predictor with exact error bounds, reading the hidden truth (tests only)."""

    def __init__(self, truth, bound_schedule: BoundSchedule, rng):
        self.truth = as_series(truth)
        self.schedule = bound_schedule
        self.rng = rng

    def __call__(self, history, t: int, H: int) -> Forecast:
        return oracle_forecast(self.truth, t, H, self.schedule, self.rng)
