"""Synthetic per-topic traffic: sine seasonality, an AR(1) trend and a GP component.

Every topic and component draws from its own random stream, derived from the
master seed by XOR with a stable 64-bit hash of ``(topic, component)``, so a
topic's series does not depend on how many other topics are generated.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ParameterError, as_series
from .predict import RationalQuadraticKernel, gram_matrix, cholesky_with_jitter

_MASK64 = (1 << 64) - 1


def stable_hash(*parts) -> int:
    digest = hashlib.blake2b(":".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng((int(seed) & _MASK64) ^ stable_hash(*parts))


@dataclass(frozen=True)
class SineSpec:
    period: float
    amplitude_low: float
    amplitude_high: float

    def __post_init__(self):
        if self.period <= 0:
            raise ParameterError("sine period must be positive")
        if self.amplitude_low > self.amplitude_high:
            raise ParameterError("amplitude_low must not exceed amplitude_high")


DEFAULT_SINES = (SineSpec(24.0, 1.0, 2.0), SineSpec(2.0, 0.5, 1.0))


@dataclass(frozen=True)
class TrafficGenConfig:
    seed: int = 0
    k: int = 10
    horizon: int = 150
    sine_specs: tuple[SineSpec, ...] = DEFAULT_SINES
    ar_coeff: float = 0.9
    ar_noise_std: float = 0.5
    gp_kernel: RationalQuadraticKernel = field(default_factory=RationalQuadraticKernel)
    component_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    base_offset: float = 5.0
    clamp_floor: float = 0.0

    def __post_init__(self):
        if self.horizon < 1 or self.k < 1:
            raise ParameterError("horizon and k must be >= 1")
        if not abs(self.ar_coeff) < 1:
            raise ParameterError("ar_coeff must satisfy |ar_coeff| < 1")
        if self.ar_noise_std < 0:
            raise ParameterError("ar_noise_std must be >= 0")
        if len(self.component_weights) != 3:
            raise ParameterError("component_weights needs three entries (sine, ar, gp)")
        object.__setattr__(self, "sine_specs", tuple(
            s if isinstance(s, SineSpec) else SineSpec(*s) for s in self.sine_specs))
        object.__setattr__(self, "component_weights", tuple(float(w) for w in self.component_weights))


def sine_component(period: float, amplitude: float, phase: float, t):
    if period <= 0:
        raise ParameterError("sine period must be positive")
    return amplitude * np.sin(2.0 * math.pi * np.asarray(t, dtype=float) / period + phase)


def ar1_path(coeff: float, noise_std: float, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """``y_0 = 0``, ``y_{t+1} = coeff * y_t + (1 - coeff) * w_t`` with Gaussian ``w_t``."""
    if not abs(coeff) < 1:
        raise ParameterError("AR(1) coefficient must satisfy |coeff| < 1")
    w = rng.normal(0.0, noise_std, size=max(horizon - 1, 0)) if noise_std > 0 else np.zeros(max(horizon - 1, 0))
    y = np.zeros(horizon)
    for t in range(horizon - 1):
        y[t + 1] = coeff * y[t] + (1.0 - coeff) * w[t]
    return y


def gp_path(kernel: RationalQuadraticKernel, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """One zero-mean GP draw at times ``1..horizon`` via a jittered Cholesky factor."""
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    t = np.arange(1, horizon + 1, dtype=float)
    K = gram_matrix(kernel, t, t) + 1e-8 * np.eye(horizon)
    L = cholesky_with_jitter(K)
    return L @ rng.standard_normal(horizon)


def generate_topic(config: TrafficGenConfig, topic: int) -> np.ndarray:
    T = config.horizon
    t = np.arange(1, T + 1, dtype=float)
    w_sine, w_ar, w_gp = config.component_weights
    rng = substream(config.seed, topic, "sine")
    seasonal = np.zeros(T)
    for spec in config.sine_specs:
        amp = rng.uniform(spec.amplitude_low, spec.amplitude_high)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        seasonal += sine_component(spec.period, amp, phase, t)
    trend = ar1_path(config.ar_coeff, config.ar_noise_std, T, substream(config.seed, topic, "ar"))
    noise = gp_path(config.gp_kernel, T, substream(config.seed, topic, "gp"))
    y = config.base_offset + w_sine * seasonal + w_ar * trend + w_gp * noise
    return np.maximum(y, config.clamp_floor)


def generate_traffic(config: TrafficGenConfig) -> np.ndarray:
    """Return the ``(horizon, k)`` traffic series determined by ``config``."""
    return np.column_stack([generate_topic(config, i) for i in range(config.k)])


def write_traffic_csv(series, path) -> None:
    arr = as_series(series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"topic_{i}" for i in range(arr.shape[1])])
        for t, row in enumerate(arr, start=1):
            w.writerow([t] + [repr(float(v)) for v in row])


def read_traffic_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "t":
        raise ParameterError("traffic CSV must start with a 't' column")
    return np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(len(body), len(header) - 1)
