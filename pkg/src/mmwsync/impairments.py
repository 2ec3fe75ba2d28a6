"""Timing offset, carrier frequency offset, and oscillator phase noise.

The phase-noise process is a stationary Gaussian process specified by a
pole/zero PSD; its autocorrelation is an exponential plus a white floor.
The white (delta) term is interpreted as a Kronecker delta on the sampling
lattice so the lag-zero variance stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

RIDGE_SCALE = 1e-12  # diagonal ridge, relative to R(0), before factorization


@dataclass(frozen=True)
class PhaseNoiseModel:
    """Pole/zero oscillator PSD: level in dBc/Hz, zero and pole frequencies in Hz."""

    g_theta_dbc: float = -85.0
    f_zero_hz: float = 100e6
    f_pole_hz: float = 1e6

    def __post_init__(self) -> None:
        if not self.f_zero_hz > self.f_pole_hz > 0:
            raise ValueError("requires f_zero_hz > f_pole_hz > 0")

    @property
    def level_linear(self) -> float:
        return 10.0 ** (self.g_theta_dbc / 10.0)


def pn_psd(model: PhaseNoiseModel, freq_hz) -> np.ndarray:
    """One-sided PSD value: G * (1 + (f/f_zero)^2) / (1 + (f/f_pole)^2)."""
    f = np.asarray(freq_hz, dtype=float)
    out = model.level_linear * (1.0 + (f / model.f_zero_hz) ** 2) / (1.0 + (f / model.f_pole_hz) ** 2)
    return out if out.ndim else float(out)


def pn_autocorrelation(model: PhaseNoiseModel, tau) -> np.ndarray:
    """Autocorrelation in rad^2 at lag tau (seconds).

    The white floor G*(f_pole/f_zero)^2 contributes only at exactly zero lag
    (Kronecker-delta convention on the sampling lattice).
    """
    tau = np.asarray(tau, dtype=float)
    g = model.level_linear
    ratio2 = (model.f_pole_hz / model.f_zero_hz) ** 2
    out = g * np.pi * model.f_pole_hz * (1.0 - ratio2) * np.exp(-2.0 * np.pi * model.f_pole_hz * np.abs(tau))
    out = out + np.where(tau == 0.0, g * ratio2, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PnCovariance:
    """Toeplitz covariance of phase-noise samples on a uniform lattice."""

    matrix: np.ndarray
    sampling_interval: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of matrix + ridge, ridge = RIDGE_SCALE * R(0)."""
        ridge = RIDGE_SCALE * float(self.matrix[0, 0])
        return np.linalg.cholesky(self.matrix + ridge * np.eye(self.size))


def pn_covariance(model: PhaseNoiseModel, n: int, sampling_interval: float) -> PnCovariance:
    """Covariance of n consecutive phase-noise samples spaced sampling_interval apart."""
    if n < 1:
        raise ValueError("n must be >= 1")
    first = pn_autocorrelation(model, np.arange(n) * sampling_interval)
    return PnCovariance(matrix=scipy.linalg.toeplitz(first), sampling_interval=sampling_interval)


def pn_covariance_at(model: PhaseNoiseModel, sample_indices: np.ndarray, sampling_interval: float) -> np.ndarray:
    """Covariance of phase-noise samples at arbitrary (integer) lattice positions."""
    idx = np.asarray(sample_indices, dtype=np.int64)
    lags = np.abs(idx[:, None] - idx[None, :]) * sampling_interval
    return pn_autocorrelation(model, lags)


def sample_phase_noise(cov: PnCovariance, rng: np.random.Generator | int) -> np.ndarray:
    """Zero-mean Gaussian draw with the given covariance (Cholesky square root)."""
    rng = np.random.default_rng(rng)
    if not np.any(cov.matrix):
        return np.zeros(cov.size)
    try:
        factor = cov.cholesky()
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance factorization failed (matrix not PSD)") from exc
    return factor @ rng.standard_normal(cov.size)


@lru_cache(maxsize=16)
def _cached_shape_factor(f_zero_hz: float, f_pole_hz: float, n: int, sampling_interval: float) -> np.ndarray:
    """Cholesky factor of the unit-level (g_theta = 0 dBc) covariance; reused across draws."""
    model = PhaseNoiseModel(g_theta_dbc=0.0, f_zero_hz=f_zero_hz, f_pole_hz=f_pole_hz)
    return pn_covariance(model, n, sampling_interval).cholesky()


@dataclass(frozen=True)
class ImpairmentRealization:
    """One frame's timing offset (samples), normalized CFO (cycles/sample), and PN trace."""

    timing_offset: int
    cfo: float
    phase_noise: np.ndarray

    def __post_init__(self) -> None:
        if self.timing_offset < 0:
            raise ValueError("timing_offset must be nonnegative")
        if not abs(self.cfo) < 0.5:
            raise ValueError("normalized CFO must satisfy |cfo| < 0.5")
        object.__setattr__(self, "phase_noise", np.asarray(self.phase_noise, dtype=float))


def draw_impairments(
    num_samples: int,
    timing_max: int,
    cfo_max_hz: float,
    sampling_interval: float,
    model: PhaseNoiseModel | None,
    rng: np.random.Generator | int,
) -> ImpairmentRealization:
    """Draw one frame's impairments; a pure function of its inputs and the stream.

    Timing offset is uniform on [0, timing_max]; CFO is uniform on
    (-cfo_max_hz, cfo_max_hz) normalized by the sampling rate; phase noise
    covers all num_samples received samples.  The PN draw consumes the same
    amount of stream state regardless of the PSD level (the level only
    scales a cached unit-level factor), so sweeps over the PN level can use
    common random numbers.
    """
    if cfo_max_hz * sampling_interval >= 0.5:
        raise ValueError("cfo_max_hz must be below half the sampling rate")
    rng = np.random.default_rng(rng)
    n0 = int(rng.integers(0, timing_max + 1))
    cfo = float(rng.uniform(-1.0, 1.0) * cfo_max_hz * sampling_interval)
    z = rng.standard_normal(num_samples)
    if model is None:
        pn = np.zeros(num_samples)
    else:
        factor = _cached_shape_factor(model.f_zero_hz, model.f_pole_hz, num_samples, sampling_interval)
        pn = np.sqrt(model.level_linear) * (factor @ z)
    return ImpairmentRealization(timing_offset=n0, cfo=cfo, phase_noise=pn)


def export_psd_csv(model: PhaseNoiseModel, freqs_hz: np.ndarray, path) -> None:
    """Two-column CSV: frequency (Hz), PSD (linear)."""
    with open(path, "w") as fh:
        fh.write("freq_hz,psd\n")
        for f in np.asarray(freqs_hz, dtype=float):
            fh.write(f"{f:.10g},{pn_psd(model, f):.10g}\n")


def export_autocorrelation_csv(model: PhaseNoiseModel, lags_s: np.ndarray, path) -> None:
    """Two-column CSV: lag (s), autocorrelation (rad^2)."""
    with open(path, "w") as fh:
        fh.write("lag_s,autocorr_rad2\n")
        for tau in np.asarray(lags_s, dtype=float):
            fh.write(f"{tau:.10g},{pn_autocorrelation(model, tau):.10g}\n")
