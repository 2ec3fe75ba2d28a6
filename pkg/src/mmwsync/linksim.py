"""Received-frame synthesis: channel convolution, impairments, noise, whitening.

The post-combining model per receive sample n is

    r[n] = exp(j*(2*pi*cfo*n + pn[n])) * sum_d g[d] * s[n - d - n0] + v[n]

with g[d] the whitened beamformed channel taps and v spatially white
complex Gaussian noise of per-entry variance noise_var.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import ChannelRealization
from .impairments import ImpairmentRealization


@dataclass(frozen=True)
class WhiteningFilter:
    """Upper-triangular factor of the combiner Gram matrix W^H W."""

    factor: np.ndarray

    def apply_inverse_adjoint(self, mat: np.ndarray) -> np.ndarray:
        """Left-multiply by factor^-H (the whitening applied to combined samples)."""
        return scipy.linalg.solve_triangular(self.factor.conj().T, mat, lower=True)


def whitening_from_combiner(w_rf: np.ndarray) -> WhiteningFilter:
    """Cholesky factor D of C = W^H W with C = D^H D (D upper triangular)."""
    gram = w_rf.conj().T @ w_rf
    try:
        factor = scipy.linalg.cholesky(gram, lower=False)
    except np.linalg.LinAlgError as exc:
        raise ValueError("combiner is rank deficient") from exc
    return WhiteningFilter(factor=factor)


@dataclass(frozen=True)
class BeamformedChannel:
    """Low-dimensional channel seen through one frame's precoder/combiner pair."""

    taps: np.ndarray  # (num_taps, num_rx_chains)
    freq: np.ndarray  # (num_subcarriers, num_rx_chains)

    @property
    def num_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def num_chains(self) -> int:
        return self.taps.shape[1]


def beamformed_taps(
    chan: ChannelRealization,
    f_rf: np.ndarray,
    spatial_weights: np.ndarray,
    w_rf: np.ndarray,
    whitener: WhiteningFilter,
    num_subcarriers: int,
) -> BeamformedChannel:
    """g[d] = D^-H W^H H[d] F q for each delay tap, plus its subcarrier transform.

    freq[k] = sum_d taps[d] * exp(-j*2*pi*k*d/K).
    """
    fq = f_rf @ spatial_weights
    combined = np.einsum("ri,drj,j->di", w_rf.conj(), chan.taps, fq)  # (D, L_r)
    taps = whitener.apply_inverse_adjoint(combined.T).T
    freq = np.fft.fft(taps, n=num_subcarriers, axis=0)
    return BeamformedChannel(taps=taps, freq=freq)


def snr_definition(g_taps: np.ndarray, noise_var: float, sample_energy: float = 1.0) -> float:
    """Operating SNR in dB: (sum_d ||g[d]||^2 / num_chains) * sample_energy / noise_var.

    sample_energy is the mean per-sample energy of the transmitted training
    stream's OFDM section, which makes the value the mean received
    signal-to-noise ratio per useful sample and RF chain.
    """
    g = np.asarray(g_taps)
    mean_gain = float(np.sum(np.abs(g) ** 2)) / g.shape[1]
    return 10.0 * np.log10(mean_gain * sample_energy / noise_var)


def noise_var_for_snr(g_taps: np.ndarray, snr_db: float, sample_energy: float = 1.0) -> float:
    """Invert snr_definition: the noise variance realizing a target SNR."""
    g = np.asarray(g_taps)
    mean_gain = float(np.sum(np.abs(g) ** 2)) / g.shape[1]
    return mean_gain * sample_energy / 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class ReceivedFrame:
    """Post-combining, post-whitening samples plus the impairments that made them."""

    samples: np.ndarray  # (num_rx_chains, buffer_len)
    truth: ImpairmentRealization
    snr_db: float
    noise_var: float

    @property
    def num_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def buffer_len(self) -> int:
        return self.samples.shape[1]


def rx_buffer_len(frame_len: int, num_taps: int, timing_max: int, guard_len: int = 32) -> int:
    """Receive window length: timing slack + frame + convolution tail + noise guard."""
    return timing_max + frame_len + num_taps - 1 + guard_len


def simulate_rx(
    tx: np.ndarray,
    bf: BeamformedChannel,
    imp: ImpairmentRealization,
    noise_var: float,
    rng: np.random.Generator | int,
    buffer_len: int | None = None,
    snr_db: float = float("nan"),
    noise_unit: np.ndarray | None = None,
) -> ReceivedFrame:
    """Generate one received frame over a fixed-length buffer.

    The transmitted stream enters at sample imp.timing_offset; the buffer
    default leaves no extra guard.  `noise_unit` optionally supplies the
    unit-variance noise draw (for common-random-number sweeps); otherwise it
    is drawn from rng.
    """
    tx = np.asarray(tx, dtype=np.complex128)
    n_chains = bf.num_chains
    d = bf.num_taps
    n0 = imp.timing_offset
    if buffer_len is None:
        buffer_len = n0 + tx.size + d - 1
    if imp.phase_noise.size < buffer_len:
        raise ValueError("phase-noise trace shorter than the receive buffer")

    signal = np.zeros((n_chains, buffer_len), dtype=np.complex128)
    span = tx.size + d - 1
    if n0 + span > buffer_len:
        raise ValueError("buffer too short for the delayed frame")
    for i in range(n_chains):
        signal[i, n0 : n0 + span] = np.convolve(tx, bf.taps[:, i])

    n = np.arange(buffer_len)
    phasor = np.exp(1j * (2.0 * np.pi * imp.cfo * n + imp.phase_noise[:buffer_len]))
    signal *= phasor[None, :]

    if noise_var > 0:
        if noise_unit is None:
            rng = np.random.default_rng(rng)
            noise_unit = (
                rng.standard_normal((n_chains, buffer_len))
                + 1j * rng.standard_normal((n_chains, buffer_len))
            ) / np.sqrt(2.0)
        signal += np.sqrt(noise_var) * noise_unit[:, :buffer_len]

    return ReceivedFrame(samples=signal, truth=imp, snr_db=snr_db, noise_var=noise_var)


def save_frame(frame: ReceivedFrame, path) -> None:
    """Golden-frame fixture: samples plus the truth record, replayable bit-exactly."""
    np.savez(
        path,
        samples=frame.samples,
        timing_offset=frame.truth.timing_offset,
        cfo=frame.truth.cfo,
        phase_noise=frame.truth.phase_noise,
        snr_db=frame.snr_db,
        noise_var=frame.noise_var,
    )


def load_frame(path) -> ReceivedFrame:
    data = np.load(path)
    truth = ImpairmentRealization(
        timing_offset=int(data["timing_offset"]),
        cfo=float(data["cfo"]),
        phase_noise=data["phase_noise"],
    )
    return ReceivedFrame(
        samples=data["samples"],
        truth=truth,
        snr_db=float(data["snr_db"]),
        noise_var=float(data["noise_var"]),
    )
