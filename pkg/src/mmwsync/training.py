"""Training waveform construction.

Per-frame hybrid precoders/combiners for a partially-connected array
(one active transmit subarray carrying a cyclically shifted Zadoff-Chu
sequence, one-hot antenna selection per receive subarray), QPSK spatial
modulation weights, unit-modulus OFDM pilots, and a boosted binary Golay
preamble for frame detection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

PREAMBLE_LEN = 64
DEFAULT_POWER_BOOST = 10.0 ** 0.6  # +6 dB, linear power


@dataclass(frozen=True)
class ZCSequence:
    """Constant-amplitude zero-autocorrelation sequence with its root index."""

    length: int
    root: int
    values: np.ndarray


def zadoff_chu(length: int, root: int) -> ZCSequence:
    """Zadoff-Chu sequence of the given length and root.

    Odd lengths use exp(-j*pi*u*n*(n+1)/N); even lengths switch to the
    exp(-j*pi*u*n^2/N) convention.  The root must be coprime with the length.
    """
    if length < 1:
        raise ValueError("length must be positive")
    if math.gcd(length, root) != 1:
        raise ValueError(f"root {root} is not coprime with length {length}")
    n = np.arange(length)
    if length % 2:
        phase = -np.pi * root * n * (n + 1) / length
    else:
        phase = -np.pi * root * n * n / length
    return ZCSequence(length=length, root=root, values=np.exp(1j * phase))


def _golay_pair(num_doublings: int) -> tuple[np.ndarray, np.ndarray]:
    """Binary Golay complementary pair of length 2**num_doublings."""
    a = np.array([1.0])
    b = np.array([1.0])
    for _ in range(num_doublings):
        a, b = np.concatenate([a, b]), np.concatenate([a, -b])
    return a, b


@dataclass(frozen=True)
class GolayPreamble:
    """64-chip binary Golay sequence plus its complementary pair.

    `values` is correlated against at the receiver; the pair sum of
    autocorrelations is an ideal delta, so `complement` supports a
    sidelobe-free detector variant.  power_boost is the linear power factor
    applied relative to the pilot section when the frame is assembled.
    """

    values: np.ndarray
    complement: np.ndarray
    power_boost: float = DEFAULT_POWER_BOOST


def golay_preamble(power_boost: float = DEFAULT_POWER_BOOST) -> GolayPreamble:
    ga, gb = _golay_pair(6)
    return GolayPreamble(values=ga.astype(np.complex128), complement=gb.astype(np.complex128), power_boost=power_boost)


def permutation_matrix(size: int, shift: int) -> np.ndarray:
    """Identity with columns cyclically shifted: column j maps to row (j + shift) % size.

    Applied to a vector, the entries rotate downward by `shift`:
    size 3, shift 1 sends (a, b, c) to (c, a, b).
    """
    p = np.zeros((size, size))
    cols = np.arange(size)
    p[(cols + shift) % size, cols] = 1.0
    return p


def _qpsk(rng: np.random.Generator, count: int) -> np.ndarray:
    return np.exp(1j * (np.pi / 4.0 + np.pi / 2.0 * rng.integers(0, 4, count)))


def design_precoder(
    frame_index: int, num_tx: int, num_tx_chains: int, zc_root: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, int]:
    """Analog precoder, spatial weights, and active-subarray index for one frame.

    The active subarray cycles round-robin over frames; it carries the
    length num_tx/num_tx_chains Zadoff-Chu sequence cyclically shifted by
    the frame index.  All other subarray weight vectors are zero.  Spatial
    weights are QPSK with total energy one.
    """
    if num_tx % num_tx_chains:
        raise ValueError("num_tx must be divisible by num_tx_chains")
    sub_len = num_tx // num_tx_chains
    j_star = frame_index % num_tx_chains
    shift = frame_index % num_tx_chains
    zc = zadoff_chu(sub_len, zc_root)
    f_sub = permutation_matrix(sub_len, shift) @ zc.values
    f_rf = np.zeros((num_tx, num_tx_chains), dtype=np.complex128)
    f_rf[j_star * sub_len : (j_star + 1) * sub_len, j_star] = f_sub
    q = _qpsk(rng, num_tx_chains) / np.sqrt(num_tx_chains)
    return f_rf, q, j_star


def design_combiner(
    frame_index: int, num_rx: int, num_rx_chains: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One-hot antenna selection per receive subarray, drawn uniformly per frame."""
    if num_rx % num_rx_chains:
        raise ValueError("num_rx must be divisible by num_rx_chains")
    sub_len = num_rx // num_rx_chains
    selected = rng.integers(0, sub_len, num_rx_chains)
    w_rf = np.zeros((num_rx, num_rx_chains), dtype=np.complex128)
    for i, p_i in enumerate(selected):
        w_rf[i * sub_len + p_i, i] = 1.0
    return w_rf, selected


def ofdm_modulate(pilots: np.ndarray, cp_len: int) -> np.ndarray:
    """One OFDM symbol: length-K inverse transform (1/K convention) with cyclic prefix.

    The useful part is (1/K) * sum_k pilots[k] * exp(j*2*pi*k*n/K); the
    prefix replicates the trailing cp_len samples.
    """
    pilots = np.asarray(pilots, dtype=np.complex128)
    useful = np.fft.ifft(pilots)
    return np.concatenate([useful[-cp_len:] if cp_len else useful[:0], useful])


@dataclass(frozen=True)
class FramePlan:
    """One training frame's spatial configuration and pilots."""

    precoder: np.ndarray  # (num_tx, num_tx_chains) analog, block-structured
    combiner: np.ndarray  # (num_rx, num_rx_chains) one-hot columns
    spatial_weights: np.ndarray  # (num_tx_chains,) QPSK / sqrt(num_tx_chains)
    active_subarray: int
    selected_antennas: np.ndarray  # (num_rx_chains,) per-subarray antenna index
    pilots: np.ndarray  # (num_symbols, num_subcarriers) unit-modulus


@dataclass(frozen=True)
class TrainingPlan:
    """Full training schedule: per-frame plans plus the shared preamble."""

    frames: tuple[FramePlan, ...]
    preamble: GolayPreamble
    num_subcarriers: int
    cp_len: int
    num_symbols: int
    seed: int

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def frame_len(self) -> int:
        return PREAMBLE_LEN + self.num_symbols * (self.num_subcarriers + self.cp_len)


def build_training_plan(
    num_tx: int,
    num_rx: int,
    num_tx_chains: int,
    num_rx_chains: int,
    num_subcarriers: int,
    cp_len: int,
    num_symbols: int,
    num_frames: int,
    seed: int,
    zc_root: int = 1,
    power_boost: float = DEFAULT_POWER_BOOST,
) -> TrainingPlan:
    """Deterministically build the training plan for `num_frames` frames."""
    root_ss = np.random.SeedSequence(seed)
    frames = []
    for m, child in enumerate(root_ss.spawn(num_frames)):
        rng = np.random.default_rng(child)
        f_rf, q, j_star = design_precoder(m, num_tx, num_tx_chains, zc_root, rng)
        w_rf, p_star = design_combiner(m, num_rx, num_rx_chains, rng)
        pilots = _qpsk(rng, num_symbols * num_subcarriers).reshape(num_symbols, num_subcarriers)
        frames.append(
            FramePlan(
                precoder=f_rf,
                combiner=w_rf,
                spatial_weights=q,
                active_subarray=j_star,
                selected_antennas=p_star,
                pilots=pilots,
            )
        )
    return TrainingPlan(
        frames=tuple(frames),
        preamble=golay_preamble(power_boost),
        num_subcarriers=num_subcarriers,
        cp_len=cp_len,
        num_symbols=num_symbols,
        seed=seed,
    )


def assemble_frame(plan: TrainingPlan, frame_index: int) -> np.ndarray:
    """Transmit sample stream for one frame: boosted preamble then OFDM symbols.

    The preamble amplitude is set so that its mean sample power is exactly
    power_boost times the mean sample power of the frame's OFDM section.
    """
    fp = plan.frames[frame_index]
    symbols = [ofdm_modulate(fp.pilots[t], plan.cp_len) for t in range(plan.num_symbols)]
    ofdm_section = np.concatenate(symbols) if symbols else np.zeros(0, dtype=np.complex128)
    if ofdm_section.size:
        pilot_power = float(np.mean(np.abs(ofdm_section) ** 2))
        scale = np.sqrt(plan.preamble.power_boost * pilot_power)
    else:
        scale = 1.0
    return np.concatenate([scale * plan.preamble.values, ofdm_section])


def save_plan(plan: TrainingPlan, path) -> None:
    """Serialize a plan so both link ends can rebuild it bit-exactly.

    Stores the frame count, per-frame active subarray, selected antennas and
    QPSK phases, the pilot seed, and the frame dimensions; pilots and the
    preamble are regenerated from those on load.
    """
    f0 = plan.frames[0]
    payload = {
        "format": "mmwsync-plan-v1",
        "num_frames": plan.num_frames,
        "num_tx": int(f0.precoder.shape[0]),
        "num_rx": int(f0.combiner.shape[0]),
        "num_tx_chains": int(f0.precoder.shape[1]),
        "num_rx_chains": int(f0.combiner.shape[1]),
        "num_subcarriers": plan.num_subcarriers,
        "cp_len": plan.cp_len,
        "num_symbols": plan.num_symbols,
        "seed": plan.seed,
        "power_boost": plan.preamble.power_boost,
        "active_subarray": [fp.active_subarray for fp in plan.frames],
        "selected_antennas": [fp.selected_antennas.tolist() for fp in plan.frames],
        "spatial_phases": [np.angle(fp.spatial_weights).tolist() for fp in plan.frames],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_plan(path) -> TrainingPlan:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "mmwsync-plan-v1":
        raise ValueError("not a training-plan file")
    plan = build_training_plan(
        num_tx=payload["num_tx"],
        num_rx=payload["num_rx"],
        num_tx_chains=payload["num_tx_chains"],
        num_rx_chains=payload["num_rx_chains"],
        num_subcarriers=payload["num_subcarriers"],
        cp_len=payload["cp_len"],
        num_symbols=payload["num_symbols"],
        num_frames=payload["num_frames"],
        seed=payload["seed"],
        power_boost=payload["power_boost"],
    )
    stored = [np.asarray(p) for p in payload["selected_antennas"]]
    rebuilt = [fp.selected_antennas for fp in plan.frames]
    if any(not np.array_equal(a, b) for a, b in zip(stored, rebuilt)):
        raise ValueError("plan file does not match its seed (selected antennas differ)")
    return plan
