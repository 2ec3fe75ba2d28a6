"""Clustered frequency-selective MIMO channel synthesis.

Generates delay-tap channel matrices from cluster/ray parameters, their
frequency responses, and the angular dictionaries used by the sparse
recovery stage.  Uniform linear arrays with configurable element spacing
at both link ends; raised-cosine pulse shaping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_CHANNEL_MAGIC = b"MWCH1\n"


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: element count and spacing in carrier wavelengths."""

    num_antennas: int
    element_spacing: float = 0.5

    def __post_init__(self) -> None:
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be positive")


def steering_vector(geometry: ArrayGeometry, angle: float) -> np.ndarray:
    """Unnormalized array response: entry n is exp(j*2*pi*spacing*n*sin(angle))."""
    n = np.arange(geometry.num_antennas)
    return np.exp(2j * np.pi * geometry.element_spacing * n * np.sin(angle))


@dataclass(frozen=True)
class PulseShape:
    """Raised-cosine pulse: rolloff in [0, 1], truncation span in taps, sample interval."""

    rolloff: float = 0.25
    span: int = 4
    sampling_interval: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError("rolloff must lie in [0, 1]")
        if self.span < 1:
            raise ValueError("span must be >= 1")
        if self.sampling_interval <= 0:
            raise ValueError("sampling_interval must be positive")


def pulse_eval(pulse: PulseShape, tau):
    """Raised-cosine value at delay tau (seconds).

    The removable singularity at |tau| = T/(2*rolloff) is evaluated by its
    limit.  p(0) = 1 and, for rolloff 0, p(k*T) = 0 at nonzero integer k.
    """
    t = np.asarray(tau, dtype=float) / pulse.sampling_interval
    beta = pulse.rolloff
    if beta == 0.0:
        out = np.sinc(t)
        return out if out.ndim else float(out)
    den = 1.0 - (2.0 * beta * t) ** 2
    near_pole = np.abs(den) < 1e-10
    safe_den = np.where(near_pole, 1.0, den)
    out = np.sinc(t) * np.cos(np.pi * beta * t) / safe_den
    limit = (np.pi / 4.0) * np.sinc(1.0 / (2.0 * beta))
    out = np.where(near_pole, limit, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ClusterParams:
    """Cluster/ray parameters behind one channel realization.

    Flat arrays hold one entry per ray; `rays_per_cluster` records how the
    rays group into clusters.  Delays are in seconds, angles in radians,
    pathloss is linear.
    """

    rays_per_cluster: tuple[int, ...]
    gains: np.ndarray
    delays: np.ndarray
    aoa: np.ndarray
    aod: np.ndarray
    pathloss: float = 1.0

    def __post_init__(self) -> None:
        total = int(sum(self.rays_per_cluster))
        for name in ("gains", "delays", "aoa", "aod"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (total,):
                raise ValueError(f"{name} must have one entry per ray ({total})")
            object.__setattr__(self, name, arr)
        if np.any(self.delays < 0):
            raise ValueError("ray delays must be nonnegative")
        if not np.all(np.isfinite(np.abs(self.gains))):
            raise ValueError("ray gains must be finite")
        if self.pathloss <= 0:
            raise ValueError("pathloss must be positive")

    @property
    def num_clusters(self) -> int:
        return len(self.rays_per_cluster)

    @property
    def total_rays(self) -> int:
        return int(sum(self.rays_per_cluster))


@dataclass(frozen=True)
class ChannelRealization:
    """Delay-tap channel: taps[d] is the num_rx x num_tx matrix at tap d."""

    taps: np.ndarray
    sampling_interval: float
    params: ClusterParams | None = None

    def __post_init__(self) -> None:
        taps = np.asarray(self.taps, dtype=np.complex128)
        if taps.ndim != 3:
            raise ValueError("taps must have shape (num_taps, num_rx, num_tx)")
        object.__setattr__(self, "taps", taps)

    @property
    def num_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def num_rx(self) -> int:
        return self.taps.shape[1]

    @property
    def num_tx(self) -> int:
        return self.taps.shape[2]


def generate_channel(
    params: ClusterParams,
    rx_geometry: ArrayGeometry,
    tx_geometry: ArrayGeometry,
    pulse: PulseShape,
    num_taps: int,
) -> ChannelRealization:
    """Sum ray contributions into delay-tap matrices.

    taps[d] = scale * sum_rays gain * p(d*T - delay) * a_rx(aoa) a_tx(aod)^H
    with scale = sqrt(num_rx*num_tx / (pathloss * total_rays)).  Pulse
    contributions beyond `pulse.span` taps from a ray delay are dropped.
    """
    ts = pulse.sampling_interval
    if np.any(params.delays >= num_taps * ts):
        raise ValueError("ray delays must be below num_taps * sampling_interval")
    n_r, n_t = rx_geometry.num_antennas, tx_geometry.num_antennas
    scale = np.sqrt(n_r * n_t / (params.pathloss * params.total_rays))

    a_rx = np.stack([steering_vector(rx_geometry, phi) for phi in params.aoa])
    a_tx = np.stack([steering_vector(tx_geometry, th) for th in params.aod])

    d_grid = np.arange(num_taps) * ts
    # (num_taps, total_rays) pulse weights, windowed to the pulse span
    offsets = d_grid[:, None] - params.delays[None, :]
    weights = pulse_eval(pulse, offsets)
    weights = np.where(np.abs(offsets) <= pulse.span * ts, weights, 0.0)
    coeff = weights * params.gains[None, :]

    taps = scale * np.einsum("dr,ri,rj->dij", coeff, a_rx, a_tx.conj())
    return ChannelRealization(taps=taps, sampling_interval=ts, params=params)


def frequency_response(chan: ChannelRealization, num_subcarriers: int) -> np.ndarray:
    """Per-subcarrier response H[k] = sum_d taps[d] * exp(-j*2*pi*k*d/K)."""
    if num_subcarriers < chan.num_taps:
        raise ValueError("num_subcarriers must be >= number of delay taps")
    return np.fft.fft(chan.taps, n=num_subcarriers, axis=0)


def taps_from_frequency(freq: np.ndarray, num_taps: int) -> np.ndarray:
    """Invert frequency_response back to `num_taps` delay-tap matrices."""
    full = np.fft.ifft(np.asarray(freq, dtype=np.complex128), axis=0)
    if num_taps > full.shape[0]:
        raise ValueError("num_taps exceeds the number of subcarriers")
    return full[:num_taps]


def build_dictionary(geometry: ArrayGeometry, grid_size: int) -> np.ndarray:
    """Steering-vector grid, uniform in the sine (spatial-frequency) domain over [-1, 1)."""
    if grid_size < geometry.num_antennas:
        raise ValueError("grid size must be >= number of antennas")
    sines = -1.0 + 2.0 * np.arange(grid_size) / grid_size
    n = np.arange(geometry.num_antennas)
    return np.exp(2j * np.pi * geometry.element_spacing * np.outer(n, sines))


def dictionary_angles(grid_size: int) -> np.ndarray:
    """Grid angles (radians) matching build_dictionary's sine-domain grid."""
    return np.arcsin(-1.0 + 2.0 * np.arange(grid_size) / grid_size)


@dataclass(frozen=True)
class AngularDictionary:
    """Transmit/receive steering grids plus the grid angles that generated them."""

    transmit_grid: np.ndarray
    receive_grid: np.ndarray
    transmit_angles: np.ndarray
    receive_angles: np.ndarray

    @property
    def grid_tx(self) -> int:
        return self.transmit_grid.shape[1]

    @property
    def grid_rx(self) -> int:
        return self.receive_grid.shape[1]


def make_dictionary(
    tx_geometry: ArrayGeometry,
    rx_geometry: ArrayGeometry,
    grid_tx: int,
    grid_rx: int,
) -> AngularDictionary:
    return AngularDictionary(
        transmit_grid=build_dictionary(tx_geometry, grid_tx),
        receive_grid=build_dictionary(rx_geometry, grid_rx),
        transmit_angles=dictionary_angles(grid_tx),
        receive_angles=dictionary_angles(grid_rx),
    )


@dataclass(frozen=True)
class ClusterModelConfig:
    """Knobs for the synthetic cluster generator.

    One dominant single-ray component sits at delay zero; its power is set
    against the diffuse clusters by `rician_db`.  Diffuse cluster delays are
    exponential (truncated to the usable delay window), intra-cluster angles
    get Laplacian spread, powers follow an exponential delay profile.
    """

    num_clusters: int = 4
    rays_per_cluster: int = 6
    angle_spread_deg: float = 5.0
    delay_scale: float = 2.0  # mean cluster delay, in sample intervals
    ray_delay_scale: float = 0.3  # mean intra-cluster delay offset, in sample intervals
    rician_db: float = 0.0
    pathloss: float = 1.0


def draw_cluster_params(
    config: ClusterModelConfig,
    num_taps: int,
    sampling_interval: float,
    rng: np.random.Generator | int,
) -> ClusterParams:
    """Draw random cluster/ray parameters for one channel realization."""
    rng = np.random.default_rng(rng)
    ts = sampling_interval
    max_delay = (num_taps - 1) * ts * 0.999

    def trunc_exp(scale: float, size: int) -> np.ndarray:
        # inverse-CDF sample of an exponential truncated to [0, max_delay]
        u = rng.uniform(0.0, 1.0, size)
        cap = 1.0 - np.exp(-max_delay / scale)
        return -scale * np.log1p(-u * cap)

    n_c = config.num_clusters
    r_c = config.rays_per_cluster
    spread = np.deg2rad(config.angle_spread_deg) / np.sqrt(2.0)  # Laplace scale from std

    cluster_delays = trunc_exp(config.delay_scale * ts, n_c)
    cluster_aoa = rng.uniform(0.0, 2.0 * np.pi, n_c)
    cluster_aod = rng.uniform(0.0, 2.0 * np.pi, n_c)
    powers = np.exp(-cluster_delays / (config.delay_scale * ts))
    powers *= n_c / powers.sum()

    gains, delays, aoa, aod = [], [], [], []
    for c in range(n_c):
        ray_off = trunc_exp(config.ray_delay_scale * ts, r_c)
        d = np.minimum(cluster_delays[c] + ray_off, max_delay)
        g = np.sqrt(powers[c] / (2.0 * r_c)) * (
            rng.standard_normal(r_c) + 1j * rng.standard_normal(r_c)
        )
        gains.append(g)
        delays.append(d)
        aoa.append(cluster_aoa[c] + rng.laplace(0.0, spread, r_c))
        aod.append(cluster_aod[c] + rng.laplace(0.0, spread, r_c))

    # dominant zero-delay component: fixed amplitude, uniform phase
    k_lin = 10.0 ** (config.rician_db / 10.0)
    diffuse_power = float(np.sum(powers))
    dom_gain = np.sqrt(k_lin * diffuse_power) * np.exp(2j * np.pi * rng.uniform())
    gains.append(np.array([dom_gain]))
    delays.append(np.array([0.0]))
    aoa.append(rng.uniform(0.0, 2.0 * np.pi, 1))
    aod.append(rng.uniform(0.0, 2.0 * np.pi, 1))

    return ClusterParams(
        rays_per_cluster=tuple([r_c] * n_c + [1]),
        gains=np.concatenate(gains),
        delays=np.concatenate(delays),
        aoa=np.mod(np.concatenate(aoa), 2.0 * np.pi),
        aod=np.mod(np.concatenate(aod), 2.0 * np.pi),
        pathloss=config.pathloss,
    )


def save_channel(chan: ChannelRealization, path) -> None:
    """Write a channel realization to the binary interchange format.

    Layout: magic "MWCH1\\n", then little-endian uint32 num_tx, num_rx,
    num_taps, float64 sampling_interval, then for each tap d = 0..D-1 the
    row-major num_rx x num_tx matrix as interleaved real/imag float64.
    """
    taps = chan.taps
    with open(path, "wb") as fh:
        fh.write(_CHANNEL_MAGIC)
        fh.write(struct.pack("<IIId", chan.num_tx, chan.num_rx, chan.num_taps, chan.sampling_interval))
        inter = np.empty(taps.size * 2, dtype="<f8")
        flat = taps.reshape(-1)
        inter[0::2] = flat.real
        inter[1::2] = flat.imag
        fh.write(inter.tobytes())


def load_channel(path) -> ChannelRealization:
    """Read a channel realization written by save_channel."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CHANNEL_MAGIC))
        if magic != _CHANNEL_MAGIC:
            raise ValueError("not a channel file (bad magic)")
        n_t, n_r, d, ts = struct.unpack("<IIId", fh.read(20))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != 2 * d * n_r * n_t:
        raise ValueError("channel file truncated")
    flat = raw[0::2] + 1j * raw[1::2]
    return ChannelRealization(taps=flat.reshape(d, n_r, n_t), sampling_interval=ts)
