"""Builders shared across test modules: small links, simple channels."""

import numpy as np

from mmwsync.channel import (
    ArrayGeometry,
    ClusterParams,
    PulseShape,
    dictionary_angles,
    generate_channel,
)
from mmwsync.linksim import beamformed_taps, rx_buffer_len, whitening_from_combiner
from mmwsync.training import assemble_frame, build_training_plan


def single_path_params(aoa: float, aod: float, delay: float = 0.0, gain=1.0) -> ClusterParams:
    return ClusterParams(
        rays_per_cluster=(1,),
        gains=np.array([gain], dtype=complex),
        delays=np.array([delay]),
        aoa=np.array([aoa]),
        aod=np.array([aod]),
    )


def on_grid_params(grid_tx: int, grid_rx: int, atoms, gains, delays) -> ClusterParams:
    """Rays whose angles sit exactly on the dictionary grids.

    atoms is a list of (receive-grid, transmit-grid) index pairs.
    """
    rx_angles = dictionary_angles(grid_rx)
    tx_angles = dictionary_angles(grid_tx)
    r_idx = np.array([a[0] for a in atoms])
    t_idx = np.array([a[1] for a in atoms])
    return ClusterParams(
        rays_per_cluster=(len(atoms),),
        gains=np.asarray(gains, dtype=complex),
        delays=np.asarray(delays, dtype=float),
        aoa=rx_angles[r_idx],
        aod=tx_angles[t_idx],
    )


def dominant_tap_params(rng: np.random.Generator, num_taps: int, ts: float, dominant_frac: float = 0.8,
                        weak_rays: int = 4) -> ClusterParams:
    """Random channel with a single dominant ray at delay zero.

    The zero-delay ray carries `dominant_frac` of the expected power; the
    rest spreads over `weak_rays` random rays at strictly positive delays.
    """
    weak_power = (1.0 - dominant_frac) / weak_rays
    gains = [np.sqrt(dominant_frac) * np.exp(2j * np.pi * rng.uniform())]
    delays = [0.0]
    for _ in range(weak_rays):
        gains.append(np.sqrt(weak_power / 2) * (rng.standard_normal() + 1j * rng.standard_normal()))
        delays.append(rng.uniform(0.8, num_taps - 1.2) * ts)
    angles = rng.uniform(0, 2 * np.pi, (2, weak_rays + 1))
    return ClusterParams(
        rays_per_cluster=(weak_rays + 1,),
        gains=np.array(gains),
        delays=np.array(delays),
        aoa=angles[0],
        aod=angles[1],
    )


class Link:
    """One configured link: channel, plan, beamformed channels, tx streams."""

    def __init__(self, scenario, params, plan_seed=0, num_frames=None):
        self.scenario = scenario
        sc = scenario
        self.tx_geom = ArrayGeometry(sc.num_tx)
        self.rx_geom = ArrayGeometry(sc.num_rx)
        self.pulse = PulseShape(sampling_interval=sc.sampling_interval)
        self.chan = generate_channel(params, self.rx_geom, self.tx_geom, self.pulse, sc.num_taps)
        self.plan = build_training_plan(
            num_tx=sc.num_tx,
            num_rx=sc.num_rx,
            num_tx_chains=sc.num_tx_chains,
            num_rx_chains=sc.num_rx_chains,
            num_subcarriers=sc.num_subcarriers,
            cp_len=sc.cp_len,
            num_symbols=sc.num_symbols,
            num_frames=num_frames if num_frames is not None else sc.num_frames,
            seed=plan_seed,
            zc_root=sc.zc_root,
        )
        self.buffer_len = rx_buffer_len(self.plan.frame_len, sc.num_taps, sc.timing_max, sc.guard_len)

    def frame_parts(self, m: int):
        fp = self.plan.frames[m]
        whitener = whitening_from_combiner(fp.combiner)
        bf = beamformed_taps(
            self.chan, fp.precoder, fp.spatial_weights, fp.combiner, whitener, self.scenario.num_subcarriers
        )
        tx = assemble_frame(self.plan, m)
        return fp, bf, tx

    def noise_var_at(self, bf, tx, snr_db: float) -> float:
        gain = float(np.sum(np.abs(bf.taps) ** 2)) / self.scenario.num_rx_chains
        energy = float(np.mean(np.abs(tx[64:]) ** 2))
        return gain * energy / 10.0 ** (snr_db / 10.0)
