"""Monte-Carlo harness: metrics and sweep loops.

Sweeps run over (SNR, PN level, receive-chain count) grids.  Trials use
common random numbers across grid points: trial t's channel, training
plan, impairment draws, and unit-variance noise come from seed streams
keyed only by (seed, trial), with the PN level entering as a pure scale
factor and the noise as a pure sigma multiplier, so metric trends across
the grid are not masked by independent sampling noise.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .channel import (
    ArrayGeometry,
    AngularDictionary,
    draw_cluster_params,
    frequency_response,
    generate_channel,
    make_dictionary,
    PulseShape,
)
from .config import Scenario, SweepConfig
from .impairments import draw_impairments
from .linksim import (
    beamformed_taps,
    rx_buffer_len,
    simulate_rx,
    whitening_from_combiner,
)
from .sparse import build_measurement, swomp
from .sync import SyncOptions, joint_sync
from .training import PREAMBLE_LEN, assemble_frame, build_training_plan

CSV_HEADER = "# mmwsync metrics schema v1"
CSV_COLUMNS = (
    "snr_db",
    "g_theta_dbc",
    "num_rx_chains",
    "trials",
    "trials_ok",
    "p_detect",
    "nmse_g_db",
    "nmse_h_db",
    "nmse_cfo_db",
    "se_bps_hz",
    "se_with_overhead",
    "se_ci",
    "nmse_h_ci_db",
)

NMSE_FLOOR_DB = -120.0


def nmse(estimate: np.ndarray, truth: np.ndarray, floor_db: float = NMSE_FLOOR_DB) -> float:
    """Normalized squared error ||est - truth||^2 / ||truth||^2 in dB.

    Arrays are flattened, so multi-subcarrier inputs aggregate energy over
    subcarriers before the dB conversion.  Exact matches report the floor.
    """
    est = np.asarray(estimate).reshape(-1)
    tru = np.asarray(truth).reshape(-1)
    denom = float(np.sum(np.abs(tru) ** 2))
    if denom == 0.0:
        raise ValueError("truth has zero norm")
    ratio = float(np.sum(np.abs(est - tru) ** 2)) / denom
    if ratio <= 10.0 ** (floor_db / 10.0):
        return floor_db
    return 10.0 * np.log10(ratio)


def detection_probability(estimates, truths) -> float:
    """Fraction of trials whose detected timing offset is exactly correct."""
    est = np.asarray(estimates)
    tru = np.asarray(truths)
    if est.size == 0:
        raise ValueError("need at least one trial")
    return float(np.mean(est == tru))


def spectral_efficiency(h_hat: np.ndarray, h_true: np.ndarray, snr_linear: float, num_streams: int) -> float:
    """Achievable rate with SVD beams from the estimate applied to the true channel.

    Per subcarrier, the top num_streams left/right singular vectors of the
    estimate form the combiner/precoder; the rate is
    log2 det(I + (snr/num_streams) * G^H G) with G the effective channel,
    averaged over subcarriers.
    """
    h_hat = np.asarray(h_hat)
    h_true = np.asarray(h_true)
    if num_streams > min(h_true.shape[1], h_true.shape[2]):
        raise ValueError("num_streams exceeds the channel rank budget")
    rates = []
    for k in range(h_true.shape[0]):
        u, _, vh = np.linalg.svd(h_hat[k])
        u_s = u[:, :num_streams]
        v_s = vh.conj().T[:, :num_streams]
        eff = u_s.conj().T @ h_true[k] @ v_s
        sv = np.linalg.svd(eff, compute_uv=False)
        rates.append(float(np.sum(np.log2(1.0 + (snr_linear / num_streams) * sv**2))))
    return float(np.mean(rates))


def overhead_factor(config: SweepConfig | Scenario, coherence_time_s: float) -> float:
    """Spectral-efficiency correction for training overhead: 1 - T_train/T_coherence."""
    scenario = config.scenario if isinstance(config, SweepConfig) else config
    t_train = scenario.training_time_s
    if coherence_time_s <= t_train:
        raise ValueError("coherence time must exceed the training duration")
    return 1.0 - t_train / coherence_time_s


@dataclass(frozen=True)
class MetricRow:
    """One sweep grid point's aggregated metrics."""

    snr_db: float
    g_theta_dbc: float
    num_rx_chains: int
    trials: int
    trials_ok: int
    p_detect: float
    nmse_g_db: float
    nmse_h_db: float
    nmse_cfo_db: float
    se_bps_hz: float
    se_with_overhead: float
    se_ci: float
    nmse_h_ci_db: float

    def as_csv(self) -> str:
        vals = (
            self.snr_db,
            self.g_theta_dbc,
            self.num_rx_chains,
            self.trials,
            self.trials_ok,
            self.p_detect,
            self.nmse_g_db,
            self.nmse_h_db,
            self.nmse_cfo_db,
            self.se_bps_hz,
            self.se_with_overhead,
            self.se_ci,
            self.nmse_h_ci_db,
        )
        out = []
        for v in vals:
            if isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            else:
                out.append(f"{float(v):.10g}")
        return ",".join(out)


@dataclass
class _TrialResult:
    detected: int = 0
    frames: int = 0
    cfo_sq_err: float = 0.0
    cfo_sq_truth: float = 0.0
    g_err: float = 0.0
    g_ref: float = 0.0
    h_nmse_lin: float = float("nan")
    se: float = float("nan")
    failed: bool = False


def _run_trial(
    cfg: SweepConfig,
    scenario: Scenario,
    dictionary: AngularDictionary,
    snr_db: float,
    g_theta: float,
    trial: int,
    stage: str,
) -> _TrialResult:
    sc = scenario
    res = _TrialResult()
    root = np.random.SeedSequence((cfg.seed, trial))
    chan_ss, imp_ss, noise_ss = root.spawn(3)
    chan_rng = np.random.default_rng(chan_ss)
    imp_rng = np.random.default_rng(imp_ss)
    noise_rng = np.random.default_rng(noise_ss)

    tx_geom = ArrayGeometry(sc.num_tx)
    rx_geom = ArrayGeometry(sc.num_rx)
    pulse = PulseShape(sampling_interval=sc.sampling_interval)
    params = draw_cluster_params(cfg.cluster, sc.num_taps, sc.sampling_interval, chan_rng)
    chan = generate_channel(params, rx_geom, tx_geom, pulse, sc.num_taps)
    h_true = frequency_response(chan, sc.num_subcarriers)

    plan = build_training_plan(
        num_tx=sc.num_tx,
        num_rx=sc.num_rx,
        num_tx_chains=sc.num_tx_chains,
        num_rx_chains=sc.num_rx_chains,
        num_subcarriers=sc.num_subcarriers,
        cp_len=sc.cp_len,
        num_symbols=sc.num_symbols,
        num_frames=sc.num_frames,
        seed=(cfg.seed, trial, sc.num_rx_chains),
        zc_root=sc.zc_root,
    )

    tx_streams = [assemble_frame(plan, m) for m in range(sc.num_frames)]
    bfs = []
    gains = []
    energies = []
    for m, fp in enumerate(plan.frames):
        whitener = whitening_from_combiner(fp.combiner)
        bf = beamformed_taps(chan, fp.precoder, fp.spatial_weights, fp.combiner, whitener, sc.num_subcarriers)
        bfs.append(bf)
        gains.append(np.sum(np.abs(bf.taps) ** 2) / sc.num_rx_chains)
        ofdm = tx_streams[m][PREAMBLE_LEN:]
        energies.append(float(np.mean(np.abs(ofdm) ** 2)))
    snr_lin = 10.0 ** (snr_db / 10.0)
    noise_var = float(np.mean([g * e for g, e in zip(gains, energies)])) / snr_lin

    buffer_len = rx_buffer_len(plan.frame_len, sc.num_taps, sc.timing_max, sc.guard_len)
    model = cfg.pn_model(g_theta)
    options = SyncOptions(
        num_alternations=cfg.num_alternations,
        pn_correction=cfg.pn_correction,
        detector_metric=cfg.detector_metric,
        known_noise_var=noise_var if cfg.genie_noise_var else None,
    )

    g_freqs = []
    meas_vars = []
    for m in range(sc.num_frames):
        imp = draw_impairments(
            buffer_len, sc.timing_max, sc.cfo_max_hz, sc.sampling_interval, model, imp_rng
        )
        noise_unit = (
            noise_rng.standard_normal((sc.num_rx_chains, buffer_len))
            + 1j * noise_rng.standard_normal((sc.num_rx_chains, buffer_len))
        ) / np.sqrt(2.0)
        frame = simulate_rx(
            tx_streams[m], bfs[m], imp, noise_var, noise_rng, buffer_len, snr_db, noise_unit
        )
        est = joint_sync(
            frame,
            plan,
            m,
            sc.num_taps,
            sc.timing_max,
            sc.cfo_max,
            model,
            sc.sampling_interval,
            options,
        )
        res.frames += 1
        res.detected += int(est.timing_offset == imp.timing_offset)
        res.cfo_sq_err += (est.cfo - imp.cfo) ** 2
        res.cfo_sq_truth += imp.cfo**2
        res.g_err += float(np.sum(np.abs(est.g_freq - bfs[m].freq) ** 2))
        res.g_ref += float(np.sum(np.abs(bfs[m].freq) ** 2))
        g_freqs.append(est.g_freq)
        meas_vars.append(est.noise_var * sc.num_taps / sc.num_symbols)

    if stage == "full":
        meas = build_measurement(plan, g_freqs, np.asarray(meas_vars))
        signal_scale = float(np.mean(np.abs(meas.measurements) ** 2))
        noise_floor = max(float(np.mean(meas_vars)), 1e-15 * max(signal_scale, 1.0))
        est_h = swomp(
            meas, dictionary, noise_floor,
            max_iters=cfg.swomp_max_iters, stop_scale=cfg.swomp_stop_scale,
        )
        res.h_nmse_lin = float(
            np.sum(np.abs(est_h.h_hat - h_true) ** 2) / np.sum(np.abs(h_true) ** 2)
        )
        res.se = spectral_efficiency(est_h.h_hat, h_true, snr_lin, sc.num_streams)
    return res


def _aggregate(
    cfg: SweepConfig,
    snr_db: float,
    g_theta: float,
    num_rx_chains: int,
    results: list[_TrialResult],
) -> MetricRow:
    ok = [r for r in results if not r.failed]
    frames = sum(r.frames for r in ok)
    p_detect = sum(r.detected for r in ok) / frames if frames else float("nan")
    g_ref = sum(r.g_ref for r in ok)
    nmse_g = 10.0 * np.log10(sum(r.g_err for r in ok) / g_ref) if g_ref > 0 else float("nan")
    cfo_truth = sum(r.cfo_sq_truth for r in ok)
    nmse_cfo = (
        10.0 * np.log10(sum(r.cfo_sq_err for r in ok) / cfo_truth) if cfo_truth > 0 else float("nan")
    )
    h_vals = np.array([r.h_nmse_lin for r in ok if np.isfinite(r.h_nmse_lin)])
    se_vals = np.array([r.se for r in ok if np.isfinite(r.se)])
    if h_vals.size:
        h_mean = float(np.mean(h_vals))
        nmse_h = 10.0 * np.log10(max(h_mean, 10.0 ** (NMSE_FLOOR_DB / 10.0)))
        hw = 1.96 * float(np.std(h_vals, ddof=1)) / np.sqrt(h_vals.size) if h_vals.size > 1 else 0.0
        nmse_h_ci = 10.0 * np.log10(1.0 + hw / h_mean) if h_mean > 0 else 0.0
    else:
        nmse_h, nmse_h_ci = float("nan"), float("nan")
    if se_vals.size:
        se = float(np.mean(se_vals))
        se_ci = 1.96 * float(np.std(se_vals, ddof=1)) / np.sqrt(se_vals.size) if se_vals.size > 1 else 0.0
        factor = (
            cfg.fixed_overhead_factor
            if cfg.fixed_overhead_factor is not None
            else overhead_factor(cfg, cfg.coherence_time_s)
        )
        se_oh = factor * se
    else:
        se, se_ci, se_oh = float("nan"), float("nan"), float("nan")
    return MetricRow(
        snr_db=snr_db,
        g_theta_dbc=g_theta,
        num_rx_chains=num_rx_chains,
        trials=len(results),
        trials_ok=len(ok),
        p_detect=p_detect,
        nmse_g_db=float(nmse_g),
        nmse_h_db=float(nmse_h),
        nmse_cfo_db=float(nmse_cfo),
        se_bps_hz=se,
        se_with_overhead=se_oh,
        se_ci=se_ci,
        nmse_h_ci_db=nmse_h_ci,
    )


def run_sweep(cfg: SweepConfig, stage: str = "full", threads: int = 1):
    """Yield one MetricRow per grid point, in deterministic grid order.

    Grid order is (snr, pn level, chain count) with the chain list defaulting
    to the scenario's value.  Per-trial failures are caught and counted in
    trials_ok; they never abort the sweep.  Output is a pure function of
    (cfg, stage), independent of the thread count.
    """
    chain_list = cfg.rx_chain_list or (cfg.scenario.num_rx_chains,)
    for snr_db in cfg.snr_db_list:
        for g_theta in cfg.g_theta_list:
            for l_r in chain_list:
                scenario = (
                    cfg.scenario
                    if l_r == cfg.scenario.num_rx_chains
                    else _with_chains(cfg.scenario, l_r)
                )
                dictionary = make_dictionary(
                    ArrayGeometry(scenario.num_tx),
                    ArrayGeometry(scenario.num_rx),
                    scenario.grid_tx,
                    scenario.grid_rx,
                )

                def one(trial: int) -> _TrialResult:
                    try:
                        return _run_trial(cfg, scenario, dictionary, snr_db, g_theta, trial, stage)
                    except Exception:
                        return _TrialResult(failed=True)

                if threads > 1:
                    # trial-level parallelism: keep BLAS single-threaded to
                    # avoid oversubscription; results are ordered by trial id
                    with threadpool_limits(limits=1):
                        with ThreadPoolExecutor(max_workers=threads) as pool:
                            results = list(pool.map(one, range(cfg.trials)))
                else:
                    results = [one(t) for t in range(cfg.trials)]
                yield _aggregate(cfg, snr_db, g_theta, l_r, results)


def _with_chains(scenario: Scenario, num_rx_chains: int) -> Scenario:
    from dataclasses import replace

    return replace(scenario, num_rx_chains=num_rx_chains)


def write_csv(rows, path, stage: str = "full") -> None:
    """Write metric rows with the versioned header; byte-stable for fixed inputs."""
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + f" stage={stage}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")
