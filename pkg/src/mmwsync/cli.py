"""Command-line entry points.

Subcommands:
  sweep         full pipeline Monte-Carlo sweep, metrics to CSV
  sync-only     timing/CFO/PN/beamformed-channel metrics only
  channel-gen   write channel realizations to the binary interchange format
  golden-check  create or verify a golden received-frame fixture
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .channel import ArrayGeometry, PulseShape, draw_cluster_params, generate_channel, save_channel
from .config import SweepConfig, load_config, preset
from .experiments import run_sweep, write_csv
from .impairments import draw_impairments
from .linksim import beamformed_taps, rx_buffer_len, simulate_rx, whitening_from_combiner
from .sync import joint_sync
from .training import assemble_frame, build_training_plan

GOLDEN_TOL = 1e-12


def _load_cfg(args) -> SweepConfig:
    cfg = preset(args.preset)
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, trials=args.trials)
    return cfg


def _cmd_sweep(args, stage: str) -> int:
    cfg = _load_cfg(args)
    rows = run_sweep(cfg, stage=stage, threads=args.threads)
    write_csv(rows, args.out, stage=stage)
    print(f"wrote {args.out}")
    return 0


def _cmd_channel_gen(args) -> int:
    cfg = _load_cfg(args)
    sc = cfg.scenario
    tx_geom, rx_geom = ArrayGeometry(sc.num_tx), ArrayGeometry(sc.num_rx)
    pulse = PulseShape(sampling_interval=sc.sampling_interval)
    for i in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, i)))
        params = draw_cluster_params(cfg.cluster, sc.num_taps, sc.sampling_interval, rng)
        chan = generate_channel(params, rx_geom, tx_geom, pulse, sc.num_taps)
        path = f"{args.out}_{i:04d}.mwch"
        save_channel(chan, path)
        print(f"wrote {path}")
    return 0


def _golden_arrays(cfg: SweepConfig) -> dict:
    """One deterministic frame plus its estimates, for regression checks."""
    sc = cfg.scenario
    root = np.random.SeedSequence((cfg.seed, 0))
    chan_ss, imp_ss, noise_ss = root.spawn(3)
    tx_geom, rx_geom = ArrayGeometry(sc.num_tx), ArrayGeometry(sc.num_rx)
    pulse = PulseShape(sampling_interval=sc.sampling_interval)
    params = draw_cluster_params(cfg.cluster, sc.num_taps, sc.sampling_interval, np.random.default_rng(chan_ss))
    chan = generate_channel(params, rx_geom, tx_geom, pulse, sc.num_taps)
    plan = build_training_plan(
        num_tx=sc.num_tx,
        num_rx=sc.num_rx,
        num_tx_chains=sc.num_tx_chains,
        num_rx_chains=sc.num_rx_chains,
        num_subcarriers=sc.num_subcarriers,
        cp_len=sc.cp_len,
        num_symbols=sc.num_symbols,
        num_frames=1,
        seed=(cfg.seed, 0, sc.num_rx_chains),
        zc_root=sc.zc_root,
    )
    fp = plan.frames[0]
    bf = beamformed_taps(
        chan, fp.precoder, fp.spatial_weights, fp.combiner, whitening_from_combiner(fp.combiner), sc.num_subcarriers
    )
    tx = assemble_frame(plan, 0)
    buffer_len = rx_buffer_len(plan.frame_len, sc.num_taps, sc.timing_max, sc.guard_len)
    snr_db = 10.0
    gain = float(np.sum(np.abs(bf.taps) ** 2)) / sc.num_rx_chains
    energy = float(np.mean(np.abs(tx[64:]) ** 2))
    noise_var = gain * energy / 10.0 ** (snr_db / 10.0)
    model = cfg.pn_model(cfg.g_theta_list[0])
    imp = draw_impairments(
        buffer_len, sc.timing_max, sc.cfo_max_hz, sc.sampling_interval, model, np.random.default_rng(imp_ss)
    )
    frame = simulate_rx(tx, bf, imp, noise_var, np.random.default_rng(noise_ss), buffer_len, snr_db)
    est = joint_sync(
        frame, plan, 0, sc.num_taps, sc.timing_max, sc.cfo_max, model, sc.sampling_interval
    )
    return {
        "samples": frame.samples,
        "timing_truth": imp.timing_offset,
        "cfo_truth": imp.cfo,
        "timing_est": est.timing_offset,
        "cfo_est": est.cfo,
        "g_freq": est.g_freq,
        "noise_var_est": est.noise_var,
        "seed": cfg.seed,
    }


def _cmd_golden(args) -> int:
    cfg = _load_cfg(args)
    arrays = _golden_arrays(cfg)
    if args.write:
        np.savez(args.path, **arrays)
        print(f"wrote golden fixture {args.path}")
        return 0
    stored = np.load(args.path)
    checks = {
        "samples": np.allclose(stored["samples"], arrays["samples"], rtol=0, atol=GOLDEN_TOL),
        "timing": int(stored["timing_est"]) == arrays["timing_est"],
        "cfo": abs(float(stored["cfo_est"]) - arrays["cfo_est"]) <= GOLDEN_TOL,
        "g_freq": np.allclose(stored["g_freq"], arrays["g_freq"], rtol=0, atol=1e-9),
    }
    for name, ok in checks.items():
        print(f"golden {name}: {'PASS' if ok else 'FAIL'}")
    return 0 if all(checks.values()) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmwsync", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--preset", default="desk", choices=("desk", "paper"))
        p.add_argument("--seed", type=int, default=None)
        if trials:
            p.add_argument("--trials", type=int, default=None)

    p_sweep = sub.add_parser("sweep", help="full estimation pipeline sweep")
    common(p_sweep)
    p_sweep.add_argument("--out", required=True, help="output CSV path")
    p_sweep.add_argument("--threads", type=int, default=1)

    p_sync = sub.add_parser("sync-only", help="synchronization metrics only")
    common(p_sync)
    p_sync.add_argument("--out", required=True)
    p_sync.add_argument("--threads", type=int, default=1)

    p_gen = sub.add_parser("channel-gen", help="generate channel realization files")
    common(p_gen, trials=False)
    p_gen.add_argument("--count", type=int, default=1)
    p_gen.add_argument("--out", required=True, help="output path prefix")

    p_gold = sub.add_parser("golden-check", help="create or verify a golden frame")
    common(p_gold, trials=False)
    p_gold.add_argument("--path", required=True)
    p_gold.add_argument("--write", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "sweep":
        return _cmd_sweep(args, "full")
    if args.command == "sync-only":
        return _cmd_sweep(args, "sync")
    if args.command == "channel-gen":
        return _cmd_channel_gen(args)
    if args.command == "golden-check":
        return _cmd_golden(args)
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
