"""Scenario and sweep configuration, presets, and the flat config-file format.

Config files are plain text, one `key = value` per line, `#` comments.
List-valued keys take comma-separated entries.  Every key matches a field
name below; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .channel import ClusterModelConfig
from .impairments import PhaseNoiseModel

REFERENCE_SAMPLING_INTERVAL = 42e-6 / 81920  # 81920 training samples in 42 us


@dataclass(frozen=True)
class Scenario:
    """Link dimensions and rates for one simulation setup."""

    num_tx: int = 32
    num_rx: int = 16
    num_tx_chains: int = 4
    num_rx_chains: int = 4
    num_subcarriers: int = 64
    cp_len: int = 16
    num_symbols: int = 4
    num_frames: int = 16
    num_taps: int = 8
    grid_tx: int = 64
    grid_rx: int = 32
    num_streams: int = 1
    sampling_interval: float = REFERENCE_SAMPLING_INTERVAL
    cfo_max_hz: float = 400e3
    timing_max: int = 15
    zc_root: int = 1
    guard_len: int = 32

    def __post_init__(self) -> None:
        if self.num_tx % self.num_tx_chains or self.num_rx % self.num_rx_chains:
            raise ValueError("antenna counts must divide evenly into subarrays")
        if self.grid_tx < self.num_tx or self.grid_rx < self.num_rx:
            raise ValueError("dictionary grids must be at least the antenna counts")
        if self.timing_max < 0 or self.num_taps < 1:
            raise ValueError("timing_max must be >= 0 and num_taps >= 1")

    @property
    def frame_len(self) -> int:
        from .training import PREAMBLE_LEN

        return PREAMBLE_LEN + self.num_symbols * (self.num_subcarriers + self.cp_len)

    @property
    def cfo_max(self) -> float:
        """Maximum CFO normalized to cycles per sample."""
        return self.cfo_max_hz * self.sampling_interval

    @property
    def training_time_s(self) -> float:
        return self.sampling_interval * (self.num_subcarriers + self.cp_len) * self.num_symbols * self.num_frames


@dataclass(frozen=True)
class SweepConfig:
    """Monte-Carlo sweep: scenario, channel statistics, PN model, and grids."""

    scenario: Scenario = field(default_factory=Scenario)
    cluster: ClusterModelConfig = field(default_factory=ClusterModelConfig)
    pn_f_zero_hz: float = 100e6
    pn_f_pole_hz: float = 1e6
    pn_enabled: bool = True
    snr_db_list: tuple[float, ...] = (-10.0, 0.0)
    g_theta_list: tuple[float, ...] = (-90.0,)
    rx_chain_list: tuple[int, ...] = ()  # empty: use scenario.num_rx_chains
    trials: int = 100
    seed: int = 0
    num_alternations: int = 2
    pn_correction: bool = True
    detector_metric: str = "matched"
    genie_noise_var: bool = False
    swomp_max_iters: int = 16
    swomp_stop_scale: float = 1.0
    coherence_time_s: float = 2.5e-3
    fixed_overhead_factor: float | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def pn_model(self, g_theta_dbc: float) -> PhaseNoiseModel | None:
        if not self.pn_enabled:
            return None
        return PhaseNoiseModel(g_theta_dbc=g_theta_dbc, f_zero_hz=self.pn_f_zero_hz, f_pole_hz=self.pn_f_pole_hz)


def desk_preset() -> SweepConfig:
    """Small configuration sized so a full sweep runs in minutes."""
    return SweepConfig()


def paper_preset() -> SweepConfig:
    """Full-scale configuration (large arrays, 256 subcarriers, 32 frames)."""
    return SweepConfig(
        scenario=Scenario(
            num_tx=128,
            num_rx=64,
            num_tx_chains=8,
            num_rx_chains=4,
            num_subcarriers=256,
            cp_len=64,
            num_symbols=8,
            num_frames=32,
            num_taps=64,
            grid_tx=256,
            grid_rx=128,
            timing_max=63,
        )
    )


_PRESETS = {"desk": desk_preset, "paper": paper_preset}


def preset(name: str) -> SweepConfig:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}") from None


_SCENARIO_FIELDS = {f.name: f.type for f in fields(Scenario)}
_CLUSTER_FIELDS = {f.name: f.type for f in fields(ClusterModelConfig)}
_TOP_FIELDS = {
    f.name: f.type for f in fields(SweepConfig) if f.name not in ("scenario", "cluster")
}
_LIST_KEYS = {"snr_db_list", "g_theta_list", "rx_chain_list"}
_BOOL_KEYS = {"pn_enabled", "pn_correction", "genie_noise_var"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _LIST_KEYS:
        if not raw:
            return ()
        items = [x.strip() for x in raw.split(",")]
        cast = int if key == "rx_chain_list" else float
        return tuple(cast(x) for x in items)
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key} must be a boolean, got {raw!r}")
    if key == "fixed_overhead_factor":
        return None if raw.lower() in ("", "none") else float(raw)
    if key == "detector_metric":
        return raw
    int_keys = {
        k for k, t in {**_SCENARIO_FIELDS, **_CLUSTER_FIELDS, **_TOP_FIELDS}.items() if t == "int"
    }
    return int(raw) if key in int_keys else float(raw)


def load_config(path, base: SweepConfig | None = None) -> SweepConfig:
    """Read a flat key = value config file on top of a base (default: desk preset)."""
    cfg = base if base is not None else desk_preset()
    scenario_kw: dict = {}
    cluster_kw: dict = {}
    top_kw: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key in _SCENARIO_FIELDS:
                scenario_kw[key] = _parse_value(key, raw)
            elif key in _CLUSTER_FIELDS:
                cluster_kw[key] = _parse_value(key, raw)
            elif key in _TOP_FIELDS:
                top_kw[key] = _parse_value(key, raw)
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    scenario = replace(cfg.scenario, **scenario_kw) if scenario_kw else cfg.scenario
    cluster = replace(cfg.cluster, **cluster_kw) if cluster_kw else cfg.cluster
    return replace(cfg, scenario=scenario, cluster=cluster, **top_kw)


def save_config(cfg: SweepConfig, path) -> None:
    """Write every key so the file round-trips through load_config."""

    def fmt(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, tuple):
            return ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
        if value is None:
            return "none"
        if isinstance(value, float):
            return f"{value!r}"
        return str(value)

    with open(path, "w") as fh:
        fh.write("# mmwsync sweep configuration\n")
        for name in _SCENARIO_FIELDS:
            fh.write(f"{name} = {fmt(getattr(cfg.scenario, name))}\n")
        for name in _CLUSTER_FIELDS:
            fh.write(f"{name} = {fmt(getattr(cfg.cluster, name))}\n")
        for name in _TOP_FIELDS:
            fh.write(f"{name} = {fmt(getattr(cfg, name))}\n")
