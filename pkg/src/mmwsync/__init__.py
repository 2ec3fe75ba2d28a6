"""Link-level simulation of joint synchronization and compressive channel
estimation for frequency-selective hybrid-array MIMO-OFDM."""

from .channel import (
    AngularDictionary,
    ArrayGeometry,
    ChannelRealization,
    ClusterModelConfig,
    ClusterParams,
    PulseShape,
    build_dictionary,
    draw_cluster_params,
    frequency_response,
    generate_channel,
    load_channel,
    make_dictionary,
    pulse_eval,
    save_channel,
    steering_vector,
)
from .config import Scenario, SweepConfig, desk_preset, load_config, paper_preset, preset, save_config
from .experiments import (
    MetricRow,
    detection_probability,
    nmse,
    overhead_factor,
    run_sweep,
    spectral_efficiency,
    write_csv,
)
from .impairments import (
    ImpairmentRealization,
    PhaseNoiseModel,
    PnCovariance,
    draw_impairments,
    pn_autocorrelation,
    pn_covariance,
    pn_psd,
    sample_phase_noise,
)
from .linksim import (
    BeamformedChannel,
    ReceivedFrame,
    WhiteningFilter,
    beamformed_taps,
    noise_var_for_snr,
    simulate_rx,
    snr_definition,
    whitening_from_combiner,
)
from .sparse import MeasurementModel, SparseChannelEstimate, build_measurement, reconstruct, swomp
from .sync import (
    FrameLayout,
    StructuredTransfer,
    SyncEstimate,
    SyncOptions,
    build_transfer,
    crlb_beamformed,
    detect_timing,
    estimate_cfo,
    estimate_g,
    estimate_noise_variance,
    estimate_pn,
    joint_sync,
)
from .training import (
    GolayPreamble,
    TrainingPlan,
    ZCSequence,
    assemble_frame,
    build_training_plan,
    design_combiner,
    design_precoder,
    golay_preamble,
    load_plan,
    ofdm_modulate,
    permutation_matrix,
    save_plan,
    zadoff_chu,
)

__version__ = "0.1.0"
