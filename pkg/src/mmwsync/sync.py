"""Frame synchronization and beamformed-channel estimation.

Per-frame pipeline: preamble correlation for the integer timing offset,
then alternating CFO / phase-noise estimation on the OFDM section, then a
scaled-adjoint solve for the per-chain beamformed channel taps and a
residual-based noise-variance estimate.

The OFDM section admits an exact linear model in the delay taps: with the
1/K inverse-transform convention at the transmitter, the useful samples of
symbol t on chain i are

    y_t = phi_t * pn_t * ramp * idft(pilots_t * dft(g_i, K))

where phi_t is the per-symbol CFO phasor, ramp the within-symbol CFO
phasor, and pn_t the phase-noise phasors.  Because every factor is a
unit-modulus diagonal or a unitary transform, the stacked operator A
satisfies A^H A = n_symbols * pilot_energy * I for unit-modulus pilots, so
the scaled adjoint is the exact least-squares inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .impairments import RIDGE_SCALE, PhaseNoiseModel, pn_covariance_at
from .linksim import ReceivedFrame
from .training import PREAMBLE_LEN, TrainingPlan

PILOT_ENERGY = 1.0  # unit-modulus pilots: S_t^H S_t = I


@dataclass(frozen=True)
class FrameLayout:
    """Index bookkeeping for one received frame."""

    num_subcarriers: int
    cp_len: int
    num_symbols: int
    num_taps: int
    preamble_len: int
    timing_offset: int

    @property
    def useful_count(self) -> int:
        return self.num_symbols * self.num_subcarriers

    def symbol_starts(self) -> np.ndarray:
        """Absolute buffer index of each symbol's useful part."""
        t = np.arange(self.num_symbols)
        return self.timing_offset + self.preamble_len + self.cp_len + t * (self.num_subcarriers + self.cp_len)

    def sample_indices(self) -> np.ndarray:
        """Absolute buffer indices of all useful samples, symbol-major."""
        return (self.symbol_starts()[:, None] + np.arange(self.num_subcarriers)[None, :]).reshape(-1)


def extract_useful(samples: np.ndarray, layout: FrameLayout) -> np.ndarray:
    """Pull the useful (post-CP) samples of every OFDM symbol: (chains, useful_count)."""
    idx = layout.sample_indices()
    if idx[-1] >= samples.shape[-1]:
        raise ValueError("receive buffer too short for this layout")
    return samples[..., idx]


@dataclass(frozen=True)
class StructuredTransfer:
    """The sample-domain transfer operator from delay taps to useful samples.

    Composed of per-symbol CFO phasors, per-sample phase-noise phasors, the
    within-symbol CFO ramp, diagonal pilots, and the unitary transform pair;
    `dense()` materializes it for small problems and oracles.
    """

    layout: FrameLayout
    pilots: np.ndarray  # (num_symbols, num_subcarriers)
    cfo: float
    pn: np.ndarray | None  # useful-sample phase noise, or None for zero

    def __post_init__(self) -> None:
        lay = self.layout
        if self.pilots.shape != (lay.num_symbols, lay.num_subcarriers):
            raise ValueError("pilots shape does not match the layout")
        if self.pn is not None and np.asarray(self.pn).shape != (lay.useful_count,):
            raise ValueError("phase-noise vector must cover the useful samples")

    def symbol_phasors(self) -> np.ndarray:
        return np.exp(2j * np.pi * self.cfo * self.layout.symbol_starts())

    def ramp(self) -> np.ndarray:
        return np.exp(2j * np.pi * self.cfo * np.arange(self.layout.num_subcarriers))

    def pn_phasors(self) -> np.ndarray:
        lay = self.layout
        if self.pn is None:
            return np.ones((lay.num_symbols, lay.num_subcarriers), dtype=np.complex128)
        return np.exp(1j * np.asarray(self.pn)).reshape(lay.num_symbols, lay.num_subcarriers)

    def _phases(self) -> np.ndarray:
        """(num_symbols, num_subcarriers) product of all diagonal phasors."""
        return self.symbol_phasors()[:, None] * self.ramp()[None, :] * self.pn_phasors()

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Map delay taps (num_taps,) or (num_taps, n) to useful samples."""
        lay = self.layout
        g = np.asarray(g, dtype=np.complex128)
        squeeze = g.ndim == 1
        g2 = g[:, None] if squeeze else g
        spec = np.fft.fft(g2, n=lay.num_subcarriers, axis=0)  # (K, n)
        modulated = self.pilots[:, :, None] * spec[None, :, :]  # (T, K, n)
        time = np.fft.ifft(modulated, axis=1)
        out = (self._phases()[:, :, None] * time).reshape(lay.useful_count, -1)
        return out[:, 0] if squeeze else out

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """Map useful samples (useful_count,) or (useful_count, n) back to taps."""
        lay = self.layout
        y = np.asarray(y, dtype=np.complex128)
        squeeze = y.ndim == 1
        y2 = y[:, None] if squeeze else y
        w = np.conj(self._phases())[:, :, None] * y2.reshape(lay.num_symbols, lay.num_subcarriers, -1)
        spec = np.conj(self.pilots)[:, :, None] * np.fft.fft(w, axis=1)
        taps = np.fft.ifft(spec, axis=1)[:, : lay.num_taps, :].sum(axis=0)
        return taps[:, 0] if squeeze else taps

    def dense(self) -> np.ndarray:
        """(useful_count, num_taps) matrix form; all diagonal factors unit-modulus."""
        return self.apply(np.eye(self.layout.num_taps, dtype=np.complex128))

    def gram(self) -> np.ndarray:
        a = self.dense()
        return a.conj().T @ a


def build_transfer(
    layout: FrameLayout, pilots: np.ndarray, cfo: float, pn: np.ndarray | None
) -> StructuredTransfer:
    return StructuredTransfer(layout=layout, pilots=np.asarray(pilots, dtype=np.complex128), cfo=float(cfo), pn=pn)


def detect_timing(
    samples: np.ndarray, preamble: np.ndarray, window: int, metric: str = "matched"
) -> int:
    """Integer timing offset from preamble correlation over lags 0..window.

    "matched" scores each lag by the coherent correlation magnitude squared,
    summed across chains; "literal" scores by the sliding sum of per-sample
    product magnitudes (envelope-only, kept for ablations).
    """
    rx = np.atleast_2d(np.asarray(samples))
    p = np.asarray(preamble, dtype=np.complex128)
    if window + p.size > rx.shape[1]:
        raise ValueError("search window exceeds the frame bounds")
    scores = np.zeros(window + 1)
    for row in rx:
        if metric == "matched":
            corr = np.correlate(row, p, mode="valid")[: window + 1]
            scores += np.abs(corr) ** 2
        elif metric == "literal":
            corr = np.correlate(np.abs(row) ** 2, np.abs(p) ** 2, mode="valid")[: window + 1]
            scores += corr
        else:
            raise ValueError(f"unknown detector metric {metric!r}")
    return int(np.argmax(scores))


def estimate_g(y: np.ndarray, transfer: StructuredTransfer) -> np.ndarray:
    """Per-chain beamformed delay taps via the scaled adjoint.

    Exact least squares for unit-modulus pilots: the operator's Gram matrix
    is num_symbols * PILOT_ENERGY * I regardless of the phasor values.
    """
    y2 = np.atleast_2d(np.asarray(y, dtype=np.complex128))  # (chains, useful)
    scale = transfer.layout.num_symbols * PILOT_ENERGY
    return transfer.apply_adjoint(y2.T) / scale  # (num_taps, chains)


def taps_to_freq(g_taps: np.ndarray, num_subcarriers: int) -> np.ndarray:
    """Per-subcarrier beamformed channel: freq[k] = sum_d g[d] exp(-j*2*pi*k*d/K)."""
    return np.fft.fft(g_taps, n=num_subcarriers, axis=0)


def estimate_noise_variance(y: np.ndarray, transfer: StructuredTransfer) -> float:
    """Residual-projection estimate, unbiased under the linear model.

    sigma2 = sum_i ||y_i - proj(y_i)||^2 / (chains * (useful_count - num_taps)).
    """
    lay = transfer.layout
    if lay.useful_count <= lay.num_taps:
        raise ValueError("need more useful samples than delay taps")
    y2 = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    scale = lay.num_symbols * PILOT_ENERGY
    proj = transfer.apply(transfer.apply_adjoint(y2.T) / scale)
    resid = y2.T - proj
    dof = y2.shape[0] * (lay.useful_count - lay.num_taps)
    return float(np.sum(np.abs(resid) ** 2) / dof)


def _correlator_matrices(y: np.ndarray, c_dense: np.ndarray) -> np.ndarray:
    """Stack C^H Y_i over chains: (chains*num_taps, useful_count)."""
    y2 = np.atleast_2d(y)
    blocks = [c_dense.conj().T * row[None, :] for row in y2]
    return np.concatenate(blocks, axis=0)


def estimate_pn(
    y: np.ndarray,
    c_dense: np.ndarray,
    prior_factor: np.ndarray,
    noise_var: float,
    num_symbols: int,
    dense_limit: int = 1024,
    cg_tol: float = 1e-8,
) -> np.ndarray:
    """MAP estimate of the useful-sample phase-noise vector (small-angle model).

    Linearizing exp(j*theta) ~ 1 + j*theta in the profiled likelihood gives a
    regularized symmetric positive-definite system in theta,

        (s*diag(w) - Re{Z} + (noise_var*s/2) * Cprior^-1) theta = -Im{Z} 1,

    with s = num_symbols * PILOT_ENERGY, w the per-sample received power
    summed over chains, and Z = sum_i Y_i^H C C^H Y_i built from the
    CFO-only transfer matrix C.  The solve runs in the prior-whitened
    coordinates (Cprior = L L^T), where the system is `L^T (.) L + ridge*I`
    and well conditioned; a dense factorization is used up to `dense_limit`
    unknowns and a conjugate-gradient operator form above that.

    The likelihood is exactly flat along a frame-wide constant phase (it
    trades against the channel estimate's phase), so the estimate is
    returned in the zero-mean gauge: the constant component is removed and
    lands in the beamformed-channel estimate instead.
    """
    y2 = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    n = y2.shape[1]
    s = num_symbols * PILOT_ENERGY
    w = np.sum(np.abs(y2) ** 2, axis=0)
    t_mat = _correlator_matrices(y2, c_dense)

    z_one = t_mat.conj().T @ (t_mat @ np.ones(n))
    rhs = -np.imag(z_one)
    ridge = 0.5 * noise_var * s
    if ridge <= 0:
        raise ValueError("noise_var must be positive (use a small floor when noiseless)")

    lfac = prior_factor
    if n <= dense_limit:
        re_z = np.real(t_mat.conj().T @ t_mat)
        core = lfac.T @ ((s * np.diag(w) - re_z) @ lfac)
        system = core + ridge * np.eye(n)
        try:
            cho = scipy.linalg.cho_factor(system, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("phase-noise system is not positive definite") from exc
        phi = scipy.linalg.cho_solve(cho, lfac.T @ rhs)
        theta = lfac @ phi
        return theta - np.mean(theta)

    def matvec(x: np.ndarray) -> np.ndarray:
        v = lfac @ x
        zv = np.real(t_mat.conj().T @ (t_mat @ v))
        return lfac.T @ (s * w * v - zv) + ridge * x

    op = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
    phi, info = scipy.sparse.linalg.cg(op, lfac.T @ rhs, rtol=cg_tol, atol=0.0, maxiter=4 * n)
    if info != 0:
        raise ValueError(f"phase-noise CG solve did not converge (info={info})")
    theta = lfac @ phi
    return theta - np.mean(theta)


def _cfo_objective_batch(
    y2: np.ndarray, layout: FrameLayout, pilots: np.ndarray, cfos: np.ndarray
) -> np.ndarray:
    """Objective values for a batch of CFO candidates; y2 is (chains, useful)."""
    lay = layout
    t_, k_ = lay.num_symbols, lay.num_subcarriers
    w = y2.T.reshape(t_, k_, -1)  # (T, K, chains)
    starts = lay.symbol_starts()
    # conj of the combined per-sample CFO phasor, per candidate
    phases = np.exp(
        -2j * np.pi * cfos[:, None, None] * (starts[None, :, None] + np.arange(k_)[None, None, :])
    )  # (G, T, K)
    derot = phases[:, :, :, None] * w[None, :, :, :]  # (G, T, K, chains)
    spec = np.conj(pilots)[None, :, :, None] * np.fft.fft(derot, axis=2)
    taps = np.fft.ifft(spec, axis=2)[:, :, : lay.num_taps, :].sum(axis=1)  # (G, D, chains)
    return np.sum(np.abs(taps) ** 2, axis=(1, 2))


def cfo_objective(
    y: np.ndarray, layout: FrameLayout, pilots: np.ndarray, cfo: float, pn_hat: np.ndarray | None
) -> float:
    """Explained-energy objective maximized by the CFO estimate.

    sum_i ||C(cfo)^H (y_i o conj(1 + j*pn_hat))||^2; invariant to a common
    phase rotation of the received samples.
    """
    y2 = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    if pn_hat is not None:
        y2 = y2 * (1.0 - 1j * np.asarray(pn_hat))[None, :]
    return float(_cfo_objective_batch(y2, layout, pilots, np.array([cfo]))[0])


def estimate_cfo(
    y: np.ndarray,
    layout: FrameLayout,
    pilots: np.ndarray,
    grid: np.ndarray,
    pn_hat: np.ndarray | None = None,
    refine_tol: float = 1e-7,
) -> float:
    """Coarse grid argmax of the CFO objective plus golden-section refinement.

    The returned value is the best evaluated point, so an exact-grid optimum
    is returned exactly.  Deterministic.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("CFO grid is empty")
    if np.any(np.abs(grid) >= 0.5):
        raise ValueError("CFO grid must lie within (-0.5, 0.5) cycles/sample")

    y2 = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    if pn_hat is not None:
        y2 = y2 * (1.0 - 1j * np.asarray(pn_hat))[None, :]

    def obj(x: float) -> float:
        return float(_cfo_objective_batch(y2, layout, pilots, np.array([x]))[0])

    values = _cfo_objective_batch(y2, layout, pilots, grid)
    best_idx = int(np.argmax(values))
    best_x, best_v = float(grid[best_idx]), float(values[best_idx])
    if grid.size == 1:
        return best_x

    spacing = float(np.max(np.diff(grid)))
    lo = max(best_x - spacing, float(grid[0]))
    hi = min(best_x + spacing, float(grid[-1]))

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > refine_tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = obj(d)
    for x, v in ((c, fc), (d, fd)):
        if v > best_v:
            best_x, best_v = float(x), float(v)
    return best_x


def crlb_beamformed(gram: np.ndarray, noise_var: float, num_subcarriers: int, num_chains: int) -> np.ndarray:
    """Estimation-covariance floor for the per-subcarrier beamformed channel.

    Returns (noise_var / K) * I_chains kron (F1 gram^-1 F1^H) with F1 the
    first num_taps columns of the unitary K-point transform; the bound is
    stated in the unitary-scaled subcarrier basis (natural per-subcarrier
    values are K times larger in amplitude).
    """
    gram = np.asarray(gram, dtype=np.complex128)
    d = gram.shape[0]
    k_idx, d_idx = np.arange(num_subcarriers)[:, None], np.arange(d)[None, :]
    f1 = np.exp(-2j * np.pi * k_idx * d_idx / num_subcarriers) / np.sqrt(num_subcarriers)
    try:
        inv_f = np.linalg.solve(gram, f1.conj().T)
    except np.linalg.LinAlgError as exc:
        raise ValueError("transfer Gram matrix is singular") from exc
    block = (noise_var / num_subcarriers) * (f1 @ inv_f)
    return np.kron(np.eye(num_chains), block)


@lru_cache(maxsize=8)
def _prior_factor_cached(
    g_theta_dbc: float,
    f_zero_hz: float,
    f_pole_hz: float,
    num_subcarriers: int,
    cp_len: int,
    num_symbols: int,
    preamble_len: int,
    sampling_interval: float,
) -> np.ndarray:
    """Cholesky factor of the PN prior at the useful-sample lattice positions."""
    model = PhaseNoiseModel(g_theta_dbc, f_zero_hz, f_pole_hz)
    layout = FrameLayout(num_subcarriers, cp_len, num_symbols, 1, preamble_len, 0)
    cov = pn_covariance_at(model, layout.sample_indices(), sampling_interval)
    ridge = RIDGE_SCALE * float(cov[0, 0])
    return np.linalg.cholesky(cov + ridge * np.eye(cov.shape[0]))


@dataclass(frozen=True)
class SyncOptions:
    """Estimator configuration; defaults follow the standard pipeline."""

    num_alternations: int = 2
    cfo_grid_points: int = 129
    cfo_refine_tol: float = 1e-7
    pn_correction: bool = True
    detector_metric: str = "matched"
    known_timing: int | None = None
    known_noise_var: float | None = None
    pn_dense_limit: int = 1024


@dataclass(frozen=True)
class SyncEstimate:
    """Joint synchronization output for one frame."""

    timing_offset: int
    cfo: float
    phase_noise: np.ndarray  # (useful_count,)
    g_taps: np.ndarray  # (num_taps, chains)
    g_freq: np.ndarray  # (num_subcarriers, chains)
    noise_var: float
    iterations: int


ESTIMATE_CSV_HEADER = (
    "trial,snr_db,g_theta_dbc,n0_true,n0_est,cfo_true,cfo_est,pn_nmse_db,g_nmse_db,noise_var_est"
)


def estimate_csv_row(
    trial: int,
    snr_db: float,
    g_theta_dbc: float,
    truth: "object",
    estimate: SyncEstimate,
    g_true_freq: np.ndarray,
    pn_true: np.ndarray | None = None,
) -> str:
    """One per-frame record for estimator regression logs.

    `truth` is the frame's impairment record; `pn_true` optionally holds the
    true phase noise at the useful samples so a PN NMSE can be reported.
    """
    g_nmse = np.sum(np.abs(estimate.g_freq - g_true_freq) ** 2) / np.sum(np.abs(g_true_freq) ** 2)
    if pn_true is not None and np.any(pn_true):
        pn_nmse = 10 * np.log10(np.sum((estimate.phase_noise - pn_true) ** 2) / np.sum(pn_true**2))
    else:
        pn_nmse = float("nan")
    fields = (
        str(trial),
        f"{snr_db:.10g}",
        f"{g_theta_dbc:.10g}",
        str(truth.timing_offset),
        str(estimate.timing_offset),
        f"{truth.cfo:.10g}",
        f"{estimate.cfo:.10g}",
        f"{pn_nmse:.10g}",
        f"{10 * np.log10(g_nmse):.10g}" if g_nmse > 0 else "-inf",
        f"{estimate.noise_var:.10g}",
    )
    return ",".join(fields)


def bootstrap_noise_var(frame: ReceivedFrame, frame_len: int, num_taps: int, timing_max: int) -> float | None:
    """Noise power from the trailing guard samples, which carry no signal."""
    tail_start = timing_max + frame_len + num_taps - 1
    tail = frame.samples[:, tail_start:]
    if tail.size < 8:
        return None
    return float(np.mean(np.abs(tail) ** 2))


def joint_sync(
    frame: ReceivedFrame,
    plan: TrainingPlan,
    frame_index: int,
    num_taps: int,
    timing_max: int,
    cfo_max: float,
    pn_model: PhaseNoiseModel | None,
    sampling_interval: float,
    options: SyncOptions = SyncOptions(),
) -> SyncEstimate:
    """Run the full per-frame pipeline on one received frame.

    Timing detection runs once; CFO and phase noise then alternate
    (CFO first, phase noise linearized around zero each pass), and the
    beamformed channel and noise variance are estimated last.  The noise
    variance used to regularize the phase-noise prior is bootstrapped from
    the trailing guard samples unless a genie value is supplied.
    """
    fp = plan.frames[frame_index]
    pilots = fp.pilots
    n0_hat = (
        options.known_timing
        if options.known_timing is not None
        else detect_timing(frame.samples, plan.preamble.values, timing_max, options.detector_metric)
    )
    layout = FrameLayout(
        num_subcarriers=plan.num_subcarriers,
        cp_len=plan.cp_len,
        num_symbols=plan.num_symbols,
        num_taps=num_taps,
        preamble_len=PREAMBLE_LEN,
        timing_offset=n0_hat,
    )
    y = extract_useful(frame.samples, layout)

    if cfo_max > 0:
        grid = np.linspace(-cfo_max, cfo_max, options.cfo_grid_points)
    else:
        grid = np.array([0.0])
    cfo_hat = estimate_cfo(y, layout, pilots, grid, None, options.cfo_refine_tol)
    pn_hat = np.zeros(layout.useful_count)
    iterations = 1

    use_pn = options.pn_correction and pn_model is not None
    if use_pn:
        noise_var = options.known_noise_var
        if noise_var is None:
            noise_var = bootstrap_noise_var(frame, plan.frame_len, num_taps, timing_max)
        if noise_var is None:
            noise_var = estimate_noise_variance(y, build_transfer(layout, pilots, cfo_hat, None))
        noise_var = max(float(noise_var), 1e-12 * float(np.mean(np.abs(y) ** 2)))
        prior_factor = _prior_factor_cached(
            pn_model.g_theta_dbc,
            pn_model.f_zero_hz,
            pn_model.f_pole_hz,
            plan.num_subcarriers,
            plan.cp_len,
            plan.num_symbols,
            PREAMBLE_LEN,
            sampling_interval,
        )
        for it in range(options.num_alternations):
            if it > 0:
                cfo_hat = estimate_cfo(y, layout, pilots, grid, pn_hat, options.cfo_refine_tol)
            c_dense = build_transfer(layout, pilots, cfo_hat, None).dense()
            pn_hat = estimate_pn(
                y, c_dense, prior_factor, noise_var, plan.num_symbols, options.pn_dense_limit
            )
            iterations = it + 1

    transfer = build_transfer(layout, pilots, cfo_hat, pn_hat if use_pn else None)
    g_taps = estimate_g(y, transfer)
    noise_hat = estimate_noise_variance(y, transfer)
    return SyncEstimate(
        timing_offset=n0_hat,
        cfo=cfo_hat,
        phase_noise=pn_hat,
        g_taps=g_taps,
        g_freq=taps_to_freq(g_taps, plan.num_subcarriers),
        noise_var=noise_hat,
        iterations=iterations,
    )
