"""Compressive reconstruction of the full MIMO channel.

Stacks the per-frame beamformed-channel estimates into a linear
measurement of vec(H[k]) and recovers a support shared across all
subcarriers with a simultaneous orthogonal matching pursuit, stopping when
the mean residual power reaches the (estimated) measurement noise level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .channel import AngularDictionary
from .linksim import whitening_from_combiner
from .training import TrainingPlan

RESIDUAL_FLOOR = 1e-12  # relative numerical floor for the stopping rule


@dataclass(frozen=True)
class MeasurementModel:
    """Stacked linear model: measurements[k] ~ phi @ vec(H[k]) (column-major vec)."""

    phi: np.ndarray  # (num_frames*chains, num_rx*num_tx)
    measurements: np.ndarray  # (num_frames*chains, num_subcarriers)
    noise_vars: np.ndarray  # (num_frames,) per-frame measurement-entry noise variance

    @property
    def num_measurements(self) -> int:
        return self.phi.shape[0]


def build_measurement(
    plan: TrainingPlan,
    g_freq_per_frame: list[np.ndarray],
    noise_vars: np.ndarray | None = None,
) -> MeasurementModel:
    """Assemble the measurement matrix and stacked per-subcarrier estimates.

    Frame m contributes the row block (q^T F_rf^T) kron (D^-H W_rf^H); with
    one-hot combiners each row samples num_tx entries of vec(H) weighted by
    the subarray sequence and the frame's spatial weights.  g_freq_per_frame
    holds each frame's (num_subcarriers, chains) beamformed-channel estimate.
    """
    if len(g_freq_per_frame) != plan.num_frames or plan.num_frames < 1:
        raise ValueError("need one beamformed-channel estimate per frame")
    blocks = []
    rows = []
    for fp, g_freq in zip(plan.frames, g_freq_per_frame):
        whitener = whitening_from_combiner(fp.combiner)
        w_eff = whitener.apply_inverse_adjoint(fp.combiner.conj().T)
        tx_row = (fp.precoder @ fp.spatial_weights)[None, :]  # (1, num_tx)
        blocks.append(np.kron(tx_row, w_eff))
        if g_freq.shape != (plan.num_subcarriers, fp.combiner.shape[1]):
            raise ValueError("beamformed-channel estimate has the wrong shape")
        rows.append(g_freq.T)  # (chains, num_subcarriers)
    phi = np.concatenate(blocks, axis=0)
    measurements = np.concatenate(rows, axis=0)
    if noise_vars is None:
        noise_vars = np.zeros(plan.num_frames)
    return MeasurementModel(phi=phi, measurements=measurements, noise_vars=np.asarray(noise_vars, dtype=float))


@dataclass(frozen=True)
class SparseChannelEstimate:
    """Recovered shared support, per-subcarrier gains, and the rebuilt channel."""

    support: tuple[tuple[int, int], ...]  # (receive-grid, transmit-grid) index pairs
    gains: np.ndarray  # (num_atoms, num_subcarriers)
    h_hat: np.ndarray  # (num_subcarriers, num_rx, num_tx)
    residual_power: tuple[float, ...]  # mean residual power after each iteration


def reconstruct(
    support: tuple[tuple[int, int], ...],
    gains: np.ndarray,
    dictionary: AngularDictionary,
    num_subcarriers: int,
) -> np.ndarray:
    """H[k] = sum_atoms gain[atom, k] * a_rx(atom) a_tx(atom)^H."""
    n_r = dictionary.receive_grid.shape[0]
    n_t = dictionary.transmit_grid.shape[0]
    out = np.zeros((num_subcarriers, n_r, n_t), dtype=np.complex128)
    if not support:
        return out
    gains = np.asarray(gains, dtype=np.complex128)
    for a, (r_idx, t_idx) in enumerate(support):
        if not (0 <= r_idx < dictionary.grid_rx and 0 <= t_idx < dictionary.grid_tx):
            raise IndexError("support atom outside the dictionary grid")
        outer = np.outer(dictionary.receive_grid[:, r_idx], dictionary.transmit_grid[:, t_idx].conj())
        out += gains[a][:, None, None] * outer[None, :, :]
    return out


def swomp(
    model: MeasurementModel,
    dictionary: AngularDictionary,
    noise_var: float,
    max_iters: int = 16,
    stop_scale: float = 1.0,
) -> SparseChannelEstimate:
    """Simultaneous matching pursuit with a noise-variance stopping rule.

    Greedy loop: correlate the (per-frame whitened) residuals of every
    subcarrier against the dictionary columns, add the atom with the
    largest norm-weighted aggregate correlation to the shared support,
    re-solve the per-subcarrier least squares on the support (one QR reused
    across subcarriers), and stop once the mean residual power drops to
    stop_scale * noise_var or max_iters is reached.  The channel sparsity
    level is never an input.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    phi = model.phi
    meas = model.measurements
    n_meas, n_sub = meas.shape

    # per-frame whitening reduces to row scaling under the scaled-identity
    # noise approximation; uniform variances leave the rows untouched
    if np.any(model.noise_vars > 0):
        chains = n_meas // model.noise_vars.size
        scale = np.repeat(np.sqrt(np.mean(model.noise_vars) / model.noise_vars), chains)
        phi = phi * scale[:, None]
        meas = meas * scale[:, None]

    atoms = np.kron(dictionary.transmit_grid.conj(), dictionary.receive_grid)  # vec-basis
    upsilon = phi @ atoms  # (n_meas, grid_rx*grid_tx)
    col_norms = np.linalg.norm(upsilon, axis=0)
    col_norms[col_norms == 0] = 1.0

    grid_rx = dictionary.grid_rx
    residual = meas.copy()
    support_flat: list[int] = []
    residual_power: list[float] = []
    gains = np.zeros((0, n_sub), dtype=np.complex128)

    initial_power = float(np.mean(np.abs(residual) ** 2))
    threshold = stop_scale * noise_var
    floor = RESIDUAL_FLOOR * max(initial_power, noise_var)

    while len(support_flat) < max_iters:
        power = float(np.mean(np.abs(residual) ** 2))
        if power <= max(threshold, floor):
            break
        corr = upsilon.conj().T @ residual  # (n_atoms, n_sub)
        scores = np.sum(np.abs(corr), axis=1) / col_norms
        scores[support_flat] = -np.inf
        support_flat.append(int(np.argmax(scores)))

        basis = upsilon[:, support_flat]
        q, r = np.linalg.qr(basis)
        if np.min(np.abs(np.diag(r))) < 1e-10 * np.max(np.abs(np.diag(r))):
            raise ValueError("selected atoms are linearly dependent")
        gains = scipy.linalg.solve_triangular(r, q.conj().T @ meas, lower=False)
        residual = meas - basis @ gains
        residual_power.append(float(np.mean(np.abs(residual) ** 2)))

    support = tuple((j % grid_rx, j // grid_rx) for j in support_flat)
    h_hat = reconstruct(support, gains, dictionary, n_sub)
    return SparseChannelEstimate(
        support=support,
        gains=np.asarray(gains, dtype=np.complex128),
        h_hat=h_hat,
        residual_power=tuple(residual_power),
    )
