"""GRU-coupled proposal distribution q(x_masked | x_observed).

Masked features are conditioned one at a time in ascending index order.
Each step runs the cell twice:

* a *probe* step whose input holds the observed features plus a zero in the
  current feature's slot; the resulting hidden state is split into
  (mu, raw_sigma, gamma) and the current feature is scored or sampled from
  N(mu[i], exp(raw_sigma[i])^2);
* a *commit* step that feeds the feature's value (true value when teacher
  forced, sampled value when autoregressive) so later steps condition on it.

Scoring a value with parameters that never saw that value keeps every step
density normalized and makes training and sampling use the same machinery.

The context vector gamma is the tail slice of the first probe hidden state,
so it is a function of the observed features and the coalition pattern
only. The energy network needs gamma to know which features are observed;
gamma must not depend on the masked values, otherwise the energy model's
normalizing constant would vary with the point being scored (the density
would not be normalized) and, during training, gamma would leak the true
masked values to the energy network, which then learns a degenerate
consistency check instead of a density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import DimensionMismatchError, NumericOverflowError, UsageError
from .masking import Coalition
from .nn import GruCell, gru_from_dict, gru_to_dict

LOG_2PI = float(np.log(2.0 * np.pi))

DEFAULT_GAMMA_DIM = 32


class ProposalNetwork:
    """GRU cell sized for d features plus a context vector of gamma_dim."""

    def __init__(self, d: int, gamma_dim: int = DEFAULT_GAMMA_DIM,
                 cell: GruCell | None = None,
                 rng: np.random.Generator | None = None):
        self.d = int(d)
        self.gamma_dim = int(gamma_dim)
        hidden = 2 * self.d + self.gamma_dim
        if cell is None:
            cell = GruCell(2 * self.d, hidden, rng=rng or np.random.default_rng(0))
        if cell.input_size != 2 * self.d or cell.hidden_size != hidden:
            raise DimensionMismatchError(
                "proposal cell size", (2 * self.d, hidden),
                (cell.input_size, cell.hidden_size),
            )
        self.cell = cell

    @property
    def hidden_size(self) -> int:
        return self.cell.hidden_size

    def parameters(self):
        return self.cell.parameters()

    def to_dict(self) -> dict:
        return {"kind": "proposal", "d": self.d, "gamma_dim": self.gamma_dim,
                "cell": gru_to_dict(self.cell)}

    @classmethod
    def from_dict(cls, d: dict) -> "ProposalNetwork":
        return cls(d["d"], d["gamma_dim"], cell=gru_from_dict(d["cell"]))


@dataclass
class StepDistribution:
    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    masked_index: int


@dataclass
class ProposalDensity:
    steps: list[StepDistribution]
    log_density: float
    final_gamma: np.ndarray
    sampled_values: np.ndarray | None = None


def encode_step_input(x, c: Coalition, j: int, masked_value: float) -> np.ndarray:
    """Build the 2d step input: observed values in place, then a one-hot slot.

    Part (a) holds the observed values at their positions with zeros at
    masked positions; part (b) holds ``masked_value`` at the j-th masked
    feature's position and zeros elsewhere.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (c.d,):
        raise DimensionMismatchError("sample length", (c.d,), x.shape)
    masked = c.masked_indices
    if not 0 <= j < len(masked):
        raise UsageError(f"step index {j} out of range for {len(masked)} masked features")
    part_a = np.where(c.mask_array, 0.0, x)
    part_b = np.zeros(c.d)
    part_b[masked[j]] = masked_value
    return np.concatenate([part_a, part_b])


# -- differentiable teacher-forced pass --------------------------------

@dataclass
class TeacherStats:
    """Per-step Gaussian parameters from a teacher-forced unroll (batched)."""

    coalition: Coalition
    mus: list[Tensor]        # each (m,)
    raws: list[Tensor]       # each (m,); sigma = exp(raw)
    log_q_data: Tensor       # (m,)
    gamma: Tensor            # (m, gamma_dim)

    @property
    def m(self) -> int:
        return self.log_q_data.shape[0]


def _observed_part(x_rows: np.ndarray, c: Coalition) -> np.ndarray:
    return np.where(c.mask_array[None, :], 0.0, x_rows)


def teacher_unroll(net: ProposalNetwork, x_rows: np.ndarray, c: Coalition) -> TeacherStats:
    """Unroll over rows sharing one coalition, feeding true masked values.

    Returns differentiable per-step Gaussians, the accumulated log density
    of the rows' own masked values, and the final context vector.
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    if x_rows.shape[1] != net.d:
        raise DimensionMismatchError("sample width", net.d, x_rows.shape[1])
    masked = c.masked_indices
    if not masked:
        raise UsageError("teacher unroll requires at least one masked feature")
    m, d = x_rows.shape
    part_a = _observed_part(x_rows, c)
    probe_in = as_tensor(np.concatenate([part_a, np.zeros((m, d))], axis=1))
    h = as_tensor(np.zeros((m, net.hidden_size)))
    mus, raws = [], []
    gamma = None
    log_q = as_tensor(np.zeros(m))
    for j, idx in enumerate(masked):
        h_probe = net.cell.step_batch(probe_in, h)
        if gamma is None:
            gamma = h_probe[:, 2 * d:]
        mu = h_probe[:, idx]
        raw = h_probe[:, d + idx]
        v = x_rows[:, idx]
        z = (as_tensor(v) - mu) * (-raw).exp()
        log_q = log_q + (-0.5) * z**2 - raw - 0.5 * LOG_2PI
        part_b = np.zeros((m, d))
        part_b[:, idx] = v
        commit_in = as_tensor(np.concatenate([part_a, part_b], axis=1))
        h = net.cell.step_batch(commit_in, h)
        mus.append(mu)
        raws.append(raw)
    return TeacherStats(c, mus, raws, log_q, gamma)


def sample_from_stats(stats: TeacherStats, count: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw (m, count, n_masked) values from the per-step Gaussians."""
    m = stats.m
    k = len(stats.mus)
    out = np.empty((m, count, k))
    for j in range(k):
        mu = stats.mus[j].data
        sigma = np.exp(stats.raws[j].data)
        _check_sigma(sigma, j)
        out[:, :, j] = mu[:, None] + sigma[:, None] * rng.standard_normal((m, count))
    return out


def log_q_of_values(stats: TeacherStats, values: np.ndarray) -> Tensor:
    """Differentiable log q of (m, count, n_masked) values under the stats."""
    m, count, k = values.shape
    if k != len(stats.mus):
        raise DimensionMismatchError("masked value count", len(stats.mus), k)
    total = as_tensor(np.zeros((m, count)))
    for j in range(k):
        mu = stats.mus[j].reshape(m, 1)
        raw = stats.raws[j].reshape(m, 1)
        z = (as_tensor(values[:, :, j]) - mu) * (-raw).exp()
        total = total + (-0.5) * z**2 - raw - 0.5 * LOG_2PI
    return total


def _check_sigma(sigma: np.ndarray, step: int) -> None:
    if not np.isfinite(sigma).all() or (sigma <= 0).any():
        raise NumericOverflowError(f"non-finite proposal sigma at step {step}")


# -- gradient-free autoregressive sampling -----------------------------

def autoregressive_sample(net: ProposalNetwork, x_rows: np.ndarray, c: Coalition,
                          rng: np.random.Generator):
    """One autoregressive draw per row.

    Returns (values (m, n_masked), log_q (m,), gamma (m, gamma_dim)). Each
    step samples from the probe-step Gaussian and commits the sampled value
    so later steps condition on it. gamma comes from the first probe state
    and therefore depends only on the observed features.
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    masked = c.masked_indices
    if not masked:
        raise UsageError("autoregressive sampling requires at least one masked feature")
    m, d = x_rows.shape
    cell = net.cell
    part_a = _observed_part(x_rows, c)
    probe_in = np.concatenate([part_a, np.zeros((m, d))], axis=1)
    h = np.zeros((m, net.hidden_size))
    values = np.empty((m, len(masked)))
    log_q = np.zeros(m)
    gamma = None
    for j, idx in enumerate(masked):
        h_probe = cell.step_np(probe_in, h)
        if gamma is None:
            gamma = h_probe[:, 2 * d:].copy()
        mu = h_probe[:, idx]
        raw = h_probe[:, d + idx]
        sigma = np.exp(raw)
        _check_sigma(sigma, j)
        v = mu + sigma * rng.standard_normal(m)
        values[:, j] = v
        log_q += -0.5 * ((v - mu) / sigma) ** 2 - raw - 0.5 * LOG_2PI
        part_b = np.zeros((m, d))
        part_b[:, idx] = v
        h = cell.step_np(np.concatenate([part_a, part_b], axis=1), h)
    return values, log_q, gamma


def log_q_np(net: ProposalNetwork, x_rows: np.ndarray, c: Coalition,
             values: np.ndarray):
    """Gradient-free log q of given masked values, with final gamma.

    ``values`` has shape (m, n_masked); row i is scored against row i's
    observed features.
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    masked = c.masked_indices
    m, d = x_rows.shape
    cell = net.cell
    part_a = _observed_part(x_rows, c)
    probe_in = np.concatenate([part_a, np.zeros((m, d))], axis=1)
    h = np.zeros((m, net.hidden_size))
    log_q = np.zeros(m)
    gamma = None
    for j, idx in enumerate(masked):
        h_probe = cell.step_np(probe_in, h)
        if gamma is None:
            gamma = h_probe[:, 2 * d:].copy()
        mu = h_probe[:, idx]
        raw = h_probe[:, d + idx]
        sigma = np.exp(raw)
        _check_sigma(sigma, j)
        v = values[:, j]
        log_q += -0.5 * ((v - mu) / sigma) ** 2 - raw - 0.5 * LOG_2PI
        part_b = np.zeros((m, d))
        part_b[:, idx] = v
        h = cell.step_np(np.concatenate([part_a, part_b], axis=1), h)
    return log_q, gamma


# -- spec-level wrappers ------------------------------------------------

def unroll(net: ProposalNetwork, x, c: Coalition, mode: str = "teacher_forced",
           rng: np.random.Generator | None = None) -> ProposalDensity:
    """Single-sample unroll, returning the per-step distributions.

    ``teacher_forced`` scores the sample's own masked values;
    ``autoregressive`` samples each masked value and returns the draws.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.d,):
        raise DimensionMismatchError("sample length", (net.d,), x.shape)
    masked = c.masked_indices
    if not masked:
        raise UsageError("unroll requires at least one masked feature")
    if mode == "teacher_forced":
        values = x[list(masked)].reshape(1, -1)
        sampled = None
    elif mode == "autoregressive":
        if rng is None:
            raise UsageError("autoregressive unroll needs an rng")
        sampled, _, _ = autoregressive_sample(net, x.reshape(1, -1), c, rng)
        values = sampled
    else:
        raise UsageError(f"unknown unroll mode {mode!r}")

    # replay to collect per-step parameters
    d = net.d
    cell = net.cell
    part_a = _observed_part(x.reshape(1, -1), c)
    probe_in = np.concatenate([part_a, np.zeros((1, d))], axis=1)
    h = np.zeros((1, net.hidden_size))
    steps = []
    log_q = 0.0
    final_gamma = None
    for j, idx in enumerate(masked):
        h_probe = cell.step_np(probe_in, h)
        if final_gamma is None:
            final_gamma = h_probe[0, 2 * d:].copy()
        mu_vec = h_probe[0, :d]
        sigma_vec = np.exp(h_probe[0, d:2 * d])
        _check_sigma(sigma_vec, j)
        gamma_j = h_probe[0, 2 * d:]
        steps.append(StepDistribution(mu_vec.copy(), sigma_vec.copy(), gamma_j.copy(), idx))
        v = values[0, j]
        log_q += (-0.5 * ((v - mu_vec[idx]) / sigma_vec[idx]) ** 2
                  - np.log(sigma_vec[idx]) - 0.5 * LOG_2PI)
        part_b = np.zeros((1, d))
        part_b[0, idx] = v
        h = cell.step_np(np.concatenate([part_a, part_b], axis=1), h)
    if not np.isfinite(log_q):
        raise NumericOverflowError("non-finite proposal log density")
    return ProposalDensity(steps, float(log_q), final_gamma,
                           sampled_values=None if sampled is None else sampled[0])


def sample_proposal(net: ProposalNetwork, x, c: Coalition, count: int,
                    rng: np.random.Generator):
    """``count`` independent autoregressive draws for one sample.

    Returns (values (count, n_masked), log_q (count,), gamma (count, gamma_dim)).
    """
    if count < 1:
        raise UsageError(f"need count >= 1, got {count}")
    x = np.asarray(x, dtype=np.float64)
    rows = np.repeat(x.reshape(1, -1), count, axis=0)
    return autoregressive_sample(net, rows, c, rng)
