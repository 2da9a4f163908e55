"""Conditional energy model, importance-sampled partition function and
conditional log density."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, concat
from .errors import DimensionMismatchError, NumericOverflowError, UsageError
from .masking import Coalition, reassemble
from .nn import ResidualMlp, mlp_from_dict, mlp_to_dict


def logsumexp_np(a: np.ndarray, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return float(out.reshape(())) if axis is None else np.squeeze(out, axis=axis)


class EnergyModel:
    """Residual MLP over the assembled feature vector and the context vector.

    The input is the full d-vector (masked positions filled with candidate
    values, observed positions with the observed values) concatenated with
    gamma; the output g is a scalar energy and exp(-g) the unnormalized
    conditional density.

    The raw network output is squashed to (-bound, bound) with a scaled
    tanh. An unbounded energy makes the sampled-partition likelihood
    objective unbounded below (the log of a K-sample mean underestimates
    log Z by an amount that grows with the importance-weight variance, so
    training is rewarded for making the weights degenerate); the bound caps
    that direction while leaving e^(2*bound) of density dynamic range.
    """

    def __init__(self, net: ResidualMlp, d: int, gamma_dim: int,
                 bound: float = 30.0):
        if net.in_size != d + gamma_dim:
            raise DimensionMismatchError("energy input size", d + gamma_dim, net.in_size)
        if bound <= 0:
            raise UsageError(f"energy bound must be positive, got {bound}")
        self.net = net
        self.d = int(d)
        self.gamma_dim = int(gamma_dim)
        self.bound = float(bound)

    @classmethod
    def create(cls, rng: np.random.Generator, d: int, gamma_dim: int,
               hidden: int = 32, bound: float = 30.0) -> "EnergyModel":
        return cls(ResidualMlp.create(rng, d + gamma_dim, hidden), d, gamma_dim,
                   bound=bound)

    def parameters(self):
        return self.net.parameters()

    def to_dict(self) -> dict:
        return {"kind": "energy", "d": self.d, "gamma_dim": self.gamma_dim,
                "bound": self.bound, "net": mlp_to_dict(self.net)}

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyModel":
        return cls(mlp_from_dict(d["net"]), d["d"], d["gamma_dim"],
                   bound=d.get("bound", 30.0))

    # differentiable batch energy
    def energy_batch(self, assembled: Tensor, gamma: Tensor) -> Tensor:
        raw = self.net.forward_batch(concat([assembled, gamma], axis=1))
        return (raw * (1.0 / self.bound)).tanh() * self.bound

    def energy_np(self, assembled: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        assembled = np.atleast_2d(assembled)
        gamma = np.atleast_2d(gamma)
        if gamma.shape[0] == 1 and assembled.shape[0] > 1:
            gamma = np.repeat(gamma, assembled.shape[0], axis=0)
        out = self.energy_batch(as_tensor(assembled), as_tensor(gamma))
        return out.data


def energy(model: EnergyModel, assembled_x, gamma) -> float:
    """Scalar energy g for one assembled input and context vector."""
    assembled_x = np.asarray(assembled_x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if assembled_x.shape != (model.d,):
        raise DimensionMismatchError("assembled input", (model.d,), assembled_x.shape)
    if gamma.shape != (model.gamma_dim,):
        raise DimensionMismatchError("context vector", (model.gamma_dim,), gamma.shape)
    g = float(model.energy_np(assembled_x.reshape(1, -1), gamma.reshape(1, -1))[0])
    if not np.isfinite(g):
        raise NumericOverflowError("non-finite energy value")
    return g


@dataclass
class PartitionEstimate:
    """Importance-sampling estimate of the partition function.

    log_weights holds log(exp(-g)/q) per proposal draw; z_hat is their mean,
    accumulated in log space.
    """

    log_z_hat: float
    log_weights: np.ndarray
    coalition: Coalition
    gamma_key: float

    @property
    def z_hat(self) -> float:
        return float(np.exp(self.log_z_hat))

    @property
    def sample_count(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def _gamma_key(gamma: np.ndarray) -> float:
    return float(np.sum(gamma))


def estimate_partition(model: EnergyModel, proposal_values: np.ndarray,
                       proposal_log_q: np.ndarray, x_obs, c: Coalition,
                       gamma) -> PartitionEstimate:
    """Partition estimate from proposal draws, in log space.

    ``proposal_values`` has shape (k_tilde, n_masked) and ``proposal_log_q``
    the matching log densities. ``gamma`` is either one context vector shared
    by all draws or one per draw.
    """
    values = np.atleast_2d(np.asarray(proposal_values, dtype=np.float64))
    log_q = np.asarray(proposal_log_q, dtype=np.float64)
    if values.shape[0] != log_q.shape[0]:
        raise DimensionMismatchError("draw count", values.shape[0], log_q.shape[0])
    if values.shape[0] < 1:
        raise UsageError("need at least one proposal draw")
    if not np.isfinite(log_q).all():
        bad = int(np.flatnonzero(~np.isfinite(log_q))[0])
        raise NumericOverflowError(f"non-finite proposal log density at sample {bad}")
    x_obs = np.asarray(x_obs, dtype=np.float64)
    assembled = np.empty((values.shape[0], c.d))
    assembled[:, ~c.mask_array] = x_obs[~c.mask_array]
    assembled[:, c.mask_array] = values
    gamma = np.atleast_2d(np.asarray(gamma, dtype=np.float64))
    g = model.energy_np(assembled, gamma)
    log_w = -g - log_q
    if not np.isfinite(log_w).all():
        bad = int(np.flatnonzero(~np.isfinite(log_w))[0])
        raise NumericOverflowError(f"non-finite importance weight at sample {bad}")
    log_z = float(logsumexp_np(log_w)) - float(np.log(len(log_w)))
    return PartitionEstimate(log_z, log_w, c, _gamma_key(gamma[0] if gamma.shape[0] else gamma))


def conditional_log_density(model: EnergyModel, x_masked_values, x_obs,
                            c: Coalition, partition: PartitionEstimate,
                            gamma) -> float:
    """log p(x_masked | x_obs) = -g(assembled) - log Z_hat."""
    if partition.coalition != c:
        raise UsageError("partition estimate was computed for a different coalition")
    gamma = np.asarray(gamma, dtype=np.float64)
    x = reassemble(c, x_masked_values, np.asarray(x_obs)[~c.mask_array])
    g = energy(model, x, gamma)
    return -g - partition.log_z_hat


def variance_gap(model: EnergyModel, proposal, x_obs, c: Coalition,
                 n_trials: int, rng: np.random.Generator) -> float:
    """Monte Carlo variance of the importance weights exp(-g)/q.

    Near zero when the proposal matches the normalized energy density and
    strictly positive as the two diverge; reported as a diagnostic of the
    partition-estimate variance discrepancy.
    """
    from .proposal import autoregressive_sample

    if n_trials < 1:
        raise UsageError(f"need n_trials >= 1, got {n_trials}")
    x_obs = np.asarray(x_obs, dtype=np.float64)
    rows = np.repeat(x_obs.reshape(1, -1), n_trials, axis=0)
    values, log_q, gamma = autoregressive_sample(proposal, rows, c, rng)
    assembled = rows.copy()
    assembled[:, c.mask_array] = values
    g = model.energy_np(assembled, gamma)
    w = np.exp(-g - log_q)
    return float(np.mean(w**2) - np.mean(w) ** 2)
