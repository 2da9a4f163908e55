"""Joint maximum-likelihood training of the energy network and the GRU
proposal with the dynamic masking schedule."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, backward
from .energy import EnergyModel
from .errors import ConfigError, TrainingDivergedError, UsageError
from .masking import Coalition, MaskSchedule, advance_schedule, draw_mask
from .proposal import (ProposalNetwork, log_q_of_values, sample_from_stats,
                       teacher_unroll)

DIVERGENCE_LIMIT = 1e6


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    k_tilde: int = 32
    zeta_min: float = 0.2
    zeta_max: float = 0.8
    delta_override: float | None = None
    seed: int = 0
    energy_hidden: int = 32
    gamma_dim: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate out of range: {self.learning_rate}")
        if self.k_tilde < 1:
            raise ConfigError(f"k_tilde must be >= 1, got {self.k_tilde}")
        if not 0.0 <= self.zeta_min <= self.zeta_max <= 1.0:
            raise ConfigError(
                f"need 0 <= zeta_min <= zeta_max <= 1, got {self.zeta_min}, {self.zeta_max}"
            )
        if self.energy_hidden < 1 or self.gamma_dim < 1:
            raise ConfigError("network sizes must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**known)
        cfg.validate()
        return cfg


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    zetas: list[float] = field(default_factory=list)
    energy: EnergyModel | None = None
    proposal: ProposalNetwork | None = None
    wall_clock: float = 0.0
    config: TrainConfig | None = None


# -- Adam --------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params])


def adam_update(params, grads, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """Standard Adam step with bias correction; updates parameters in place."""
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g**2
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# -- loss --------------------------------------------------------------

def nll_loss(g_data: float, log_z_hat: float, log_q_data: float) -> float:
    """Per-sample loss value: energy NLL plus proposal NLL."""
    return g_data + log_z_hat - log_q_data


def group_loss(energy: EnergyModel, proposal: ProposalNetwork,
               x_rows: np.ndarray, c: Coalition, k_tilde: int,
               rng: np.random.Generator | None = None,
               samples: np.ndarray | None = None,
               sample_log_q: np.ndarray | None = None) -> tuple[Tensor, int]:
    """Differentiable summed loss for rows sharing one coalition.

    Draws ``k_tilde`` partition samples from the teacher-forced step
    Gaussians unless ``samples`` (m, k_tilde, n_masked) is given explicitly.
    Returns (loss sum over rows, row count).

    The proposal densities inside the importance weights are treated as
    constants: the samples and their q values belong to the partition
    estimator, not to the differentiable objective. Letting gradients reach
    them rewards the proposal for inflating q at its own draws, which sends
    the partition estimate (and the loss) to minus infinity. The proposal is
    trained solely by its data log-likelihood term. ``sample_log_q`` may
    pin those densities explicitly (finite-difference checks need the
    constant to stay constant across evaluations).
    """
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    if c.n_masked == 0:
        raise UsageError("training requires a nonempty masked set")
    m, d = x_rows.shape
    stats = teacher_unroll(proposal, x_rows, c)
    if samples is None:
        if rng is None:
            raise UsageError("need an rng when samples are not provided")
        samples = sample_from_stats(stats, k_tilde, rng)
    k = samples.shape[1]

    g_data = energy.energy_batch(as_tensor(x_rows), stats.gamma)

    if sample_log_q is None:
        sample_log_q = log_q_of_values(stats, samples).data  # constant, see above
    log_q_samp = sample_log_q
    assembled = np.repeat(x_rows, k, axis=0)
    flat = samples.reshape(m * k, -1)
    assembled[:, c.mask_array] = flat
    gamma_rep = stats.gamma[np.repeat(np.arange(m), k)]
    g_samp = energy.energy_batch(as_tensor(assembled), gamma_rep).reshape(m, k)

    log_z = ((-1.0) * g_samp - log_q_samp).logsumexp(axis=1) - float(np.log(k))
    total = (g_data + log_z - stats.log_q_data).sum()
    return total, m


def loss_step(batch: np.ndarray, energy: EnergyModel, proposal: ProposalNetwork,
              coalitions: list[Coalition], k_tilde: int,
              rng: np.random.Generator) -> Tensor:
    """Mean loss over a batch, one coalition per sample.

    Samples with identical coalitions are processed together; groups are
    reduced in ascending mask order for determinism.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise UsageError("empty batch")
    if len(coalitions) != batch.shape[0]:
        raise UsageError("one coalition per sample is required")
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(coalitions):
        groups.setdefault(c.mask, []).append(i)
    total = as_tensor(0.0)
    for mask in sorted(groups):
        idx = groups[mask]
        part, _ = group_loss(energy, proposal, batch[idx],
                             Coalition.from_mask(mask), k_tilde, rng)
        total = total + part
    return total * (1.0 / batch.shape[0])


def all_parameters(energy: EnergyModel, proposal: ProposalNetwork):
    return energy.parameters() + proposal.parameters()


def train(data: np.ndarray, cfg: TrainConfig) -> TrainReport:
    """Run the full training loop; deterministic given the config seed."""
    cfg.validate()
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, d = data.shape
    if d < 2:
        raise UsageError(f"need at least 2 features, got {d}")
    if n < cfg.batch_size:
        raise UsageError(f"dataset has {n} rows, batch_size is {cfg.batch_size}")

    rng = np.random.default_rng(cfg.seed)
    init_rng = np.random.default_rng(rng.integers(2**63))
    energy = EnergyModel.create(init_rng, d, cfg.gamma_dim, hidden=cfg.energy_hidden)
    proposal = ProposalNetwork(d, cfg.gamma_dim, rng=init_rng)
    params = all_parameters(energy, proposal)
    state = AdamState.for_params(params)
    sched = MaskSchedule.for_epochs(cfg.zeta_min, cfg.zeta_max, cfg.epochs,
                                    cfg.delta_override)

    report = TrainReport(energy=energy, proposal=proposal, config=cfg)
    start = time.perf_counter()
    for _ in range(cfg.epochs):
        zeta = sched.zeta
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            batch = data[order[lo:lo + cfg.batch_size]]
            coalitions = [draw_mask(d, zeta, rng, require_nonempty_masked=True)
                          for _ in range(batch.shape[0])]
            loss = loss_step(batch, energy, proposal, coalitions, cfg.k_tilde, rng)
            value = loss.item()
            if not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
                report.wall_clock = time.perf_counter() - start
                raise TrainingDivergedError(
                    f"loss diverged at epoch {sched.current_epoch}: {value}", report)
            grads = backward(loss, params)
            adam_update(params, grads, state, cfg.learning_rate,
                        cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            epoch_losses.append(value)
        report.losses.append(float(np.mean(epoch_losses)))
        report.zetas.append(zeta)
        sched = advance_schedule(sched)
    report.wall_clock = time.perf_counter() - start
    return report
