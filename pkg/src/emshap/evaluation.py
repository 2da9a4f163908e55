"""Quantitative evaluation: insertion/deletion AUC curves, mean absolute
deviation, concentration-bound coverage, and the periodic-signal toy
experiment that checks the Monte Carlo error bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyModel, logsumexp_np
from .errors import DimensionMismatchError, UsageError
from .masking import Coalition
from .proposal import ProposalNetwork, sample_proposal
from .trainer import TrainConfig, train

TOY_WEIGHTS = np.array([-0.4, -1.2, 0.8])
TOY_NOISE_VAR = 0.001


# -- generic metrics ----------------------------------------------------

def mad(estimates, truth) -> float:
    """Mean absolute deviation between two equal-length vectors."""
    estimates = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimates.shape != truth.shape:
        raise DimensionMismatchError("vector length", truth.shape, estimates.shape)
    return float(np.mean(np.abs(estimates - truth)))


def error_bound(k: int, epsilon2: float = 0.0) -> float:
    """Monte Carlo error bound sqrt(pi)/sqrt(2K) plus the approximation term."""
    if k < 1:
        raise UsageError(f"need k >= 1, got {k}")
    return math.sqrt(math.pi) / math.sqrt(2 * k) + epsilon2


# -- insertion / deletion curves ----------------------------------------

@dataclass
class SicCurve:
    fractions: np.ndarray
    outputs: np.ndarray
    auc: float


def sic_auc(model_f, x_t, phi, background_value, direction: str,
            steps: int) -> SicCurve:
    """Model-output curve as features are inserted or removed in |phi| order.

    ``add`` starts from the background vector and inserts features of x_t in
    descending |phi| order; ``del`` starts from x_t and replaces features
    with background values in the same order. The features are processed in
    up to ``steps`` blocks; AUC is the trapezoid integral over the fraction
    of features replaced.
    """
    if direction not in ("add", "del"):
        raise UsageError(f"direction must be 'add' or 'del', got {direction!r}")
    if steps < 2:
        raise UsageError(f"need steps >= 2, got {steps}")
    x_t = np.asarray(x_t, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    background = np.broadcast_to(np.asarray(background_value, dtype=np.float64),
                                 x_t.shape).copy()
    d = x_t.shape[0]
    if phi.shape != (d,):
        raise DimensionMismatchError("attribution length", (d,), phi.shape)
    order = np.argsort(-np.abs(phi), kind="stable")
    blocks = np.array_split(order, min(steps, d))

    current = background.copy() if direction == "add" else x_t.copy()
    target = x_t if direction == "add" else background
    rows = [current.copy()]
    count = [0]
    for block in blocks:
        current[block] = target[block]
        rows.append(current.copy())
        count.append(count[-1] + len(block))
    outputs = np.asarray(model_f(np.asarray(rows)), dtype=np.float64).reshape(-1)
    fractions = np.asarray(count, dtype=np.float64) / d
    auc = float(np.trapezoid(outputs, fractions))
    return SicCurve(fractions, outputs, auc)


# -- concentration-bound coverage ---------------------------------------

def hoeffding_coverage(bounded_sampler, k: int, epsilon: float, trials: int,
                       rng: np.random.Generator,
                       true_mean: float | None = None) -> float:
    """Empirical probability that a K-sample mean misses the true mean by epsilon.

    ``bounded_sampler(rng, n)`` must return n values in [0, 1]. The result
    should not exceed 2*exp(-2*K*epsilon^2) beyond binomial noise.
    """
    if trials < 100:
        raise UsageError(f"need trials >= 100, got {trials}")
    if k < 1:
        raise UsageError(f"need k >= 1, got {k}")
    if true_mean is None:
        calibration = np.asarray(bounded_sampler(rng, 1_000_000), dtype=np.float64)
        _check_unit_interval(calibration)
        true_mean = float(np.mean(calibration))
    exceed = 0
    for _ in range(trials):
        draws = np.asarray(bounded_sampler(rng, k), dtype=np.float64)
        _check_unit_interval(draws)
        if abs(float(np.mean(draws)) - true_mean) >= epsilon:
            exceed += 1
    return exceed / trials


def _check_unit_interval(values: np.ndarray) -> None:
    if values.size and (values.min() < -1e-12 or values.max() > 1 + 1e-12):
        raise UsageError("sampler output outside [0, 1]")


# -- periodic-signal toy experiment -------------------------------------

def generate_toy_data(n: int, rng: np.random.Generator):
    """x_i(t) = sin(i*pi*t) + noise for i = 1..3, t uniform on [0, 10].

    Returns (X, y, t) with y = w.x + noise and w = [-0.4, -1.2, 0.8];
    both noises are Gaussian with variance 0.001.
    """
    t = rng.uniform(0.0, 10.0, size=n)
    sigma = math.sqrt(TOY_NOISE_VAR)
    x = np.stack([np.sin(i * np.pi * t) for i in (1, 2, 3)], axis=1)
    x += rng.normal(0.0, sigma, size=x.shape)
    y = x @ TOY_WEIGHTS + rng.normal(0.0, sigma, size=n)
    return x, y, t


@dataclass
class UnitIntervalModel:
    """Linear regression fit squashed affinely into [0, 1].

    The affine transform (recorded in ``lo``/``hi``) maps the training-split
    prediction range onto [0, 1]; outputs are clipped to the interval.
    """

    weights: np.ndarray
    intercept: float
    lo: float
    hi: float

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, margin: float = 0.2) -> "UnitIntervalModel":
        a = np.column_stack([x, np.ones(len(x))])
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        raw = x @ coef[:-1] + coef[-1]
        span = raw.max() - raw.min()
        lo = raw.min() - margin * span
        hi = raw.max() + margin * span
        return cls(coef[:-1], float(coef[-1]), float(lo), float(hi))

    def raw(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(x) @ self.weights + self.intercept

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.clip((self.raw(x) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "intercept": self.intercept,
                "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "UnitIntervalModel":
        return cls(np.asarray(d["weights"]), d["intercept"], d["lo"], d["hi"])


def toy_conditional_expectation(model_f, x_t: np.ndarray, c: Coalition,
                                rng: np.random.Generator,
                                n_grid: int = 200_000) -> float:
    """Ground-truth E[f(x) | observed coordinates of x_t] for the toy process.

    Conditioning goes through the latent time variable: a dense uniform grid
    of t values is weighted by the Gaussian likelihood of the observed
    coordinates (kernel bandwidth equal to the generative noise sigma),
    masked coordinates are redrawn from the process, and f is averaged.
    """
    sigma = math.sqrt(TOY_NOISE_VAR)
    t = rng.uniform(0.0, 10.0, size=n_grid)
    clean = np.stack([np.sin(i * np.pi * t) for i in (1, 2, 3)], axis=1)
    obs = ~c.mask_array
    if obs.any():
        resid = clean[:, obs] - x_t[obs]
        log_w = -0.5 * np.sum((resid / sigma) ** 2, axis=1)
        w = np.exp(log_w - logsumexp_np(log_w))
    else:
        w = np.full(n_grid, 1.0 / n_grid)
    x = clean + rng.normal(0.0, sigma, size=clean.shape)
    x[:, obs] = x_t[obs]
    f = np.asarray(model_f(x), dtype=np.float64).reshape(-1)
    return float(np.dot(w, f))


@dataclass
class BoundToyConfig:
    n_points: int = 5000
    train_fraction: float = 0.8
    seed: int = 0
    ks: tuple = (10, 100, 1000, 10000)
    k_ref: int = 100_000
    epochs: int = 10
    batch_size: int = 64
    k_tilde: int = 16
    n_test_points: int = 2
    gamma_dim: int = 32
    energy_hidden: int = 32


@dataclass
class BoundExperimentReport:
    rows: list = field(default_factory=list)  # dicts: k, coalition, errors, bound
    epsilon2: dict = field(default_factory=dict)  # coalition -> approx error
    held_out_mse: float = 0.0
    model: UnitIntervalModel | None = None
    energy: EnergyModel | None = None
    proposal: ProposalNetwork | None = None

    def statistical_by_k(self) -> dict:
        out: dict[int, list] = {}
        for row in self.rows:
            out.setdefault(row["k"], []).append(row["statistical_error"])
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def loglog_slope(self) -> float:
        by_k = self.statistical_by_k()
        ks = np.log10(np.array(list(by_k.keys()), dtype=np.float64))
        errs = np.log10(np.maximum(np.array(list(by_k.values())), 1e-300))
        slope, _ = np.polyfit(ks, errs, 1)
        return float(slope)


def _pool_estimates(model_f, energy: EnergyModel, proposal: ProposalNetwork,
                    x_t: np.ndarray, c: Coalition, ks, k_ref: int,
                    rng: np.random.Generator):
    """Large-K limit and per-K mean absolute deviation from one draw pool.

    Draws ``k_ref`` weighted predictions once; the limit is the
    self-normalized average over the whole pool, and the statistical error
    for each K is the mean absolute deviation of disjoint K-sized chunk
    estimates from the limit.
    """
    values, log_q, gamma = sample_proposal(proposal, x_t, c, k_ref, rng)
    assembled = np.repeat(x_t.reshape(1, -1), k_ref, axis=0)
    assembled[:, c.mask_array] = values
    g = energy.energy_np(assembled, gamma)
    log_w = -g - log_q
    w = np.exp(log_w - log_w.max())
    f = np.asarray(model_f(assembled), dtype=np.float64).reshape(-1)
    limit = float(np.dot(w, f) / w.sum())
    stat = {}
    for k in ks:
        n_chunks = k_ref // k
        wf = (w * f)[: n_chunks * k].reshape(n_chunks, k)
        ws = w[: n_chunks * k].reshape(n_chunks, k)
        chunk = wf.sum(axis=1) / ws.sum(axis=1)
        stat[k] = float(np.mean(np.abs(chunk - limit)))
    return limit, stat


def toy_bound_experiment(cfg: BoundToyConfig) -> BoundExperimentReport:
    """Check the Monte Carlo error bound on the periodic-signal toy task.

    Trains the regression model and the energy/proposal pair on the first
    80% of the data; on held-out points, for every coalition with at least
    one masked feature, compares per-K statistical and approximation errors
    of the conditional-expectation estimate against
    sqrt(pi)/sqrt(2K) + epsilon2_hat.
    """
    rng = np.random.default_rng(cfg.seed)
    x, y, _ = generate_toy_data(cfg.n_points, rng)
    n_train = int(cfg.train_fraction * cfg.n_points)
    x_train, y_train = x[:n_train], y[:n_train]
    x_test, y_test = x[n_train:], y[n_train:]

    model = UnitIntervalModel.fit(x_train, y_train)
    held_out_mse = float(np.mean((model.raw(x_test) - y_test) ** 2))

    train_cfg = TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, k_tilde=cfg.k_tilde,
        seed=cfg.seed, gamma_dim=cfg.gamma_dim, energy_hidden=cfg.energy_hidden,
    )
    fit = train(x_train, train_cfg)

    report = BoundExperimentReport(held_out_mse=held_out_mse, model=model,
                                   energy=fit.energy, proposal=fit.proposal)
    d = x.shape[1]
    test_idx = rng.choice(len(x_test), size=cfg.n_test_points, replace=False)
    coalitions = [Coalition.from_mask([bool(bits >> i & 1) for i in range(d)])
                  for bits in range(1, 1 << d)]  # every nonempty masked set
    for ti in test_idx:
        x_t = x_test[ti]
        for c in coalitions:
            limit, stat = _pool_estimates(model, fit.energy, fit.proposal,
                                          x_t, c, cfg.ks, cfg.k_ref, rng)
            truth = toy_conditional_expectation(model, x_t, c, rng)
            eps2 = abs(limit - truth)
            key = f"t{ti}:m{''.join('1' if b else '0' for b in c.mask)}"
            report.epsilon2[key] = eps2
            for k in cfg.ks:
                report.rows.append({
                    "k": int(k),
                    "coalition": key,
                    "statistical_error": stat[k],
                    "approximation_error": eps2,
                    "bound": error_bound(k, eps2),
                })
    return report
