"""Shapley value computation.

Exact enumeration over coalitions, a contribution function backed by the
trained energy/proposal pair, a permutation-sampling baseline, a weighted
least squares (kernel) baseline, and closed-form checks of the coalition
covariance matrix used in the kernel estimator's analysis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyModel, logsumexp_np
from .errors import (CapacityError, DimensionMismatchError,
                     NumericOverflowError, UsageError)
from .masking import Coalition
from .proposal import ProposalNetwork, sample_proposal

EXACT_ENUMERATION_LIMIT = 20
KERNEL_ENUMERATION_LIMIT = 14


@dataclass
class ContributionOracle:
    """A game: callable v mapping a coalition of observed features to a scalar."""

    v: object
    d: int

    def __call__(self, c: Coalition) -> float:
        return float(self.v(c))


@dataclass
class AttributionResult:
    estimator: str
    sample_id: str
    phi0: float
    phi: np.ndarray
    budget: int
    seed: int | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "sample_id": self.sample_id,
            "phi0": float(self.phi0),
            "phi": [float(p) for p in self.phi],
            "budget": int(self.budget),
            "seed": None if self.seed is None else int(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "AttributionResult":
        return cls(d["estimator"], d["sample_id"], d["phi0"],
                   np.asarray(d["phi"]), d["budget"], d.get("seed"))


def shapley_weight(s: int, d: int) -> float:
    """Coalition weight s!(d-s-1)!/d! in the Shapley average."""
    if not 0 <= s <= d - 1:
        raise UsageError(f"subset size {s} out of range for {d} features")
    if d <= 20:
        return math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d)
    log_w = math.lgamma(s + 1) + math.lgamma(d - s) - math.lgamma(d + 1)
    return math.exp(log_w)


def _observed_coalition_from_bits(d: int, bits: int) -> Coalition:
    observed = [i for i in range(d) if bits >> i & 1]
    return Coalition.from_observed_indices(d, observed)


def exact_shapley(oracle: ContributionOracle, sample_id: str = "",
                  seed: int | None = None) -> AttributionResult:
    """Shapley values by full enumeration of all 2^d coalitions."""
    d = oracle.d
    if d < 1:
        raise UsageError(f"need at least one feature, got {d}")
    if d > EXACT_ENUMERATION_LIMIT:
        raise CapacityError(
            f"exact enumeration supports at most {EXACT_ENUMERATION_LIMIT} "
            f"features, got {d}; use a sampling estimator instead"
        )
    values = np.empty(1 << d)
    for bits in range(1 << d):
        values[bits] = oracle(_observed_coalition_from_bits(d, bits))
    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for sub in range(1 << (d - 1)):
            bits = 0
            for pos, j in enumerate(others):
                if sub >> pos & 1:
                    bits |= 1 << j
            s = bin(bits).count("1")
            w = shapley_weight(s, d)
            phi[i] += w * (values[bits | (1 << i)] - values[bits])
    return AttributionResult("exact", sample_id, float(values[0]), phi,
                             budget=1 << d, seed=seed)


# -- energy-model contribution function ---------------------------------

def contribution_emshap(model_f, energy: EnergyModel, proposal: ProposalNetwork,
                        x_t, c: Coalition, k: int,
                        rng: np.random.Generator) -> float:
    """Estimate v(S) = E[f(x) | observed features of x_t].

    Masked features are drawn from the proposal and reweighted by
    exp(-g)/q, self-normalized so the unknown partition constant cancels.
    A fully observed coalition returns f(x_t) exactly.
    """
    if k < 1:
        raise UsageError(f"need k >= 1, got {k}")
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (c.d,):
        raise DimensionMismatchError("sample length", (c.d,), x_t.shape)
    if c.n_masked == 0:
        return float(model_f(x_t.reshape(1, -1))[0])
    values, log_q, gamma = sample_proposal(proposal, x_t, c, k, rng)
    assembled = np.repeat(x_t.reshape(1, -1), k, axis=0)
    assembled[:, c.mask_array] = values
    g = energy.energy_np(assembled, gamma)
    log_w = -g - log_q
    if not np.isfinite(log_w).all():
        raise NumericOverflowError("non-finite importance weight in contribution estimate")
    w = np.exp(log_w - logsumexp_np(log_w))
    f_vals = np.asarray(model_f(assembled), dtype=np.float64).reshape(-1)
    if f_vals.shape != (k,):
        raise DimensionMismatchError("model output length", (k,), f_vals.shape)
    if not np.isfinite(f_vals).all():
        raise NumericOverflowError("non-finite model output in contribution estimate")
    return float(np.dot(w, f_vals))


def emshap_attribute(model_f, energy: EnergyModel, proposal: ProposalNetwork,
                     x_t, k: int, rng: np.random.Generator,
                     sample_id: str = "", seed: int | None = None,
                     n_permutations: int = 256) -> AttributionResult:
    """Shapley attribution with the energy-model contribution function.

    Up to 20 features the coalition sum is exact (each contribution value
    estimated once with budget k); beyond that, permutations are sampled.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.shape[0]
    if d <= EXACT_ENUMERATION_LIMIT:
        cache: dict[int, float] = {}

        def v_bits(bits: int) -> float:
            if bits not in cache:
                c = _observed_coalition_from_bits(d, bits)
                cache[bits] = contribution_emshap(model_f, energy, proposal,
                                                  x_t, c, k, rng)
            return cache[bits]

        oracle = ContributionOracle(
            lambda c: v_bits(sum(1 << i for i in c.observed_indices)), d)
        result = exact_shapley(oracle, sample_id, seed)
        return AttributionResult("emshap", sample_id, result.phi0, result.phi,
                                 budget=k, seed=seed)

    phi = np.zeros(d)
    phi0 = None
    for _ in range(n_permutations):
        order = rng.permutation(d)
        bits = 0
        prev = contribution_emshap(model_f, energy, proposal, x_t,
                                   _observed_coalition_from_bits(d, bits), k, rng)
        if phi0 is None:
            phi0 = prev
        for i in order:
            bits |= 1 << int(i)
            c = _observed_coalition_from_bits(d, bits)
            cur = contribution_emshap(model_f, energy, proposal, x_t, c, k, rng)
            phi[i] += cur - prev
            prev = cur
    phi /= n_permutations
    return AttributionResult("emshap", sample_id, float(phi0), phi,
                             budget=k * n_permutations, seed=seed)


# -- baselines ----------------------------------------------------------

def sampling_shap(model_f, background: np.ndarray, x_t, n_permutations: int,
                  rng: np.random.Generator, sample_id: str = "",
                  seed: int | None = None) -> AttributionResult:
    """Permutation-sampling estimator with marginal feature removal.

    For each random permutation, absent features take their values from one
    randomly drawn background row and each feature is credited with its
    marginal change in the model output when inserted.
    """
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise UsageError("background set must be nonempty")
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.shape[0]
    if background.shape[1] != d:
        raise DimensionMismatchError("background width", d, background.shape[1])
    if n_permutations < 1:
        raise UsageError(f"need n_permutations >= 1, got {n_permutations}")

    phi = np.zeros(d)
    for _ in range(n_permutations):
        z = background[rng.integers(background.shape[0])]
        order = rng.permutation(d)
        # row j holds x_t on the first j features of the permutation
        rows = np.repeat(z.reshape(1, -1), d + 1, axis=0)
        for j, i in enumerate(order):
            rows[j + 1:, i] = x_t[i]
        out = np.asarray(model_f(rows), dtype=np.float64).reshape(-1)
        phi[order] += out[1:] - out[:-1]
    phi /= n_permutations
    phi0 = float(np.mean(np.asarray(model_f(background), dtype=np.float64)))
    return AttributionResult("sampling", sample_id, phi0, phi,
                             budget=n_permutations, seed=seed)


def shapley_kernel_weight(s: int, d: int) -> float:
    """Least-squares coalition weight (d-1) / (C(d,s) * s * (d-s))."""
    if not 0 < s < d:
        raise UsageError(f"kernel weight undefined for subset size {s} of {d}")
    return (d - 1) / (math.comb(d, s) * s * (d - s))


@dataclass
class ShapleyKernelSystem:
    """Weighted least squares system whose solution is the attribution."""

    b: np.ndarray          # (d+1, n_coalitions); row 0 is the intercept
    psi: np.ndarray        # (n_coalitions,) kernel weights
    v: np.ndarray          # (n_coalitions,) contribution values
    beta: np.ndarray = field(default=None)  # (d+1,); beta[0] is the intercept


def _marginal_contribution(model_f, background: np.ndarray, x_t: np.ndarray,
                           masks: np.ndarray) -> np.ndarray:
    """v(S) per row of ``masks`` (True = observed) by background averaging."""
    n_bg = background.shape[0]
    out = np.empty(masks.shape[0])
    for r, m in enumerate(masks):
        rows = background.copy()
        rows[:, m] = x_t[m]
        out[r] = float(np.mean(np.asarray(model_f(rows), dtype=np.float64)))
    return out


def kernel_shap(model_f, background: np.ndarray, x_t,
                subset_budget: int | None = None,
                rng: np.random.Generator | None = None,
                sample_id: str = "", seed: int | None = None,
                ridge: float = 1e-10) -> AttributionResult:
    """Weighted least squares attribution with the Shapley kernel.

    Contribution values use marginal removal: absent features are averaged
    over the background set. The intercept is pinned to v(empty set) and the
    coefficients are constrained to sum to v(D) - v(empty set), so
    efficiency holds by construction. Interior coalitions are fully
    enumerated up to 14 features, sampled by kernel weight beyond that.
    """
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise UsageError("background set must be nonempty")
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.shape[0]
    if background.shape[1] != d:
        raise DimensionMismatchError("background width", d, background.shape[1])

    if subset_budget is None:
        if d > KERNEL_ENUMERATION_LIMIT:
            raise CapacityError(
                f"full coalition enumeration supports at most "
                f"{KERNEL_ENUMERATION_LIMIT} features; pass subset_budget"
            )
        interior = np.array([[bool(bits >> i & 1) for i in range(d)]
                             for bits in range(1, (1 << d) - 1)])
    else:
        if subset_budget < d + 2:
            raise UsageError(f"subset_budget must be >= {d + 2}, got {subset_budget}")
        if rng is None:
            rng = np.random.default_rng(0)
        sizes = np.arange(1, d)
        size_w = np.array([shapley_kernel_weight(s, d) * math.comb(d, s)
                           for s in sizes])
        size_w /= size_w.sum()
        interior = np.zeros((subset_budget, d), dtype=bool)
        for r in range(subset_budget):
            s = int(rng.choice(sizes, p=size_w))
            interior[r, rng.choice(d, size=s, replace=False)] = True

    sizes = interior.sum(axis=1)
    psi = np.array([shapley_kernel_weight(int(s), d) for s in sizes])
    v = _marginal_contribution(model_f, background, x_t, interior)
    v_empty = float(np.mean(np.asarray(model_f(background), dtype=np.float64)))
    v_full = float(np.asarray(model_f(x_t.reshape(1, -1)), dtype=np.float64)[0])
    delta = v_full - v_empty

    z = interior.astype(np.float64)
    system = ShapleyKernelSystem(
        b=np.vstack([np.ones(len(v)), z.T]), psi=psi, v=v)

    # eliminate the last coefficient via the efficiency constraint, then
    # solve the weighted normal equations for the rest
    a = z[:, :-1] - z[:, -1:]
    y = v - v_empty - z[:, -1] * delta
    aw = a * psi[:, None]
    lhs = aw.T @ a
    rhs = aw.T @ y
    try:
        head = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        head = np.linalg.solve(lhs + ridge * np.eye(d - 1), rhs)
    phi = np.append(head, delta - head.sum())
    system.beta = np.concatenate([[v_empty], phi])
    budget = interior.shape[0] + 2
    return AttributionResult("kernel", sample_id, v_empty, phi,
                             budget=budget, seed=seed)


# -- coalition covariance matrix theory ---------------------------------

def alpha(d: int) -> float:
    """Off-diagonal entry of the coalition covariance matrix."""
    if d < 2:
        raise UsageError(f"need d >= 2, got {d}")
    num = sum((i - 1) / (d + 1 - i) for i in range(2, d + 1))
    den = sum(1.0 / (i * (d + 1 - i)) for i in range(1, d + 1))
    return num / den / (d * (d + 1))


def build_sigma_star(d: int) -> np.ndarray:
    """(d+1) x (d+1) matrix with 1/2 diagonal and alpha(d) off-diagonal."""
    a = alpha(d)
    m = d + 1
    return (0.5 - a) * np.eye(m) + a * np.ones((m, m))


def sigma_star_inverse_check(d: int) -> float:
    """Max-abs deviation of sigma_star times its closed-form inverse from I.

    The closed form is kappa*I + omega*J with kappa = 1/(1/2 - alpha) and
    omega = alpha / ((alpha - 1/2) * (m*alpha - alpha + 1/2)), where m is
    the matrix dimension d + 1.
    """
    a = alpha(d)
    m = d + 1
    kappa = 1.0 / (0.5 - a)
    omega = a / ((a - 0.5) * (m * a - a + 0.5))
    inv = kappa * np.eye(m) + omega * np.ones((m, m))
    return float(np.max(np.abs(build_sigma_star(d) @ inv - np.eye(m))))
