"""Estimator-style explainer wrappers around the functional attribution API.

Each explainer follows the scikit-learn convention: constructor arguments
are stored verbatim, ``fit(X)`` learns whatever state the estimator needs
(background statistics or the energy/proposal pair), and ``explain(X)``
returns one AttributionResult per row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .masking import Coalition
from .shapley import (AttributionResult, ContributionOracle, emshap_attribute,
                      exact_shapley, kernel_shap, sampling_shap)
from .trainer import TrainConfig, train


class _ExplainerBase(BaseEstimator):
    """Shared plumbing: fitted-state check and per-row iteration."""

    def explain(self, x) -> list[AttributionResult]:
        if not hasattr(self, "n_features_in_"):
            raise RuntimeError(f"{type(self).__name__} is not fitted; call fit first")
        x = check_array(x, dtype=np.float64)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {x.shape[1]}")
        return [self._explain_row(row, str(i)) for i, row in enumerate(x)]

    def attributions(self, x) -> np.ndarray:
        """(n, d) matrix of per-feature attributions."""
        return np.vstack([r.phi for r in self.explain(x)])


class EmshapExplainer(_ExplainerBase):
    """Attribution with the trained conditional energy model.

    ``model`` is a callable mapping an (n, d) array to (n,) outputs in [0, 1].
    """

    def __init__(self, model=None, epochs=10, batch_size=64, learning_rate=1e-3,
                 k=256, k_tilde=32, zeta_min=0.2, zeta_max=0.8,
                 gamma_dim=32, energy_hidden=32, seed=0):
        self.model = model
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.k = k
        self.k_tilde = k_tilde
        self.zeta_min = zeta_min
        self.zeta_max = zeta_max
        self.gamma_dim = gamma_dim
        self.energy_hidden = energy_hidden
        self.seed = seed

    def fit(self, x, y=None):
        x = check_array(x, dtype=np.float64)
        cfg = TrainConfig(
            epochs=self.epochs, batch_size=min(self.batch_size, x.shape[0]),
            learning_rate=self.learning_rate, k_tilde=self.k_tilde,
            zeta_min=self.zeta_min, zeta_max=self.zeta_max, seed=self.seed,
            gamma_dim=self.gamma_dim, energy_hidden=self.energy_hidden,
        )
        self.report_ = train(x, cfg)
        self.energy_ = self.report_.energy
        self.proposal_ = self.report_.proposal
        self.n_features_in_ = x.shape[1]
        return self

    def _explain_row(self, row, sample_id):
        rng = np.random.default_rng((self.seed, int(sample_id)))
        return emshap_attribute(self.model, self.energy_, self.proposal_, row,
                                self.k, rng, sample_id=sample_id, seed=self.seed)


class SamplingShapExplainer(_ExplainerBase):
    """Permutation-sampling attribution with a background dataset."""

    def __init__(self, model=None, n_permutations=500, seed=0):
        self.model = model
        self.n_permutations = n_permutations
        self.seed = seed

    def fit(self, x, y=None):
        self.background_ = check_array(x, dtype=np.float64)
        self.n_features_in_ = self.background_.shape[1]
        return self

    def _explain_row(self, row, sample_id):
        rng = np.random.default_rng((self.seed, int(sample_id)))
        return sampling_shap(self.model, self.background_, row,
                             self.n_permutations, rng, sample_id=sample_id,
                             seed=self.seed)


class KernelShapExplainer(_ExplainerBase):
    """Weighted least squares attribution with a background dataset."""

    def __init__(self, model=None, subset_budget=None, seed=0):
        self.model = model
        self.subset_budget = subset_budget
        self.seed = seed

    def fit(self, x, y=None):
        self.background_ = check_array(x, dtype=np.float64)
        self.n_features_in_ = self.background_.shape[1]
        return self

    def _explain_row(self, row, sample_id):
        rng = np.random.default_rng((self.seed, int(sample_id)))
        return kernel_shap(self.model, self.background_, row,
                           subset_budget=self.subset_budget, rng=rng,
                           sample_id=sample_id, seed=self.seed)


class ExactShapleyExplainer(_ExplainerBase):
    """Exact enumeration with a marginal-removal contribution oracle.

    v(S) averages the model over background rows with the observed features
    pinned to the explained sample.
    """

    def __init__(self, model=None, seed=0):
        self.model = model
        self.seed = seed

    def fit(self, x, y=None):
        self.background_ = check_array(x, dtype=np.float64)
        self.n_features_in_ = self.background_.shape[1]
        return self

    def _explain_row(self, row, sample_id):
        background = self.background_

        def v(c: Coalition) -> float:
            rows = background.copy()
            rows[:, ~c.mask_array] = row[~c.mask_array]
            return float(np.mean(np.asarray(self.model(rows), dtype=np.float64)))

        oracle = ContributionOracle(v, self.n_features_in_)
        return exact_shapley(oracle, sample_id=sample_id, seed=self.seed)
