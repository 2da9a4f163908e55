"""Training loop, loss terms, Adam, determinism and divergence handling."""

import numpy as np
import pytest

from emshap.autodiff import Tensor, as_tensor, backward
from emshap.energy import EnergyModel
from emshap.errors import ConfigError, TrainingDivergedError, UsageError
from emshap.masking import Coalition, MaskSchedule
from emshap.proposal import ProposalNetwork, sample_from_stats, teacher_unroll
from emshap.trainer import (AdamState, TrainConfig, adam_update,
                            all_parameters, group_loss, loss_step, nll_loss,
                            train)


def make_models(d=3, gamma_dim=4, hidden=4, seed=0):
    rng = np.random.default_rng(seed)
    return (EnergyModel.create(rng, d, gamma_dim, hidden=hidden),
            ProposalNetwork(d, gamma_dim, rng=rng))


class TestTrainConfig:
    def test_round_trip(self):
        cfg = TrainConfig(epochs=5, k_tilde=8, seed=3)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"epochs": 1, "bogus": 2})

    @pytest.mark.parametrize("field,value", [
        ("epochs", -1), ("batch_size", 0), ("learning_rate", 0.0),
        ("learning_rate", 2.0), ("k_tilde", 0), ("zeta_min", -0.1),
        ("zeta_max", 1.2), ("gamma_dim", 0),
    ])
    def test_validation(self, field, value):
        cfg = TrainConfig(epochs=1)
        setattr(cfg, field, value)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_rejects_inverted_zeta(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=1, zeta_min=0.9, zeta_max=0.1).validate()


class TestLoss:
    def test_loss_arithmetic(self):
        # g = 1, Z = e, log q = -0.918939 -> 1 + 1 + 0.918939
        assert nll_loss(1.0, 1.0, -0.918939) == pytest.approx(2.918939)

    def test_proposal_nll_at_mean_unit_sigma(self):
        """Standard normal scored at its own mean: 0.918939 per feature."""
        c = Coalition.from_mask([True, False])
        stats_mu = Tensor(np.array([0.3]))
        stats_raw = Tensor(np.array([0.0]))
        from emshap.proposal import TeacherStats, log_q_of_values
        stats = TeacherStats(c, [stats_mu], [stats_raw],
                             Tensor(np.zeros(1)), Tensor(np.zeros((1, 2))))
        log_q = log_q_of_values(stats, np.array([[[0.3]]])).data
        assert -log_q[0, 0] == pytest.approx(0.9189385, abs=1e-6)

    def test_group_loss_value_composed_from_parts(self):
        energy, proposal = make_models()
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3))
        c = Coalition.from_mask([True, False, True])
        stats = teacher_unroll(proposal, x, c)
        samples = sample_from_stats(stats, 6, np.random.default_rng(2))
        loss, m = group_loss(energy, proposal, x, c, 6, samples=samples)
        assert m == 2
        # recompute the three terms independently; the partition samples are
        # scored against the teacher-step Gaussians they were drawn from
        from emshap.energy import logsumexp_np
        from emshap.proposal import log_q_of_values
        g_data = energy.energy_np(x, stats.gamma.data)
        all_log_q = log_q_of_values(stats, samples).data
        expected = 0.0
        for i in range(2):
            vals = samples[i]
            assembled = np.repeat(x[i:i+1], 6, axis=0)
            assembled[:, c.mask_array] = vals
            g_s = energy.energy_np(assembled, np.repeat(stats.gamma.data[i:i+1], 6, axis=0))
            log_z = logsumexp_np(-g_s - all_log_q[i]) - np.log(6)
            expected += nll_loss(g_data[i], log_z, stats.log_q_data.data[i])
        assert loss.item() == pytest.approx(expected, abs=1e-9)

    def test_loss_step_requires_matching_coalitions(self):
        energy, proposal = make_models()
        with pytest.raises(UsageError):
            loss_step(np.zeros((2, 3)), energy, proposal,
                      [Coalition.from_mask([True, False, False])], 4,
                      np.random.default_rng(0))

    def test_loss_step_rejects_empty_masked_set(self):
        energy, proposal = make_models()
        with pytest.raises(UsageError):
            group_loss(energy, proposal, np.zeros((1, 3)),
                       Coalition.from_mask([False, False, False]), 4,
                       np.random.default_rng(0))

    def test_full_loss_gradient_matches_finite_differences(self):
        """Frozen samples and frozen sampled densities make the loss a
        deterministic function of the parameters; FD must agree."""
        energy, proposal = make_models(d=3, gamma_dim=4, hidden=4, seed=3)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3))
        c = Coalition.from_mask([True, False, True])
        stats = teacher_unroll(proposal, x, c)
        samples = sample_from_stats(stats, 4, np.random.default_rng(5))
        from emshap.proposal import log_q_of_values
        frozen_log_q = log_q_of_values(stats, samples).data.copy()
        params = all_parameters(energy, proposal)
        loss, _ = group_loss(energy, proposal, x, c, 4, samples=samples,
                             sample_log_q=frozen_log_q)
        grads = backward(loss, params)

        def value():
            l, _ = group_loss(energy, proposal, x, c, 4, samples=samples,
                              sample_log_q=frozen_log_q)
            return l.item()

        eps = 1e-6
        check_rng = np.random.default_rng(6)
        for p, g in zip(params, grads):
            flat = p.data.ravel()
            for i in check_rng.choice(flat.size, size=min(4, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + eps
                fp = value()
                flat[i] = old - eps
                fm = value()
                flat[i] = old
                fd = (fp - fm) / (2 * eps)
                denom = max(abs(fd), abs(g.ravel()[i]), 1e-8)
                assert abs(fd - g.ravel()[i]) / denom < 1e-3


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        state = AdamState.for_params([p])
        adam_update([p], [np.zeros(2)], state, lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_constant_gradient_step_approaches_lr(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = AdamState.for_params([p])
        prev = p.data.copy()
        for _ in range(200):
            prev = p.data.copy()
            adam_update([p], [np.array([3.0])], state, lr=0.01)
        assert abs(prev[0] - p.data[0]) == pytest.approx(0.01, rel=1e-3)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(7)
        p = Tensor(rng.standard_normal(5), requires_grad=True)
        ref = p.data.copy()
        m = np.zeros(5)
        v = np.zeros(5)
        state = AdamState.for_params([p])
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        for t in range(1, 50):
            g = rng.standard_normal(5)
            adam_update([p], [g], state, lr, b1, b2, eps)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref = ref - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            np.testing.assert_allclose(p.data, ref, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        state = AdamState.for_params([p])
        with pytest.raises(UsageError):
            adam_update([p], [np.zeros(3)], state, lr=0.1)


class TestTrain:
    def test_zero_epochs_returns_initial_parameters(self):
        rng = np.random.default_rng(8)
        report = train(rng.standard_normal((64, 3)), TrainConfig(epochs=0, batch_size=32))
        assert report.losses == []
        assert report.zetas == []
        assert report.energy is not None and report.proposal is not None

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(9)
        data = rng.standard_normal((96, 3))
        cfg = TrainConfig(epochs=2, batch_size=32, k_tilde=4, gamma_dim=4,
                          energy_hidden=4, seed=11)
        a = train(data, cfg)
        b = train(data, cfg)
        assert a.losses == b.losses
        assert a.zetas == b.zetas
        for pa, pb in zip(all_parameters(a.energy, a.proposal),
                          all_parameters(b.energy, b.proposal)):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_zeta_trajectory_matches_schedule(self):
        rng = np.random.default_rng(10)
        cfg = TrainConfig(epochs=4, batch_size=32, k_tilde=2, gamma_dim=4,
                          energy_hidden=4, zeta_min=0.3, zeta_max=0.6)
        report = train(rng.standard_normal((32, 3)), cfg)
        from emshap.masking import advance_schedule
        sched = MaskSchedule.for_epochs(0.3, 0.6, 4)
        expected = []
        for _ in range(4):
            expected.append(sched.zeta)
            sched = advance_schedule(sched)
        assert report.zetas == pytest.approx(expected)

    def test_losses_are_finite(self):
        rng = np.random.default_rng(11)
        cfg = TrainConfig(epochs=3, batch_size=32, k_tilde=4, gamma_dim=4,
                          energy_hidden=4)
        report = train(rng.standard_normal((64, 3)), cfg)
        assert all(np.isfinite(l) for l in report.losses)

    def test_learning_on_correlated_gaussian(self):
        """Fixed masking rate: smoothed loss decreases and beats the
        untrained baseline on held-out data."""
        rng = np.random.default_rng(12)
        rho = 0.8
        chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
        data = rng.standard_normal((320, 2)) @ chol.T
        held_out = rng.standard_normal((64, 2)) @ chol.T
        cfg = TrainConfig(epochs=30, batch_size=64, k_tilde=8, gamma_dim=8,
                          energy_hidden=8, zeta_min=0.5, zeta_max=0.5, seed=1)
        report = train(data, cfg)
        smoothed = np.convolve(report.losses, np.ones(5) / 5, mode="valid")
        assert smoothed[-1] < smoothed[0]

        c = Coalition.from_mask([False, True])
        untrained_energy, untrained_proposal = (
            train(data, TrainConfig(epochs=0, batch_size=64, gamma_dim=8,
                                    energy_hidden=8, seed=1)).energy,
            train(data, TrainConfig(epochs=0, batch_size=64, gamma_dim=8,
                                    energy_hidden=8, seed=1)).proposal)
        frozen = np.random.default_rng(2)
        trained_loss, _ = group_loss(report.energy, report.proposal, held_out,
                                     c, 32, rng=frozen)
        frozen = np.random.default_rng(2)
        untrained_loss, _ = group_loss(untrained_energy, untrained_proposal,
                                       held_out, c, 32, rng=frozen)
        assert trained_loss.item() < untrained_loss.item()

    def test_divergence_aborts_with_report(self):
        """Absurdly scaled data drives the proposal NLL past the abort limit."""
        data = np.full((32, 3), 1e6)
        cfg = TrainConfig(epochs=2, batch_size=32, k_tilde=2, gamma_dim=4,
                          energy_hidden=4)
        with pytest.raises(TrainingDivergedError) as err:
            train(data, cfg)
        assert err.value.report is not None

    def test_preconditions(self):
        cfg = TrainConfig(epochs=1, batch_size=64)
        with pytest.raises(UsageError):
            train(np.zeros((8, 3)), cfg)  # fewer rows than batch
        with pytest.raises(UsageError):
            train(np.zeros((64, 1)), cfg)  # single feature
