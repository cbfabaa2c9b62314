import math

import numpy as np
import pytest

from arcil.analysis import (
    SnrInputs, ThresholdUndefinedError, build_adversarial_approx,
    car1d_true_q, car1d_true_q_action_grad, gradient_accuracy_experiment,
    monte_carlo_snr, net_snr, snr_threshold, write_experiment_csv,
)
from arcil.envs import car1d_reward


class TestAdversarialApprox:
    def test_zero_base_function(self):
        approx = build_adversarial_approx(lambda x: np.zeros_like(np.asarray(x)),
                                          epsilon=0.1, big_d=5.0, x0=0.0)
        grid = np.linspace(-3, 3, 10_000)
        assert np.max(np.abs(approx.value(grid))) <= 0.1
        assert approx.grad_error_at_anchor() == pytest.approx(10.0, abs=1e-12)

    def test_linear_base_gradient_gap_is_2d(self):
        approx = build_adversarial_approx(lambda x: x, epsilon=0.01, big_d=7.0,
                                          x0=0.3, f_grad=lambda x: np.ones_like(
                                              np.asarray(x, dtype=float)))
        gap = approx.grad(0.3) - 1.0
        assert gap == pytest.approx(14.0, abs=1e-9)

    def test_sup_error_grid_vs_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            eps = float(rng.uniform(1e-3, 1.0))
            big_d = float(rng.uniform(0.5, 50.0))
            x0 = float(rng.uniform(-2, 2))
            approx = build_adversarial_approx(np.cos, eps, big_d, x0)
            sup = approx.sup_error_on_grid(x0 - 1, x0 + 1, 10_000)
            assert sup <= eps
            assert sup >= 0.9 * eps    # the grid nearly attains the bound
            assert abs(approx.grad_error_at_anchor() - 2 * big_d) < 1e-9

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            build_adversarial_approx(np.sin, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            build_adversarial_approx(np.sin, 0.1, -1.0, 0.0)


class TestSnrAlgebra:
    def test_symmetric_uncorrelated_doubles(self):
        inputs = SnrInputs(s_r=1.0, s_c=1.0, s_rc=0.0, snr_c=3.0)
        assert net_snr(inputs) == pytest.approx(6.0)

    def test_degenerate_reward_free(self):
        inputs = SnrInputs(s_r=0.0, s_c=2.0, s_rc=0.0, snr_c=1.7)
        assert net_snr(inputs) == pytest.approx(1.7)

    def test_case2_boundary_equals_snr_c(self):
        inputs = SnrInputs(s_r=1.0, s_c=2.0, s_rc=-0.5, snr_c=2.5)
        assert net_snr(inputs) == pytest.approx(2.5)

    def test_zero_sc_rejected(self):
        with pytest.raises(ValueError):
            net_snr(SnrInputs(s_r=1.0, s_c=0.0, s_rc=0.0, snr_c=1.0))

    def test_threshold_case1_fraction(self):
        inputs = SnrInputs(s_r=0.5, s_c=1.0, s_rc=0.2, snr_q=4.0)
        assert snr_threshold(inputs) <= 4.0

    def test_threshold_symmetric_half(self):
        inputs = SnrInputs(s_r=1.0, s_c=1.0, s_rc=0.0, snr_q=4.0)
        assert snr_threshold(inputs) == pytest.approx(2.0)

    def test_threshold_case3_exceeds(self):
        inputs = SnrInputs(s_r=0.5, s_c=1.0, s_rc=-0.5, snr_q=4.0)
        assert snr_threshold(inputs) > 4.0

    def test_threshold_undefined(self):
        inputs = SnrInputs(s_r=1.0, s_c=1.0, s_rc=-1.0, snr_q=4.0)
        with pytest.raises(ThresholdUndefinedError):
            snr_threshold(inputs)


class TestMonteCarloSnr:
    def test_zero_noise_reports_infinite(self):
        got = monte_carlo_snr(SnrInputs(1.0, 1.0, 0.0, snr_c=math.inf),
                              100_000, seed=0)
        assert got > 1e6

    def test_matches_formula_symmetric(self):
        inputs = SnrInputs(1.0, 1.0, 0.0, snr_c=1.0)
        got = monte_carlo_snr(inputs, 1_000_000, seed=1)
        assert abs(got - 2.0) < 0.05

    def test_anticorrelated_below_snr_c(self):
        inputs = SnrInputs(1.0, 1.0, -0.75, snr_c=2.0)
        got = monte_carlo_snr(inputs, 1_000_000, seed=2)
        assert got < inputs.snr_c
        assert abs(got - net_snr(inputs)) / net_snr(inputs) < 0.05

    def test_error_shrinks_with_samples(self):
        inputs = SnrInputs(1.0, 1.0, 0.3, snr_c=2.0)
        expected = net_snr(inputs)
        err_small = abs(monte_carlo_snr(inputs, 10_000, seed=3) - expected)
        err_large = abs(monte_carlo_snr(inputs, 1_000_000, seed=3) - expected)
        assert err_large / expected < 0.05
        assert err_large < err_small

    def test_sample_floor_enforced(self):
        with pytest.raises(ValueError):
            monte_carlo_snr(SnrInputs(1.0, 1.0, 0.0, snr_c=1.0), 100, seed=0)

    def test_invalid_cross_term(self):
        with pytest.raises(ValueError):
            monte_carlo_snr(SnrInputs(1.0, 1.0, 5.0, snr_c=1.0), 10_000, seed=0)


class TestCar1dGroundTruth:
    def test_expert_action_maximizes_immediate(self):
        q_on = car1d_true_q(np.array([0.0]), np.array([0.2]))
        q_off = car1d_true_q(np.array([0.0]), np.array([0.05]))
        assert q_on > q_off

    def test_first_term_is_immediate_reward(self):
        s, a = np.array([0.3]), np.array([0.1])
        q_h1 = car1d_true_q(s, a, horizon=1)
        assert q_h1[0] == pytest.approx(car1d_reward(0.3, 0.1))

    def test_gradient_matches_analytic_at_horizon_one(self):
        s, a = np.array([0.4]), np.array([0.12])
        g = car1d_true_q_action_grad(s, a)
        # horizon-50 gradient = immediate part + downstream dependence on s1
        g1 = (car1d_true_q(s, a + 1e-5, horizon=1)
              - car1d_true_q(s, a - 1e-5, horizon=1)) / 2e-5
        analytic = -200.0 * (0.12 - (0.1 * (1 - 0.4) + 0.1))
        assert g1[0] == pytest.approx(analytic, abs=1e-6)
        assert g.shape == (1,)


class TestGradientAccuracyExperiment:
    def test_requires_three_seeds(self):
        with pytest.raises(ValueError):
            gradient_accuracy_experiment([0, 1])

    def test_small_run_structure_and_determinism(self, tmp_path):
        rows1, summary1 = gradient_accuracy_experiment(
            [0, 1, 2], epoch_grid=(0, 20), n_train=128, eval_grid=8)
        rows2, summary2 = gradient_accuracy_experiment(
            [0, 1, 2], epoch_grid=(0, 20), n_train=128, eval_grid=8)
        assert rows1 == rows2
        assert summary1 == summary2
        assert len(rows1) == 2 * 3 * 2   # estimators x seeds x epochs
        p = tmp_path / "rows.csv"
        write_experiment_csv(p, rows1)
        assert p.read_text().splitlines()[0] == "estimator,seed,epoch,value_mae,grad_mae"

    def test_untrained_nets_comparable_errors(self):
        rows, _ = gradient_accuracy_experiment(
            [0, 1, 2], epoch_grid=(0,), n_train=128, eval_grid=8)
        v_q = np.mean([r["value_mae"] for r in rows if r["estimator"] == "q_direct"])
        v_c = np.mean([r["value_mae"] for r in rows if r["estimator"] == "r_plus_c"])
        # both start uninformed: same order of magnitude
        assert 0.2 < v_q / v_c < 5.0
