import numpy as np
import pytest

from arcil.envs import TabularMDP, make_gridworld
from arcil.tabular import (
    TabularPolicy, ValueTable, enumerate_optimal_policy, evaluate_c,
    evaluate_q, improve_from_c, improve_from_q, policy_iteration,
    policy_value_direct, random_mdp,
)


def single_loop_mdp(reward=1.0, gamma=0.9):
    P = np.ones((1, 1, 1))
    r = np.full((1, 1), reward)
    return TabularMDP(1, 1, P, r, gamma, np.zeros(1, dtype=bool)).validate()


class TestEvaluate:
    def test_self_loop_c_geometric_series(self):
        mdp = single_loop_mdp()
        policy = TabularPolicy.uniform(1, 1)
        c = evaluate_c(mdp, policy, tol=1e-12)
        assert c.values[0, 0] == pytest.approx(9.0, abs=1e-10)  # gamma/(1-gamma)

    def test_self_loop_q_geometric_series(self):
        mdp = single_loop_mdp()
        policy = TabularPolicy.uniform(1, 1)
        q = evaluate_q(mdp, policy, tol=1e-12)
        assert q.values[0, 0] == pytest.approx(10.0, abs=1e-10)  # 1/(1-gamma)

    def test_zero_rewards_zero_values(self):
        mdp = single_loop_mdp(reward=0.0)
        policy = TabularPolicy.uniform(1, 1)
        assert not evaluate_c(mdp, policy).values.any()
        assert not evaluate_q(mdp, policy).values.any()

    def test_q_equals_r_plus_c(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            mdp = random_mdp(5, 3, 0.9, rng)
            policy = TabularPolicy(rng.dirichlet(np.ones(3), size=5))
            tol = 1e-11
            c = evaluate_c(mdp, policy, tol=tol)
            q = evaluate_q(mdp, policy, tol=tol)
            assert np.max(np.abs(q.values - (mdp.reward + c.values))) < 2 * tol * 10

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(4)
        mdp = random_mdp(4, 3, 0.85, rng)
        policy = TabularPolicy(rng.dirichlet(np.ones(3), size=4))
        q = evaluate_q(mdp, policy, tol=1e-12)
        v_direct = policy_value_direct(mdp, policy)
        v_from_q = (policy.probs * q.values).sum(axis=1)
        assert np.max(np.abs(v_direct - v_from_q)) < 1e-9

    def test_contraction_per_iteration(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            mdp = random_mdp(4, 3, 0.7, rng)
            policy = TabularPolicy(rng.dirichlet(np.ones(3), size=4))
            _, residuals = evaluate_c(mdp, policy, tol=5e-3, return_residuals=True)
            res = np.array(residuals)
            ratios = res[1:] / res[:-1]
            assert np.all(ratios <= mdp.gamma + 1e-12)

    def test_residuals_monotone_to_tight_tol(self):
        rng = np.random.default_rng(12)
        mdp = random_mdp(4, 3, 0.9, rng)
        policy = TabularPolicy(rng.dirichlet(np.ones(3), size=4))
        _, residuals = evaluate_c(mdp, policy, tol=1e-10, return_residuals=True)
        res = np.array(residuals)
        assert np.all(res[1:] <= res[:-1] * (1 + 1e-9))

    def test_bad_inputs(self):
        mdp = single_loop_mdp()
        policy = TabularPolicy.uniform(1, 1)
        with pytest.raises(ValueError):
            evaluate_c(mdp, policy, tol=0.0)
        bad = single_loop_mdp()
        bad.gamma = 1.0
        with pytest.raises(ValueError):
            evaluate_c(bad, policy)

    def test_value_table_bounds(self):
        mdp = single_loop_mdp()
        policy = TabularPolicy.uniform(1, 1)
        evaluate_c(mdp, policy).validate(mdp)
        evaluate_q(mdp, policy).validate(mdp)


class TestImprove:
    def test_zero_c_greedy_over_reward(self):
        mdp = make_gridworld(2, 1, goal=(1, 0))
        c = ValueTable(np.zeros((2, 4)), "c")
        policy = improve_from_c(mdp, c)
        assert policy.greedy_actions()[0] == 1  # "right" into the goal

    def test_two_by_one_converged(self):
        mdp = make_gridworld(2, 1, goal=(1, 0))
        result = policy_iteration(mdp, "c")
        assert result.policy.greedy_actions()[0] == 1

    def test_kind_mismatch_rejected(self):
        mdp = single_loop_mdp()
        with pytest.raises(ValueError):
            improve_from_c(mdp, ValueTable(np.zeros((1, 1)), "q"))
        with pytest.raises(ValueError):
            improve_from_q(mdp, ValueTable(np.zeros((1, 1)), "c"))

    def test_matches_greedy_over_q(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(6, 4, 0.9, rng)
        policy = TabularPolicy(rng.dirichlet(np.ones(4), size=6))
        c = evaluate_c(mdp, policy, tol=1e-12)
        q = evaluate_q(mdp, policy, tol=1e-12)
        assert improve_from_c(mdp, c) == improve_from_q(mdp, q)


class TestPolicyIteration:
    def test_single_state_converges_in_one_step(self):
        mdp = single_loop_mdp()
        result = policy_iteration(mdp, "c")
        assert result.improvement_steps == 1

    def test_grid_c_and_q_identical(self):
        mdp = make_gridworld(5, 5, goal=(4, 4))
        rc = policy_iteration(mdp, "c")
        rq = policy_iteration(mdp, "q")
        assert rc.policy == rq.policy
        assert rc.improvement_steps == rq.improvement_steps
        # Q* = r + C* entrywise
        assert np.max(np.abs(rq.table.values - (mdp.reward + rc.table.values))) < 1e-9

    def test_grid_c_zero_adjacent_to_goal(self):
        mdp = make_gridworld(5, 5, goal=(4, 4))
        result = policy_iteration(mdp, "c")
        actions = result.policy.greedy_actions()
        for s in [4 * 5 + 3, 3 * 5 + 4]:  # left of goal, above goal
            assert abs(result.table.values[s, actions[s]]) < 1e-9
            assert mdp.reward[s, actions[s]] == 1.0

    def test_random_mdps_match_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            mdp = random_mdp(4, 3, 0.9, rng)
            result = policy_iteration(mdp, "c")
            best_actions, best_v = enumerate_optimal_policy(mdp)
            v_pi = policy_value_direct(mdp, result.policy)
            assert np.max(np.abs(v_pi - best_v)) < 1e-8
            assert np.array_equal(result.policy.greedy_actions(), best_actions)

    def test_uniqueness_from_random_inits(self):
        rng = np.random.default_rng(5)
        mdp = random_mdp(4, 3, 0.9, rng)
        tol = 1e-10
        reference = policy_iteration(mdp, "c", tol=tol)
        for k in range(5):
            init = rng.uniform(-5, 5, size=(4, 3))
            init_policy = TabularPolicy.deterministic(rng.integers(0, 3, size=4), 3)
            result = policy_iteration(mdp, "c", tol=tol, init_table=init,
                                      init_policy=init_policy)
            assert np.max(np.abs(result.table.values - reference.table.values)) < 10 * tol
            assert result.policy == reference.policy

    def test_monotone_improvement(self):
        rng = np.random.default_rng(9)
        mdp = random_mdp(5, 3, 0.9, rng)
        policy = TabularPolicy.deterministic(np.zeros(5, dtype=int), 3)
        prev_v = policy_value_direct(mdp, policy)
        for _ in range(10):
            c = evaluate_c(mdp, policy, tol=1e-12)
            policy = improve_from_c(mdp, c)
            v = policy_value_direct(mdp, policy)
            assert np.all(v >= prev_v - 1e-9)
            prev_v = v

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            policy_iteration(single_loop_mdp(), "v")

    def test_result_unpacks(self):
        policy, table, steps = policy_iteration(single_loop_mdp(), "q")
        assert isinstance(policy, TabularPolicy)
        assert table.kind == "q"
        assert steps == 1
