"""Exact dynamic programming on finite MDPs with two critic backups.

The residual backup estimates only the discounted future return,

    C(s,a) <- gamma * sum_s' P(s'|s,a) sum_a' pi(a'|s') (r(s',a') + C(s',a')),

while the standard backup keeps the immediate reward inside the estimate,

    Q(s,a) <- r(s,a) + gamma * sum_s' P(s'|s,a) sum_a' pi(a'|s') Q(s',a').

Both are gamma-contractions, so policy iteration with either converges to
the same optimal policy, with Q* = r + C* entrywise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from arcil.envs import TabularMDP

# greedy ties are broken toward the lowest action index; the tolerance keeps
# tie detection stable across the two backup routes' rounding
TIE_TOL = 1e-8


@dataclass
class TabularPolicy:
    probs: np.ndarray

    def validate(self):
        if np.any(self.probs < 0):
            raise ValueError("policy has negative probabilities")
        if np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("policy rows must sum to 1")
        return self

    @classmethod
    def deterministic(cls, actions, n_actions):
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    def greedy_actions(self):
        return self.probs.argmax(axis=1)

    def __eq__(self, other):
        return isinstance(other, TabularPolicy) and np.array_equal(self.probs, other.probs)


@dataclass
class ValueTable:
    values: np.ndarray
    kind: str  # "q" or "c"

    def validate(self, mdp):
        if self.kind not in ("q", "c"):
            raise ValueError(f"kind must be 'q' or 'c', got {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("value table contains NaN/Inf")
        r_max = float(np.max(np.abs(mdp.reward)))
        if self.kind == "c":
            bound = r_max * mdp.gamma / (1.0 - mdp.gamma)
        else:
            bound = r_max / (1.0 - mdp.gamma)
        if np.max(np.abs(self.values)) > bound + 1e-9:
            raise ValueError(f"{self.kind} values exceed the discount bound {bound}")
        return self


def _max_iterations(mdp, tol, init_span):
    r_max = float(np.max(np.abs(mdp.reward)))
    scale = r_max / (1.0 - mdp.gamma) + init_span + 1.0
    if mdp.gamma == 0.0:
        return 2
    return math.ceil(math.log(tol * (1.0 - mdp.gamma) / scale)
                     / math.log(mdp.gamma)) + 10


def _policy_backup(mdp, policy, table, kind):
    target = mdp.reward + table if kind == "c" else table
    mixed = (policy.probs * target).sum(axis=1)
    boot = mdp.gamma * (mdp.transition @ mixed)
    return boot if kind == "c" else mdp.reward + boot


def _evaluate(mdp, policy, tol, kind, init):
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if mdp.gamma >= 1.0:
        raise ValueError(f"gamma must be < 1, got {mdp.gamma}")
    table = np.zeros_like(mdp.reward) if init is None else np.array(init, dtype=np.float64)
    residuals = []
    limit = _max_iterations(mdp, tol, float(np.max(np.abs(table))))
    for _ in range(limit):
        new = _policy_backup(mdp, policy, table, kind)
        res = float(np.max(np.abs(new - table)))
        residuals.append(res)
        table = new
        if res < tol:
            return ValueTable(table, kind), residuals
    raise RuntimeError(f"policy evaluation did not reach tol={tol} in {limit} iterations")


def evaluate_c(mdp, policy, tol=1e-10, init=None, return_residuals=False):
    """Fixed point of the future-return backup under ``policy``."""
    table, residuals = _evaluate(mdp, policy, tol, "c", init)
    return (table, residuals) if return_residuals else table


def evaluate_q(mdp, policy, tol=1e-10, init=None, return_residuals=False):
    """Fixed point of the full-return backup under ``policy``."""
    table, residuals = _evaluate(mdp, policy, tol, "q", init)
    return (table, residuals) if return_residuals else table


def _greedy(score):
    best = score.max(axis=1, keepdims=True)
    tol = TIE_TOL * np.maximum(1.0, np.abs(best))
    tied = score >= best - tol
    actions = tied.argmax(axis=1)   # first True = lowest tied action index
    return TabularPolicy.deterministic(actions, score.shape[1])


def improve_from_c(mdp, c_table):
    """Greedy policy over r + C, ties broken by lowest action index."""
    if c_table.kind != "c":
        raise ValueError(f"expected a 'c' table, got {c_table.kind!r}")
    return _greedy(mdp.reward + c_table.values)


def improve_from_q(mdp, q_table):
    if q_table.kind != "q":
        raise ValueError(f"expected a 'q' table, got {q_table.kind!r}")
    return _greedy(q_table.values)


@dataclass
class PolicyIterationResult:
    policy: TabularPolicy
    table: ValueTable
    improvement_steps: int
    residual_history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.policy, self.table, self.improvement_steps))


def policy_iteration(mdp, critic_kind="c", tol=1e-10, init_table=None,
                     init_policy=None):
    """Alternate exact evaluation and greedy improvement until the policy
    is unchanged; the value table warm-starts across rounds.

    ``improvement_steps`` counts greedy improvements performed, including
    the final one that confirms convergence.
    """
    if critic_kind not in ("q", "c"):
        raise ValueError(f"critic_kind must be 'q' or 'c', got {critic_kind!r}")
    improve = improve_from_c if critic_kind == "c" else improve_from_q
    policy = (init_policy if init_policy is not None
              else TabularPolicy.deterministic(
                  np.zeros(mdp.n_states, dtype=int), mdp.n_actions))
    table_values = init_table
    history = []
    steps = 0
    while True:
        table, residuals = _evaluate(mdp, policy, tol, critic_kind, table_values)
        table_values = table.values
        history.append(residuals)
        new_policy = improve(mdp, table)
        steps += 1
        if new_policy == policy:
            return PolicyIterationResult(policy, table, steps, history)
        policy = new_policy


# --- independent oracles for proofs-by-computation ---

def policy_value_direct(mdp, policy):
    """V^pi by direct linear solve, independent of the fixed-point route."""
    P_pi = np.einsum("sat,sa->st", mdp.transition, policy.probs)
    r_pi = (policy.probs * mdp.reward).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


def enumerate_optimal_policy(mdp):
    """Exhaustive search over all deterministic policies.

    Returns (best_actions, best_values) where best_values is the pointwise
    maximum of V over the enumeration and best_actions is a policy achieving
    it everywhere; only feasible for tiny MDPs.
    """
    n_s, n_a = mdp.n_states, mdp.n_actions
    all_actions, all_values = [], []
    for idx in range(n_a ** n_s):
        actions = np.array([(idx // n_a ** s) % n_a for s in range(n_s)])
        policy = TabularPolicy.deterministic(actions, n_a)
        all_actions.append(actions)
        all_values.append(policy_value_direct(mdp, policy))
    best_v = np.max(all_values, axis=0)
    for actions, v in zip(all_actions, all_values):
        if np.all(v >= best_v - 1e-9):   # the optimal policy dominates pointwise
            return actions, best_v
    raise RuntimeError("no pointwise-dominating policy found")


def random_mdp(n_states, n_actions, gamma, rng):
    """Dense random MDP: Dirichlet transitions, uniform rewards in [-1, 1]."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMDP(n_states, n_actions, transition, reward, gamma,
                      np.zeros(n_states, dtype=bool)).validate()
