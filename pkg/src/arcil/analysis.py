"""Numerical verification of the gradient-quality theory.

Three pieces:
  * a constructive counterexample showing a uniformly accurate function
    approximation whose gradient error at a chosen point is arbitrarily
    large (f + eps*sin(b(x-x0)) with b = 2D/eps),
  * the signal-to-noise algebra for decomposed gradient estimates
    (exact reward gradient plus noisy future-return gradient) and a
    Monte-Carlo check of it,
  * the 1D driving experiment comparing a directly fitted full-return
    network against reward + fitted residual network, in value and in
    action-gradient error.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from arcil.envs import car1d_expert, car1d_reward
from arcil.nets import Adam, Mlp


# --- arbitrarily bad gradients from an arbitrarily good approximation ---

@dataclass
class AdversarialApprox:
    """f_hat = f + eps*sin(b(x - x0)) with b = 2D/eps.

    |f_hat - f| <= eps everywhere while f_hat'(x0) - f'(x0) = eps*b = 2D.
    """

    base_fn: callable
    epsilon: float
    big_d: float
    x0: float
    base_grad: callable = None
    b: float = field(init=False)

    def __post_init__(self):
        self.b = 2.0 * self.big_d / self.epsilon

    def perturbation(self, x):
        return self.epsilon * np.sin(self.b * (np.asarray(x, dtype=np.float64) - self.x0))

    def perturbation_grad(self, x):
        return self.epsilon * self.b * np.cos(
            self.b * (np.asarray(x, dtype=np.float64) - self.x0))

    def value(self, x):
        return self.base_fn(x) + self.perturbation(x)

    def grad(self, x):
        if self.base_grad is None:
            raise ValueError("base_grad not supplied")
        return self.base_grad(x) + self.perturbation_grad(x)

    def grad_error_at_anchor(self):
        """f_hat'(x0) - f'(x0), analytically eps * b = 2D."""
        return self.epsilon * self.b

    def sup_error_on_grid(self, lo, hi, n):
        x = np.linspace(lo, hi, n)
        return float(np.max(np.abs(self.value(x) - self.base_fn(x))))


def build_adversarial_approx(f, epsilon, big_d, x0, f_grad=None):
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if big_d <= 0:
        raise ValueError(f"big_d must be positive, got {big_d}")
    return AdversarialApprox(f, float(epsilon), float(big_d), float(x0), f_grad)


# --- SNR algebra for decomposed gradients ---

class ThresholdUndefinedError(ValueError):
    """The SNR comparison denominator vanished; no finite threshold exists."""


@dataclass
class SnrInputs:
    s_r: float            # signal strength of the exact reward gradient
    s_c: float            # signal strength of the future-return gradient
    s_rc: float           # cross term E[grad_r * grad_c], any sign
    snr_c: float = math.inf
    snr_q: float = math.nan

    def validate(self):
        if self.s_r < 0 or self.s_c < 0:
            raise ValueError("signal strengths must be non-negative")
        return self


def net_snr(inputs):
    """SNR of the combined gradient: snr_c * (S_r/S_c + 1 + 2*S_rc/S_c)."""
    inputs.validate()
    if inputs.s_c <= 0:
        raise ValueError("net_snr requires S_c > 0")
    return inputs.snr_c * (inputs.s_r / inputs.s_c + 1.0
                           + 2.0 * inputs.s_rc / inputs.s_c)


def snr_threshold(inputs):
    """Minimum snr_c at which the decomposition beats the direct estimate."""
    inputs.validate()
    if inputs.s_c <= 0:
        raise ValueError("snr_threshold requires S_c > 0")
    denom = inputs.s_r / inputs.s_c + 1.0 + 2.0 * inputs.s_rc / inputs.s_c
    if denom == 0.0:
        raise ThresholdUndefinedError(
            "threshold undefined: net signal strength is zero")
    return inputs.snr_q / denom


def monte_carlo_snr(inputs, n_samples, seed):
    """Empirical net SNR from synthetic correlated gradient samples.

    Draws (g_r, g_c) jointly Gaussian with the specified second moments plus
    independent noise of strength S_c / snr_c on the future-return gradient;
    returns mean((g_r + g_c)^2) / mean(noise^2). Infinite snr_c (no noise)
    reports as inf.
    """
    inputs.validate()
    if n_samples < 10_000:
        raise ValueError("need at least 1e4 samples for a stable estimate")
    cov = np.array([[inputs.s_r, inputs.s_rc], [inputs.s_rc, inputs.s_c]])
    if np.linalg.det(cov) < -1e-12 or inputs.s_rc ** 2 > inputs.s_r * inputs.s_c + 1e-12:
        raise ValueError("cross term violates Cauchy-Schwarz; not a valid covariance")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov + 1e-15 * np.eye(2))
    samples = rng.standard_normal((n_samples, 2)) @ chol.T
    signal = samples[:, 0] + samples[:, 1]
    signal_power = float(np.mean(signal ** 2))
    if not math.isfinite(inputs.snr_c) or inputs.snr_c <= 0:
        return math.inf
    noise_std = math.sqrt(inputs.s_c / inputs.snr_c)
    noise = rng.normal(0.0, noise_std, size=n_samples)
    noise_power = float(np.mean(noise ** 2))
    if noise_power == 0.0:
        return math.inf
    return signal_power / noise_power


# --- the 1D driving gradient-accuracy experiment ---

CAR1D_AGENT_ACTION = 0.15
CAR1D_HORIZON = 50
CAR1D_GAMMA = 0.99
STATE_RANGE = (0.0, 1.0)
ACTION_RANGE = (0.0, 0.3)


def car1d_true_q(states, actions, horizon=CAR1D_HORIZON, gamma=CAR1D_GAMMA):
    """Discounted return of (s, a) then the constant-action agent policy,
    under the position dynamics x <- x + 0.1 * a."""
    s = np.asarray(states, dtype=np.float64).copy()
    a = np.asarray(actions, dtype=np.float64)
    total = car1d_reward(s, a)
    s = s + 0.1 * a
    discount = 1.0
    for _ in range(1, horizon):
        discount *= gamma
        total = total + discount * car1d_reward(s, CAR1D_AGENT_ACTION)
        s = s + 0.1 * CAR1D_AGENT_ACTION
    return total


def car1d_true_q_action_grad(states, actions, h=1e-5):
    """Central finite differences of the rollout return in the action."""
    up = car1d_true_q(states, actions + h)
    dn = car1d_true_q(states, actions - h)
    return (up - dn) / (2.0 * h)


def _fit_value_net(x, y, epochs_grid, eval_fn, rng, hidden=(64, 64),
                   learning_rate=1e-3, batch_size=256):
    """Train on (x, y) and call eval_fn(net) at each checkpoint epoch."""
    net = Mlp([x.shape[1], *hidden, 1], hidden_activation="relu", rng=rng)
    opt = Adam(net, learning_rate)
    results = {}
    max_epoch = max(epochs_grid)
    checkpoints = set(epochs_grid)
    if 0 in checkpoints:
        results[0] = eval_fn(net)
    n = x.shape[0]
    for epoch in range(1, max_epoch + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            cache = net._run(x[idx])
            pred = cache[1][-1][:, 0]
            cot = (2.0 * (pred - y[idx]) / idx.size)[:, None]
            opt.step(net, net.backward_batch(x[idx], cot, cache=cache))
        if epoch in checkpoints:
            results[epoch] = eval_fn(net)
    return net, results


DEFAULT_EPOCH_GRID = tuple(range(0, 1001, 100))


def gradient_accuracy_experiment(seeds, epoch_grid=DEFAULT_EPOCH_GRID,
                                 n_train=1024, eval_grid=32,
                                 horizon=CAR1D_HORIZON, gamma=CAR1D_GAMMA):
    """Fit full-return and residual networks to the 1D driving task and
    report value / action-gradient errors against the rollout ground truth.

    Returns (rows, summary): rows are dicts with keys
    estimator, seed, epoch, value_mae, grad_mae; the summary carries
    per-epoch means and the experiment metadata.
    """
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValueError("need at least 3 seeds")
    epoch_grid = sorted(set(int(e) for e in epoch_grid))

    s_lin = np.linspace(*STATE_RANGE, eval_grid)
    a_lin = np.linspace(*ACTION_RANGE, eval_grid)
    ss, aa = np.meshgrid(s_lin, a_lin, indexing="ij")
    eval_s, eval_a = ss.ravel(), aa.ravel()
    eval_x = np.stack([eval_s, eval_a], axis=1)
    q_true = car1d_true_q(eval_s, eval_a, horizon, gamma)
    dq_true = car1d_true_q_action_grad(eval_s, eval_a)
    r_eval = car1d_reward(eval_s, eval_a)
    dr_eval = -200.0 * (eval_a - car1d_expert(eval_s))

    rows = []
    for seed in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCA7]))
        s_tr = rng.uniform(*STATE_RANGE, size=n_train)
        a_tr = rng.uniform(*ACTION_RANGE, size=n_train)
        x_tr = np.stack([s_tr, a_tr], axis=1)
        q_tr = car1d_true_q(s_tr, a_tr, horizon, gamma)
        c_tr = q_tr - car1d_reward(s_tr, a_tr)

        def eval_q_net(net):
            pred = net.forward_batch(eval_x)[:, 0]
            grad = net.input_grad_batch(eval_x, np.ones((eval_x.shape[0], 1)))[:, 1]
            return (float(np.mean(np.abs(pred - q_true))),
                    float(np.mean(np.abs(grad - dq_true))))

        def eval_c_net(net):
            pred = r_eval + net.forward_batch(eval_x)[:, 0]
            grad = dr_eval + net.input_grad_batch(
                eval_x, np.ones((eval_x.shape[0], 1)))[:, 1]
            return (float(np.mean(np.abs(pred - q_true))),
                    float(np.mean(np.abs(grad - dq_true))))

        _, q_results = _fit_value_net(x_tr, q_tr, epoch_grid, eval_q_net,
                                      np.random.default_rng(
                                          np.random.SeedSequence([int(seed), 1])))
        _, c_results = _fit_value_net(x_tr, c_tr, epoch_grid, eval_c_net,
                                      np.random.default_rng(
                                          np.random.SeedSequence([int(seed), 2])))
        for epoch in epoch_grid:
            rows.append({"estimator": "q_direct", "seed": seed, "epoch": epoch,
                         "value_mae": q_results[epoch][0],
                         "grad_mae": q_results[epoch][1]})
            rows.append({"estimator": "r_plus_c", "seed": seed, "epoch": epoch,
                         "value_mae": c_results[epoch][0],
                         "grad_mae": c_results[epoch][1]})

    summary = {
        "horizon": horizon, "gamma": gamma, "n_train": n_train,
        "eval_grid": eval_grid, "seeds": seeds,
        "state_range": list(STATE_RANGE), "action_range": list(ACTION_RANGE),
        "value_range": float(q_true.max() - q_true.min()),
        "per_epoch_means": {},
    }
    for estimator in ("q_direct", "r_plus_c"):
        means = {}
        for epoch in epoch_grid:
            sel = [r for r in rows if r["estimator"] == estimator
                   and r["epoch"] == epoch]
            means[str(epoch)] = {
                "value_mae": float(np.mean([r["value_mae"] for r in sel])),
                "grad_mae": float(np.mean([r["grad_mae"] for r in sel])),
            }
        summary["per_epoch_means"][estimator] = means
    return rows, summary


def write_experiment_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["estimator", "seed", "epoch", "value_mae", "grad_mae"])
        for r in rows:
            writer.writerow([r["estimator"], r["seed"], r["epoch"],
                             format(r["value_mae"], ".17g"),
                             format(r["grad_mae"], ".17g")])


def write_experiment_summary(path, summary):
    with open(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
