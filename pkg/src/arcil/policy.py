"""Tanh-squashed Gaussian policy with reparameterized sampling.

The network emits [mean | log_std] heads; log_std is hard-clipped to
[-20, 2]. An action is ``scale * tanh(mean + std * xi)`` with xi standard
normal, so every coordinate stays strictly inside (-scale, scale), and the
log-probability carries the tanh change-of-variables correction.

``backward_objective`` implements the pathwise (fixed-noise) gradient of a
per-sample objective through both the action and the log-probability. Under
the reparameterization the Gaussian quadratic term contributes zero gradient,
leaving, per dimension with t = tanh(u):

    d logpi / d mean    = 2 t
    d logpi / d log_std = -1 + 2 t std xi
    d action / d mean    = scale (1 - t^2)
    d action / d log_std = scale (1 - t^2) std xi
"""

import json

import numpy as np

from arcil.nets import Adam, Mlp

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_2 = float(np.log(2.0))


def _log1m_tanh_sq(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (_LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


class SquashedGaussianPolicy:
    def __init__(self, state_dim, action_dim, action_scale, hidden=(64, 64),
                 rng=None, obs_mean=None, obs_std=None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.action_scale = float(action_scale)
        self.net = Mlp([self.state_dim, *hidden, 2 * self.action_dim],
                       hidden_activation="relu", rng=rng)
        self.obs_mean = None if obs_mean is None else np.asarray(obs_mean, dtype=np.float64)
        self.obs_std = None if obs_std is None else np.asarray(obs_std, dtype=np.float64)

    def set_normalizer(self, mean, std):
        self.obs_mean = np.asarray(mean, dtype=np.float64)
        self.obs_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-6)

    def normalize(self, obs):
        if self.obs_mean is None:
            return np.asarray(obs, dtype=np.float64)
        return (np.asarray(obs, dtype=np.float64) - self.obs_mean) / self.obs_std

    def _heads(self, states, cache=None):
        """states are already normalized; returns (mean, log_std, clip_mask, cache)."""
        states = np.atleast_2d(states)
        if cache is None:
            cache = self.net._run(states)
        out = cache[1][-1]
        mean = out[:, :self.action_dim]
        raw = out[:, self.action_dim:]
        clip_mask = ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)).astype(np.float64)
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, clip_mask, cache

    def sample_batch(self, states, rng):
        """Reparameterized actions and exact log-probs for normalized states."""
        mean, log_std, clip_mask, cache = self._heads(states)
        std = np.exp(log_std)
        xi = rng.standard_normal(mean.shape)
        u = mean + std * xi
        t = np.tanh(u)
        actions = self.action_scale * t
        log_prob = np.sum(
            -0.5 * xi * xi - log_std - 0.5 * _LOG_2PI
            - np.log(self.action_scale) - _log1m_tanh_sq(u), axis=1)
        aux = {"xi": xi, "t": t, "std": std, "clip_mask": clip_mask, "cache": cache,
               "states": np.atleast_2d(states)}
        return actions, log_prob, aux

    def deterministic_batch(self, states):
        mean, _, _, _ = self._heads(states)
        return self.action_scale * np.tanh(mean)

    def act(self, obs, deterministic=False, rng=None):
        """Action for one raw observation (normalization applied here)."""
        s = self.normalize(obs)[None, :]
        if deterministic:
            return self.deterministic_batch(s)[0]
        actions, _, _ = self.sample_batch(s, rng)
        return actions[0]

    def log_prob_batch(self, states, actions):
        """log pi(a|s) at given actions; states normalized, |a| < scale."""
        mean, log_std, _, _ = self._heads(states)
        std = np.exp(log_std)
        t = np.asarray(actions, dtype=np.float64) / self.action_scale
        u = np.arctanh(t)
        xi = (u - mean) / std
        return np.sum(
            -0.5 * xi * xi - log_std - 0.5 * _LOG_2PI
            - np.log(self.action_scale) - _log1m_tanh_sq(u), axis=1)

    def backward_objective(self, aux, d_action, d_log_prob):
        """GradTape of sum_b [d_action[b].a_b + d_log_prob[b]*logpi_b] w.r.t.
        the network parameters, holding the sampling noise fixed."""
        t, xi, std = aux["t"], aux["xi"], aux["std"]
        one_m_t2 = 1.0 - t * t
        glp = np.asarray(d_log_prob, dtype=np.float64)[:, None]
        ga = np.asarray(d_action, dtype=np.float64)
        cot_mean = ga * self.action_scale * one_m_t2 + glp * 2.0 * t
        std_xi = std * xi
        cot_log_std = (ga * self.action_scale * one_m_t2 * std_xi
                       + glp * (-1.0 + 2.0 * t * std_xi)) * aux["clip_mask"]
        cot = np.concatenate([cot_mean, cot_log_std], axis=1)
        return self.net.backward_batch(aux["states"], cot, cache=aux["cache"])

    def clone(self):
        twin = SquashedGaussianPolicy.__new__(SquashedGaussianPolicy)
        twin.state_dim = self.state_dim
        twin.action_dim = self.action_dim
        twin.action_scale = self.action_scale
        twin.net = self.net.clone()
        twin.obs_mean = None if self.obs_mean is None else self.obs_mean.copy()
        twin.obs_std = None if self.obs_std is None else self.obs_std.copy()
        return twin

    def save(self, path):
        self.net.save(path)
        meta = {
            "action_scale": self.action_scale,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "obs_mean": None if self.obs_mean is None else self.obs_mean.tolist(),
            "obs_std": None if self.obs_std is None else self.obs_std.tolist(),
        }
        with open(str(path) + ".json", "w") as f:
            f.write(json.dumps(meta, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        net = Mlp.load(path)
        with open(str(path) + ".json") as f:
            meta = json.loads(f.read())
        policy = cls.__new__(cls)
        policy.state_dim = int(meta["state_dim"])
        policy.action_dim = int(meta["action_dim"])
        policy.action_scale = float(meta["action_scale"])
        policy.net = net
        policy.obs_mean = None if meta["obs_mean"] is None else np.array(meta["obs_mean"])
        policy.obs_std = None if meta["obs_std"] is None else np.array(meta["obs_std"])
        return policy


def bc_fit(expert_states, expert_actions, policy, epochs, learning_rate,
           batch_size=256, rng=None):
    """Regress the deterministic policy output on expert actions (MSE).

    ``expert_states`` are raw observations; the policy's normalizer is
    applied. Returns the final full-dataset MSE; zero epochs leaves the
    policy untouched.
    """
    states = np.asarray(expert_states, dtype=np.float64)
    actions = np.asarray(expert_actions, dtype=np.float64)
    if states.shape[0] == 0:
        raise ValueError("expert dataset is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    norm = policy.normalize(states)
    n = states.shape[0]

    def dataset_mse():
        pred = policy.deterministic_batch(norm)
        return float(np.mean((pred - actions) ** 2))

    if epochs <= 0:
        return dataset_mse()
    opt = Adam(policy.net, learning_rate)
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            s, a_star = norm[idx], actions[idx]
            mean, _, _, cache = policy._heads(s)
            t = np.tanh(mean)
            pred = policy.action_scale * t
            d_pred = 2.0 * (pred - a_star) / (idx.size * a_star.shape[1])
            cot_mean = d_pred * policy.action_scale * (1.0 - t * t)
            cot = np.concatenate([cot_mean, np.zeros_like(cot_mean)], axis=1)
            tape = policy.net.backward_batch(s, cot, cache=cache)
            opt.step(policy.net, tape)
    return dataset_mse()
