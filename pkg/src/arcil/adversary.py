"""Discriminator training and the differentiable reward surfaces it induces.

The discriminator is a tanh MLP over concatenated (state, action) with a
scalar logit hard-clipped to [-10, 10]; D(s, a) = sigmoid(logit). Two reward
mappings are supported:

    gail      log D(s, a)                       (strictly negative)
    fmax_rkl  log D - log(1 - D) = logit        (algebraic identity)

Because the logit is clipped, both rewards are bounded and their action
gradients are exactly zero wherever the clip is active.
"""

import json

import numpy as np

from arcil.nets import Adam, Mlp

REWARD_KINDS = ("gail", "fmax_rkl")

DISC_HIDDEN = (128, 128)
DISC_CLIP = 10.0
DISC_LR = 3e-4
DISC_BATCH = 128
GRAD_PENALTY_DEFAULT = 4.0


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def concat_sa(states, actions):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    return np.concatenate([states, actions], axis=1)


class Discriminator:
    """Expert-vs-agent classifier with optional input-gradient penalty."""

    def __init__(self, state_dim, action_dim, rng=None, hidden=DISC_HIDDEN,
                 clip=DISC_CLIP, learning_rate=DISC_LR,
                 grad_penalty=GRAD_PENALTY_DEFAULT, kind="fmax_rkl",
                 action_scale=1.0):
        if kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {kind!r}")
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.clip = float(clip)
        self.grad_penalty = float(grad_penalty)
        self.kind = kind
        # actions are divided by this before entering the network, so tasks
        # with small action bounds present unit-range inputs; all reported
        # gradients are chained back to raw action units
        self.action_scale = float(action_scale)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [self.state_dim + self.action_dim, *hidden, 1]
        self.net = Mlp(sizes, hidden_activation="tanh", output_activation="clip",
                       clip_bounds=(-self.clip, self.clip), rng=self.rng)
        self.optimizer = Adam(self.net, learning_rate)

    def _net_input(self, states, actions):
        return concat_sa(states, np.asarray(actions, dtype=np.float64)
                         / self.action_scale)

    # --- classification ---

    def logits(self, sa):
        return self.net.forward_batch(np.atleast_2d(sa))[:, 0]

    def update(self, expert_batch, agent_batch):
        """One ascent step on the classification objective.

        Batches are (states, actions) pairs. Returns the pre-step objective
        sum(log D(expert)) + sum(log(1 - D(agent))); the step itself uses the
        per-sample mean plus the gradient penalty, which only rescales the
        Adam direction.
        """
        x_exp = self._net_input(*expert_batch)
        x_ag = self._net_input(*agent_batch)
        n_exp, n_ag = x_exp.shape[0], x_ag.shape[0]
        if n_exp == 0 or n_ag == 0:
            raise ValueError("discriminator update requires non-empty batches")

        x_all = np.concatenate([x_exp, x_ag])
        cache = self.net._run(x_all)
        z = cache[1][-1][:, 0]
        z_exp, z_ag = z[:n_exp], z[n_exp:]
        objective = float(_log_sigmoid(z_exp).sum() + _log_sigmoid(-z_ag).sum())

        # minimize mean binary cross-entropy
        d_exp = (self._sigmoid(z_exp) - 1.0) / n_exp
        d_ag = self._sigmoid(z_ag) / n_ag
        tape = self.net.backward_batch(
            x_all, np.concatenate([d_exp, d_ag])[:, None], cache=cache)

        if self.grad_penalty > 0.0:
            m = min(n_exp, n_ag)
            u = self.rng.uniform(size=(m, 1))
            x_mix = u * x_exp[:m] + (1.0 - u) * x_ag[:m]
            g = self.net.input_grad_batch(x_mix, np.ones((m, 1)))
            norms = np.linalg.norm(g, axis=1)
            coef = 2.0 * (norms - 1.0) / np.maximum(norms, 1e-12)
            pen_tape = self.net.grad_of_input_grad(x_mix, coef[:, None] * g)
            tape.flat += (self.grad_penalty / m) * pen_tape.flat

        self.optimizer.step(self.net, tape)
        return objective

    @staticmethod
    def _sigmoid(z):
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    # --- reward surfaces ---

    def reward_batch(self, states, actions, kind=None):
        kind = self.kind if kind is None else kind
        z = self.logits(self._net_input(states, actions))
        if kind == "fmax_rkl":
            return z
        if kind == "gail":
            return _log_sigmoid(z)
        raise ValueError(f"unknown reward kind {kind!r}")

    def reward(self, s, a, kind=None):
        return float(self.reward_batch(s, a, kind)[0])

    def reward_grad_action_batch(self, states, actions, kind=None, cache=None):
        """Exact gradient of the reward w.r.t. each action, one row per sample."""
        kind = self.kind if kind is None else kind
        x = self._net_input(states, actions)
        if cache is None:
            cache = self.net._run(x)
        if kind == "fmax_rkl":
            cot = np.ones((x.shape[0], 1))
        elif kind == "gail":
            z = cache[1][-1][:, 0]
            cot = (1.0 - self._sigmoid(z))[:, None]
        else:
            raise ValueError(f"unknown reward kind {kind!r}")
        g = self.net.input_grad_batch(x, cot, cache=cache)
        return g[:, self.state_dim:] / self.action_scale

    def reward_grad_action(self, s, a, kind=None):
        return self.reward_grad_action_batch(s, a, kind)[0]

    def reward_and_grad_batch(self, states, actions, kind=None):
        """Reward values and their exact action gradients, one forward pass."""
        kind = self.kind if kind is None else kind
        x = self._net_input(states, actions)
        cache = self.net._run(x)
        z = cache[1][-1][:, 0]
        grads = self.reward_grad_action_batch(states, actions, kind, cache=cache)
        values = z if kind == "fmax_rkl" else _log_sigmoid(z)
        return values, grads

    # --- persistence ---

    def save(self, path):
        self.net.save(path)
        sidecar = {"kind": self.kind, "clip": self.clip, "lambda": self.grad_penalty}
        with open(str(path) + ".json", "w") as f:
            f.write(json.dumps(sidecar, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, state_dim, action_scale=1.0, rng=None):
        """Restore from a snapshot; the caller supplies the state/action split
        and action scaling (the sidecar records only kind, clip and penalty
        weight)."""
        net = Mlp.load(path)
        with open(str(path) + ".json") as f:
            sidecar = json.loads(f.read())
        disc = cls.__new__(cls)
        disc.state_dim = int(state_dim)
        disc.action_dim = net.layer_sizes[0] - disc.state_dim
        if disc.action_dim < 1:
            raise ValueError("state_dim incompatible with the stored network")
        disc.clip = float(sidecar["clip"])
        disc.grad_penalty = float(sidecar["lambda"])
        disc.kind = sidecar["kind"]
        disc.action_scale = float(action_scale)
        disc.rng = rng if rng is not None else np.random.default_rng(0)
        disc.net = net
        disc.optimizer = Adam(net, DISC_LR)
        return disc
