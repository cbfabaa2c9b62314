"""Training algorithms: residual-critic SAC, standard SAC, the short-sighted
immediate-reward baseline, plus the shared replay buffer and twin critics.

The residual-critic targets bootstrap only future quantities,

    y = gamma * (r(s', a~') + min_i Cbar_i(s', a~') - alpha log pi(a~'|s')) * (1 - d),

with a~' freshly sampled; the stored transition's own reward never enters.
Standard SAC keeps it: y = r(s, a) + gamma * (min_i Qbar_i - alpha log pi) * (1 - d).
That one-line difference is what lets the policy step combine the exact
reward gradient with the learned critic's gradient instead of estimating
both through one network.
"""

import contextlib
import time
from dataclasses import dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(limits=None):
        return contextlib.nullcontext()

from arcil.adversary import Discriminator, concat_sa
from arcil.envs import make_env
from arcil.nets import Adam, GradTape, Mlp, NonFiniteError
from arcil.policy import SquashedGaussianPolicy, bc_fit
from arcil.records import EvalRow, RunRecord

AGENTS = ("sarc", "sac", "naive_diff")
REWARD_MODES = ("gail", "fmax_rkl", "env")

# seed-stream tags: one master seed fans out into independent generators so
# e.g. adding eval episodes never perturbs training randomness
TAG_ENV, TAG_POLICY, TAG_CRITIC1, TAG_CRITIC2, TAG_DISC = 0, 1, 2, 3, 4
TAG_BUFFER, TAG_ACTION, TAG_UPDATES, TAG_MIX, TAG_EXPERT = 5, 6, 7, 8, 9
TAG_EVAL = 1000


def stream(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tag)]))


class ReplayBuffer:
    """Fixed-capacity ring of transitions; uniform sampling with replacement."""

    def __init__(self, capacity, state_dim, action_dim, rng):
        self.capacity = int(capacity)
        self.rng = rng
        self.s = np.zeros((self.capacity, state_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.s2 = np.zeros((self.capacity, state_dim))
        self.r = np.zeros(self.capacity)
        self.d = np.zeros(self.capacity)
        self.ptr = 0
        self.size = 0

    def add(self, s, a, s2, r, d):
        i = self.ptr
        self.s[i], self.a[i], self.s2[i] = s, a, s2
        self.r[i], self.d[i] = r, float(d)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return {"s": self.s[idx], "a": self.a[idx], "s2": self.s2[idx],
                "r": self.r[idx], "d": self.d[idx]}


class CriticPair:
    """Twin scalar critics on (s, a) with polyak-averaged target copies.

    ``action_scale`` divides incoming actions before the networks (unit-range
    inputs for tasks with small action bounds); returned action gradients are
    chained back to raw action units.

    Both twins live in one stacked (2, P) parameter buffer so the hot paths
    evaluate them with a single broadcast matmul per layer; ``c1``/``c2`` and
    their targets are ordinary Mlp objects whose parameters are views into
    the stack, so mutating them directly stays fully supported.
    """

    def __init__(self, state_dim, action_dim, kind, hidden=(64, 64),
                 learning_rate=1e-4, rng1=None, rng2=None, action_scale=1.0):
        if kind not in ("q", "c"):
            raise ValueError(f"critic kind must be 'q' or 'c', got {kind!r}")
        self.kind = kind
        self.state_dim = int(state_dim)
        self.action_scale = float(action_scale)
        sizes = [state_dim + action_dim, *hidden, 1]
        self.c1 = Mlp(sizes, hidden_activation="relu", rng=rng1)
        self.c2 = Mlp(sizes, hidden_activation="relu", rng=rng2)
        self.c1_targ = self.c1.clone()
        self.c2_targ = self.c2.clone()
        p = self.c1.n_params
        self._live_stack = np.empty((2, p))
        self._targ_stack = np.empty((2, p))
        self.c1.rebind_params(self._live_stack[0])
        self.c2.rebind_params(self._live_stack[1])
        self.c1_targ.rebind_params(self._targ_stack[0])
        self.c2_targ.rebind_params(self._targ_stack[1])
        self._live_views = self._layer_views(self._live_stack, sizes)
        self._targ_views = self._layer_views(self._targ_stack, sizes)
        # contiguous mirrors of the strided weight views: BLAS runs much
        # faster on them; refreshed from the stacks before each stacked pass
        self._live_mirror = [(np.empty_like(w), np.empty_like(b))
                             for w, b in self._live_views]
        self._targ_mirror = [(np.empty_like(w), np.empty_like(b))
                             for w, b in self._targ_views]
        self._ws = {}
        self.opt1 = Adam(self.c1, learning_rate)
        self.opt2 = Adam(self.c2, learning_rate)
        # stacked optimizer state: the per-net Adam moments are rebound onto
        # rows of shared (2, P) arrays so the fused update and the per-net
        # ``opt.step`` path stay interchangeable
        self._stack_m = np.zeros((2, p))
        self._stack_v = np.zeros((2, p))
        self.opt1.first_moment = self._stack_m[0]
        self.opt1.second_moment = self._stack_v[0]
        self.opt2.first_moment = self._stack_m[1]
        self.opt2.second_moment = self._stack_v[1]
        self._orig_opts = (self.opt1, self.opt2)
        self._grad_stack = np.empty((2, p))
        self._grad_views = self._layer_views(self._grad_stack, sizes)

    @staticmethod
    def _layer_views(stack, sizes):
        views = []
        off = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = stack[:, off:off + n_in * n_out].reshape(2, n_in, n_out)
            off += n_in * n_out
            b = stack[:, off:off + n_out].reshape(2, 1, n_out)
            off += n_out
            views.append((w, b))
        return views

    def _buffers(self, batch):
        bufs = self._ws.get(batch)
        if bufs is None:
            widths = self.c1.layer_sizes
            bufs = {
                "pre": [np.empty((2, batch, n)) for n in widths[1:]],
                "act": [np.empty((2, batch, n)) for n in widths[1:]],
                "deriv": [np.empty((2, batch, n)) for n in widths[1:]],
                "gin": [np.empty((2, batch, n)) for n in widths[:-1]],
            }
            self._ws[batch] = bufs
        return bufs

    def _net_input(self, states, actions):
        return concat_sa(states, np.asarray(actions, dtype=np.float64)
                         / self.action_scale)

    def _mirror(self, live):
        views = self._live_views if live else self._targ_views
        mirror = self._live_mirror if live else self._targ_mirror
        for (w, b), (mw, mb) in zip(views, mirror):
            mw[:] = w
            mb[:] = b
        return mirror

    def _stack_run(self, mirror, x):
        """Forward both twins at once; relu hidden layers, identity output."""
        bufs = self._buffers(x.shape[0])
        last = len(mirror) - 1
        pre, acts = [], []
        a = x
        for i, (w, b) in enumerate(mirror):
            z = bufs["pre"][i]
            np.matmul(a, w, out=z)
            z += b
            pre.append(z)
            if i == last:
                acts.append(z)
            else:
                a = np.maximum(z, 0.0, out=bufs["act"][i])
                acts.append(a)
        return pre, acts

    def target_min(self, states, actions):
        x = self._net_input(states, actions)
        out = self._stack_run(self._mirror(live=False), x)[1][-1]
        return np.minimum(out[0, :, 0], out[1, :, 0])

    def live_min_and_action_grad(self, states, actions):
        """Per-sample min over the live critics and its gradient w.r.t. a."""
        x = self._net_input(states, actions)
        mirror = self._mirror(live=True)
        pre, acts = self._stack_run(mirror, x)
        bufs = self._buffers(x.shape[0])
        v = acts[-1][:, :, 0]
        g = np.ones((2, x.shape[0], 1))
        for i in range(len(mirror) - 1, -1, -1):
            if i == len(mirror) - 1:
                dz = g           # identity output layer
            else:
                dz = np.heaviside(pre[i], 0.0, out=bufs["deriv"][i])
                np.multiply(g, dz, out=dz)
            g = np.matmul(dz, mirror[i][0].transpose(0, 2, 1), out=bufs["gin"][i])
        use1 = (v[0] <= v[1])[:, None]
        grads = np.where(use1, g[0], g[1])[:, self.state_dim:] / self.action_scale
        return np.minimum(v[0], v[1]), grads

    def update(self, states, actions, targets):
        """One Adam step per critic on MSE against ``targets``; returns the
        pre-step loss averaged over the two critics."""
        x = self._net_input(states, actions)
        y = np.asarray(targets, dtype=np.float64)
        mirror = self._mirror(live=True)
        pre, acts = self._stack_run(mirror, x)
        bufs = self._buffers(x.shape[0])
        err = acts[-1][:, :, 0] - y
        losses = 0.5 * (np.mean(err[0] * err[0]) + np.mean(err[1] * err[1]))
        g = (2.0 * err / err.shape[1])[:, :, None]
        for i in range(len(mirror) - 1, -1, -1):
            if i == len(mirror) - 1:
                dz = g
            else:
                dz = np.heaviside(pre[i], 0.0, out=bufs["deriv"][i])
                np.multiply(g, dz, out=dz)
            a_prev = x if i == 0 else acts[i - 1]
            if i == 0:
                dw = np.matmul(a_prev.T, dz)       # shared input, (2, in, out)
            else:
                dw = np.matmul(a_prev.transpose(0, 2, 1), dz)
            gw, gb = self._grad_views[i]
            gw[:] = dw
            dz.sum(axis=1, out=gb[:, 0, :])
            if i > 0:
                g = np.matmul(dz, mirror[i][0].transpose(0, 2, 1),
                              out=bufs["gin"][i])
        self._adam_step_pair()
        return float(losses)

    def _adam_step_pair(self):
        """Apply the stacked gradient through the twin Adam states. Falls back
        to per-net stepping when the optimizers have been swapped out."""
        opt1, opt2 = self.opt1, self.opt2
        if (opt1, opt2) != self._orig_opts:
            for k, (net, opt) in enumerate(((self.c1, opt1), (self.c2, opt2))):
                tape = GradTape(net)
                tape.flat[:] = self._grad_stack[k]
                opt.step(net, tape)
            return
        g = self._grad_stack
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("gradient contains NaN/Inf")
        opt1.step_count += 1
        opt2.step_count += 1
        t = opt1.step_count
        m, v = self._stack_m, self._stack_v
        m += (1.0 - opt1.beta1) * (g - m)
        v += (1.0 - opt1.beta2) * (g * g - v)
        scale = opt1.learning_rate / (1.0 - opt1.beta1 ** t)
        denom = np.sqrt(v / (1.0 - opt1.beta2 ** t))
        denom += opt1.epsilon
        self._live_stack -= scale * m / denom
        if not np.all(np.isfinite(self._live_stack)):
            raise NonFiniteError("network parameters contain NaN/Inf")

    def polyak(self, zeta):
        if not 0.0 <= zeta <= 1.0:
            raise ValueError(f"polyak coefficient must be in [0, 1], got {zeta}")
        self._targ_stack *= zeta
        self._targ_stack += (1.0 - zeta) * self._live_stack


def polyak_update(critics, zeta):
    critics.polyak(zeta)


def sarc_c_targets(batch, policy, critics, alpha, gamma, rng, reward_fn):
    """Residual-critic bootstrap; no gradient flows into any term."""
    if critics.kind != "c":
        raise ValueError(f"residual targets need 'c' critics, got {critics.kind!r}")
    a2, logp2, _ = policy.sample_batch(batch["s2"], rng)
    r2 = reward_fn(batch["s2"], a2)
    boot = r2 + critics.target_min(batch["s2"], a2) - alpha * logp2
    return gamma * boot * (1.0 - batch["d"])


def sac_q_targets(batch, policy, critics, alpha, gamma, rng, reward_fn=None):
    """Standard soft Bellman targets; reward comes from ``reward_fn`` at the
    stored (s, a) pair, or from the stored environment reward when None."""
    if critics.kind != "q":
        raise ValueError(f"soft Bellman targets need 'q' critics, got {critics.kind!r}")
    r = batch["r"] if reward_fn is None else reward_fn(batch["s"], batch["a"])
    a2, logp2, _ = policy.sample_batch(batch["s2"], rng)
    boot = critics.target_min(batch["s2"], a2) - alpha * logp2
    return r + gamma * boot * (1.0 - batch["d"])


def policy_objective_and_grad(policy, states, rng, alpha, critics=None,
                              reward_and_grad_fn=None):
    """Objective mean[r(s, a~) + min_i critic_i(s, a~) - alpha log pi] and its
    exact ascent gradient w.r.t. the policy parameters.

    The reward term's action gradient is exact (through the discriminator);
    the critic term contributes the selected live network's input gradient;
    both flow through the reparameterized action path. Either term may be
    absent: standard SAC passes no reward function, the short-sighted
    baseline passes no critics (its contribution is then exactly zero).
    """
    states = np.atleast_2d(states)
    n = states.shape[0]
    actions, log_prob, aux = policy.sample_batch(states, rng)
    if reward_and_grad_fn is not None:
        r, g_r = reward_and_grad_fn(states, actions)
    else:
        r, g_r = np.zeros(n), np.zeros_like(actions)
    if critics is not None:
        c_vals, g_c = critics.live_min_and_action_grad(states, actions)
    else:
        c_vals, g_c = np.zeros(n), np.zeros_like(actions)
    objective = float(np.mean(r + c_vals - alpha * log_prob))
    d_action = (g_r + g_c) / n
    d_log_prob = np.full(n, -alpha / n)
    tape = policy.backward_objective(aux, d_action, d_log_prob)
    return objective, tape


def policy_update(policy, optimizer, states, rng, alpha, critics=None,
                  reward_and_grad_fn=None):
    """One ascent step on the policy objective; returns its pre-step value."""
    objective, tape = policy_objective_and_grad(
        policy, states, rng, alpha, critics=critics,
        reward_and_grad_fn=reward_and_grad_fn)
    tape.flat *= -1.0          # Adam minimizes; we ascend
    optimizer.step(policy.net, tape)
    return objective


def naive_diff_update(policy, optimizer, states, rng, reward_and_grad_fn, alpha=0.0):
    """Deliberately short-sighted baseline: ascends the immediate reward only
    (no critic; entropy off unless configured)."""
    return policy_update(policy, optimizer, states, rng, alpha,
                         critics=None, reward_and_grad_fn=reward_and_grad_fn)


def evaluate_policy(policy, env, n_episodes, seed):
    """Mean/std of deterministic-policy returns over fresh-seeded episodes."""
    if n_episodes < 1:
        raise ValueError("need at least one evaluation episode")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    returns = np.zeros(n_episodes)
    for ep, child in enumerate(ss.spawn(n_episodes)):
        obs = env.reset(rng=np.random.default_rng(child))
        total = 0.0
        for _ in range(env.horizon):
            tr = env.step(policy.act(obs, deterministic=True))
            total += tr.reward_env
            obs = tr.next_state
        returns[ep] = total
    return float(returns.mean()), float(returns.std())


@dataclass
class Hyperparams:
    hidden: tuple = (64, 64)
    lr_policy: float = 1e-4
    lr_critic: float = 1e-4
    lr_disc: float = 3e-4
    alpha: float = 0.2
    gamma: float = 0.99
    polyak: float = 0.995
    batch_size: int = 256
    disc_batch_size: int = 128
    buffer_capacity: int = 100_000
    update_every: int = 20
    iterations_per_round: int = 10
    critic_updates_per_policy: int = 10
    grad_penalty: float = 4.0
    reward_scale: float = 1.0
    normalize_obs: bool = True


def default_hyperparams(agent):
    """Per-agent defaults: the standard-SAC path uses the faster learning
    rate and the usual one critic step per policy step."""
    if agent == "sac":
        return Hyperparams(lr_policy=1e-3, lr_critic=1e-3, critic_updates_per_policy=1)
    if agent == "naive_diff":
        return Hyperparams(alpha=0.0, critic_updates_per_policy=0)
    return Hyperparams()


@dataclass
class TrainSettings:
    agent: str
    reward_kind: str
    env_kind: str
    seed: int
    max_env_steps: int
    eval_every: int = 1000
    eval_episodes: int = 20
    expert_states: np.ndarray = None
    expert_actions: np.ndarray = None
    hyper: Hyperparams = field(default_factory=Hyperparams)
    env_kwargs: dict = field(default_factory=dict)

    def validate(self):
        if self.agent not in AGENTS:
            raise ValueError(f"unknown agent {self.agent!r}")
        if self.reward_kind not in REWARD_MODES:
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")
        if self.agent in ("sarc", "naive_diff") and self.reward_kind == "env":
            raise ValueError(
                f"{self.agent} needs a differentiable reward (gail or fmax_rkl); "
                "environment rewards expose no action gradient")
        if self.reward_kind != "env" and self.expert_states is None:
            raise ValueError("adversarial training requires an expert dataset")
        if self.max_env_steps < 0:
            raise ValueError("max_env_steps must be non-negative")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be at least 1")
        return self


@dataclass
class TrainResult:
    record: RunRecord
    policy: SquashedGaussianPolicy
    discriminator: Discriminator = None
    critics: CriticPair = None


class _Window:
    """Running means of losses between evaluation points."""

    def __init__(self):
        self.sums = np.zeros(3)
        self.counts = np.zeros(3)

    def push(self, slot, value):
        self.sums[slot] += value
        self.counts[slot] += 1

    def flush(self):
        means = np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), 0.0)
        self.sums[:] = 0.0
        self.counts[:] = 0.0
        return means


def train_ail(settings):
    """Interleaved adversarial-imitation loop (env stepping, replay buffer,
    alternating discriminator/agent updates, periodic deterministic evals)."""
    settings.validate()
    hp = settings.hyper
    seed = settings.seed
    start = time.monotonic()

    env = make_env(settings.env_kind, rng=stream(seed, TAG_ENV), **settings.env_kwargs)
    eval_env = make_env(settings.env_kind, **settings.env_kwargs)
    state_dim, action_dim = env.state_dim, env.action_dim

    policy = SquashedGaussianPolicy(state_dim, action_dim, env.action_bound,
                                    hidden=hp.hidden, rng=stream(seed, TAG_POLICY))
    if hp.normalize_obs and settings.expert_states is not None:
        policy.set_normalizer(settings.expert_states.mean(axis=0),
                              settings.expert_states.std(axis=0))
    policy_opt = Adam(policy.net, hp.lr_policy)

    critics = None
    if settings.agent in ("sarc", "sac"):
        critics = CriticPair(state_dim, action_dim,
                             "c" if settings.agent == "sarc" else "q",
                             hidden=hp.hidden, learning_rate=hp.lr_critic,
                             rng1=stream(seed, TAG_CRITIC1),
                             rng2=stream(seed, TAG_CRITIC2),
                             action_scale=env.action_bound)

    disc = None
    reward_fn = None
    reward_and_grad_fn = None
    expert_s_norm = expert_a = None
    if settings.reward_kind != "env":
        disc = Discriminator(state_dim, action_dim, rng=stream(seed, TAG_DISC),
                             learning_rate=hp.lr_disc, grad_penalty=hp.grad_penalty,
                             kind=settings.reward_kind,
                             action_scale=env.action_bound)
        disc.rng = stream(seed, TAG_MIX)   # penalty mixing draws
        expert_s_norm = policy.normalize(settings.expert_states)
        expert_a = np.asarray(settings.expert_actions, dtype=np.float64)
        scale = hp.reward_scale

        def reward_fn(s, a):
            return scale * disc.reward_batch(s, a)

        def reward_and_grad_fn(s, a):
            r, g = disc.reward_and_grad_batch(s, a)
            return scale * r, scale * g

    buffer = ReplayBuffer(hp.buffer_capacity, state_dim, action_dim,
                          stream(seed, TAG_BUFFER))
    action_rng = stream(seed, TAG_ACTION)
    update_rng = stream(seed, TAG_UPDATES)
    expert_rng = stream(seed, TAG_EXPERT)

    record = RunRecord(config_hash="", seed=seed)
    window = _Window()
    eval_index = 0

    def run_eval(step):
        nonlocal eval_index
        mean, std = evaluate_policy(
            policy, eval_env, settings.eval_episodes,
            np.random.SeedSequence([seed, TAG_EVAL + eval_index]))
        eval_index += 1
        disc_loss, critic_loss, policy_obj = window.flush()
        record.rows.append(EvalRow(step, mean, std, disc_loss, critic_loss, policy_obj))

    def agent_iteration():
        # one target pass covers all critic minibatches of the iteration;
        # target networks update once per iteration, after the policy step
        if settings.agent == "sarc":
            k = max(hp.critic_updates_per_policy, 1)
            big = buffer.sample(hp.batch_size * k)
            y = sarc_c_targets(big, policy, critics, hp.alpha, hp.gamma,
                               update_rng, reward_fn)
            for i in range(k):
                sl = slice(i * hp.batch_size, (i + 1) * hp.batch_size)
                window.push(1, critics.update(big["s"][sl], big["a"][sl], y[sl]))
            batch = buffer.sample(hp.batch_size)
            window.push(2, policy_update(policy, policy_opt, batch["s"], update_rng,
                                         hp.alpha, critics=critics,
                                         reward_and_grad_fn=reward_and_grad_fn))
            critics.polyak(hp.polyak)
        elif settings.agent == "sac":
            k = max(hp.critic_updates_per_policy, 1)
            big = buffer.sample(hp.batch_size * k)
            y = sac_q_targets(big, policy, critics, hp.alpha, hp.gamma,
                              update_rng, reward_fn)
            for i in range(k):
                sl = slice(i * hp.batch_size, (i + 1) * hp.batch_size)
                window.push(1, critics.update(big["s"][sl], big["a"][sl], y[sl]))
            batch = buffer.sample(hp.batch_size)
            window.push(2, policy_update(policy, policy_opt, batch["s"], update_rng,
                                         hp.alpha, critics=critics))
            critics.polyak(hp.polyak)
        else:  # naive_diff
            batch = buffer.sample(hp.batch_size)
            window.push(2, naive_diff_update(policy, policy_opt, batch["s"],
                                             update_rng, reward_and_grad_fn,
                                             alpha=hp.alpha))

    obs = env.reset()
    ep_t = 0
    # the networks here are too small for threaded BLAS to pay off; pinning
    # one thread keeps CPU time equal to wall time
    with threadpool_limits(limits=1):
        for step in range(1, settings.max_env_steps + 1):
            a = policy.act(obs, deterministic=False, rng=action_rng)
            tr = env.step(a)
            buffer.add(policy.normalize(tr.state), tr.action,
                       policy.normalize(tr.next_state), tr.reward_env, tr.done)
            obs = tr.next_state
            ep_t += 1
            if ep_t >= env.horizon:
                obs = env.reset()
                ep_t = 0

            if step % hp.update_every == 0 and buffer.size > 0:
                for _ in range(hp.iterations_per_round):
                    if disc is not None:
                        idx = expert_rng.integers(0, expert_s_norm.shape[0],
                                                  size=hp.disc_batch_size)
                        agent_batch = buffer.sample(hp.disc_batch_size)
                        obj = disc.update((expert_s_norm[idx], expert_a[idx]),
                                          (agent_batch["s"], agent_batch["a"]))
                        window.push(0, obj)
                    agent_iteration()

            if step % settings.eval_every == 0 or step == settings.max_env_steps:
                run_eval(step)

    record.wall_time_s = time.monotonic() - start
    return TrainResult(record, policy, disc, critics)


__all__ = [
    "AGENTS", "REWARD_MODES", "CriticPair", "Hyperparams", "ReplayBuffer",
    "TrainResult", "TrainSettings", "bc_fit", "default_hyperparams",
    "evaluate_policy", "naive_diff_update", "policy_objective_and_grad",
    "policy_update", "polyak_update", "sac_q_targets", "sarc_c_targets",
    "stream", "train_ail",
]
