"""Toy environments with deterministic dynamics and scripted experts.

Three families:
  * a tabular grid world (absorbing goal, reward 1 on entering it),
  * a 1D driving task where the reward is a quadratic penalty around a
    known expert action curve,
  * planar reach/push manipulation replicas with per-dimension action
    clamping at +/-0.033 m and distance-to-goal rewards.

All randomness comes from injected numpy Generators; identical seeds
reproduce datasets bit for bit.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

PLANAR_MAX_STEP = 0.033          # metres of end-effector travel per axis per step
REACH_HORIZON = 20
PUSH_HORIZON = 30
REACH_GOAL = (0.15, -0.15)
PUSH_BLOCK_START = (0.0, -0.10)
PUSH_GOAL_START = (0.0, -0.30)
INIT_NOISE_STD = 1e-4            # 0.01 cm read literally as 0.0001 m
EFFECTOR_RADIUS = 0.02
BLOCK_RADIUS = 0.025
CONTACT_DIST = EFFECTOR_RADIUS + BLOCK_RADIUS
EXPERT_GAIN = 5.0

GRID_ACTIONS = ("left", "right", "up", "down")
_GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass
class TabularMDP:
    """Finite MDP: transition tensor P[s, a, s'], reward table r[s, a]."""

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal_mask: np.ndarray

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError("transition tensor shape mismatch")
        if self.reward.shape != (self.n_states, self.n_actions):
            raise ValueError("reward table shape mismatch")
        row_sums = self.transition.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")
        for s in np.flatnonzero(self.terminal_mask):
            if np.any(self.reward[s] != 0.0):
                raise ValueError(f"terminal state {s} has nonzero reward")
            for a in range(self.n_actions):
                if self.transition[s, a, s] != 1.0:
                    raise ValueError(f"terminal state {s} must self-loop")
        return self


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    reward_env: float
    done: bool


@dataclass
class Trajectory:
    transitions: list = field(default_factory=list)

    @property
    def episode_return(self):
        return float(sum(t.reward_env for t in self.transitions))

    def __len__(self):
        return len(self.transitions)

    def states(self):
        return np.array([t.state for t in self.transitions])

    def actions(self):
        return np.array([t.action for t in self.transitions])


def make_gridworld(width, height, goal, gamma=0.9):
    """Grid world: 4 moves, wall bumps stay put, entering the goal pays 1.

    The goal cell is absorbing with zero reward. ``goal`` is an (x, y) cell.
    """
    width, height = int(width), int(height)
    if width < 1 or height < 1 or width * height < 2:
        raise ValueError(f"grid must contain at least 2 cells, got {width}x{height}")
    gx, gy = int(goal[0]), int(goal[1])
    if not (0 <= gx < width and 0 <= gy < height):
        raise ValueError(f"goal {goal} outside {width}x{height} grid")

    n_states = width * height
    n_actions = 4
    goal_state = gy * width + gx
    P = np.zeros((n_states, n_actions, n_states))
    r = np.zeros((n_states, n_actions))
    terminal = np.zeros(n_states, dtype=bool)
    terminal[goal_state] = True

    for y in range(height):
        for x in range(width):
            s = y * width + x
            if s == goal_state:
                P[s, :, s] = 1.0
                continue
            for a, (dx, dy) in enumerate(_GRID_MOVES):
                nx, ny = x + dx, y + dy
                if not (0 <= nx < width and 0 <= ny < height):
                    nx, ny = x, y          # bumped into a wall
                ns = ny * width + nx
                P[s, a, ns] = 1.0
                if ns == goal_state:
                    r[s, a] = 1.0
    return TabularMDP(n_states, n_actions, P, r, gamma, terminal).validate()


# --- 1D driving task ---

def car1d_expert(obs):
    """Expert drives fast far from the goal at x=1 and slows close to it."""
    return 0.1 * (1.0 - obs) + 0.1


def car1d_reward(obs, a):
    """Quadratic penalty around the expert action; 0 exactly on the curve."""
    expert_a = car1d_expert(obs)
    return -100.0 * (a - expert_a) ** 2


class Car1dEnv:
    """Stateful extension of the 1D driving task for training smoke tests.

    The published task uses the reward as a static function of (obs, a);
    here position also advances by x <- x + 0.1*a so agents can be rolled
    out. Reward is evaluated at the pre-step state, episodes are pure time
    limits (done stays False).
    """

    state_dim = 1
    action_dim = 1
    action_bound = 0.3

    def __init__(self, rng=None, horizon=50, start_noise_std=0.0):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.horizon = int(horizon)
        self.start_noise_std = float(start_noise_std)
        self.x = 0.0
        self.t = 0

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng
        self.x = 0.0
        if self.start_noise_std > 0:
            self.x += self.rng.normal(0.0, self.start_noise_std)
        self.t = 0
        return np.array([self.x])

    def step(self, action):
        if self.t >= self.horizon:
            raise RuntimeError("episode over; call reset()")
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0],
                          -self.action_bound, self.action_bound))
        state = np.array([self.x])
        reward = car1d_reward(self.x, a)
        self.x = self.x + 0.1 * a
        self.t += 1
        return Transition(state, np.array([a]), np.array([self.x]), reward, False)


# --- planar manipulation replicas ---

class PlanarReachEnv:
    """Drive the end-effector to a goal; observation is goal minus effector."""

    state_dim = 2
    action_dim = 2
    action_bound = PLANAR_MAX_STEP

    def __init__(self, rng=None, horizon=REACH_HORIZON, noise_std=INIT_NOISE_STD):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.horizon = int(horizon)
        self.noise_std = float(noise_std)
        self.offset = np.zeros(2)
        self.t = 0

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng
        self.offset = np.array(REACH_GOAL) + self.rng.normal(0.0, self.noise_std, 2)
        self.t = 0
        return self.offset.copy()

    def step(self, action):
        if self.t >= self.horizon:
            raise RuntimeError("episode over; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2),
                    -self.action_bound, self.action_bound)
        state = self.offset.copy()
        self.offset = self.offset - a
        self.t += 1
        reward = -float(np.linalg.norm(self.offset))
        return Transition(state, a, self.offset.copy(), reward, False)


class PlanarPushEnv:
    """Push a disc-shaped block to a goal with a disc-shaped effector.

    Observation is (block - effector, goal - block). Contact is resolved in
    substeps: whenever the discs overlap, the block is translated along the
    centre line until the surfaces just touch (rigid frictionless push, no
    rotation). Reward is minus the block-to-goal distance after the step.
    """

    state_dim = 4
    action_dim = 2
    action_bound = PLANAR_MAX_STEP

    def __init__(self, rng=None, horizon=PUSH_HORIZON, noise_std=INIT_NOISE_STD,
                 n_substeps=10):
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.horizon = int(horizon)
        self.noise_std = float(noise_std)
        self.n_substeps = int(n_substeps)
        self.effector = np.zeros(2)
        self.block = np.zeros(2)
        self.goal = np.zeros(2)
        self.t = 0

    def reset(self, rng=None):
        if rng is not None:
            self.rng = rng
        self.effector = np.zeros(2)
        self.block = np.array(PUSH_BLOCK_START) + self.rng.normal(0.0, self.noise_std, 2)
        self.goal = np.array(PUSH_GOAL_START) + self.rng.normal(0.0, self.noise_std, 2)
        self.t = 0
        return self._obs()

    def _obs(self):
        return np.concatenate([self.block - self.effector, self.goal - self.block])

    def step(self, action):
        if self.t >= self.horizon:
            raise RuntimeError("episode over; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2),
                    -self.action_bound, self.action_bound)
        state = self._obs()
        sub = a / self.n_substeps
        for _ in range(self.n_substeps):
            self.effector = self.effector + sub
            delta = self.block - self.effector
            dist = float(np.linalg.norm(delta))
            if dist < CONTACT_DIST:
                if dist < 1e-12:
                    norm = float(np.linalg.norm(sub))
                    direction = sub / norm if norm > 0 else np.array([1.0, 0.0])
                else:
                    direction = delta / dist
                self.block = self.effector + CONTACT_DIST * direction
        self.t += 1
        reward = -float(np.linalg.norm(self.goal - self.block))
        return Transition(state, a, self._obs(), reward, False)


def _clamp_step(v):
    return np.clip(v, -PLANAR_MAX_STEP, PLANAR_MAX_STEP)


def reach_expert(offset):
    """Saturating proportional controller a = clamp(K * offset), K = 5."""
    return _clamp_step(EXPERT_GAIN * np.asarray(offset, dtype=np.float64))


PUSH_HOLD_DIST = 0.005        # stop pushing once the block is delivered
PUSH_POCKET = 0.040           # servo point just inside the contact shell
PUSH_WAYPOINT = BLOCK_RADIUS + 0.03   # approach point behind the block surface
PUSH_BEHIND_ALONG = -0.030
PUSH_BEHIND_PERP = 0.018


def push_expert(obs):
    """Two-phase pusher: get behind the block, then servo it to the goal.

    The push phase tracks a pocket point just behind the block centre on the
    block-to-goal line, which keeps the effector centred while the contact
    does the pushing; its step is capped by the remaining block-to-goal
    distance so the block is not shoved past the goal.
    """
    obs = np.asarray(obs, dtype=np.float64)
    block = obs[:2]                       # relative to the effector
    goal = obs[:2] + obs[2:]
    to_goal = goal - block
    d = float(np.linalg.norm(to_goal))
    if d < PUSH_HOLD_DIST:
        return np.zeros(2)
    u = to_goal / d
    rel = -block                          # effector position in the block frame
    along = float(rel @ u)
    perp = float(np.linalg.norm(rel - along * u))
    if along < PUSH_BEHIND_ALONG and perp < PUSH_BEHIND_PERP:
        a = _clamp_step(EXPERT_GAIN * (block - PUSH_POCKET * u))
        n = float(np.linalg.norm(a))
        if n > d:
            a = a * (d / n)
        return a
    err = block - PUSH_WAYPOINT * u
    a = _clamp_step(EXPERT_GAIN * err)
    n = float(np.linalg.norm(a))
    e = float(np.linalg.norm(err))
    if n > e > 0:
        a = a * (e / n)                   # no overshoot while approaching
    return a


def scripted_expert(env_kind, state):
    if env_kind == "reach":
        return reach_expert(state)
    if env_kind == "push":
        return push_expert(state)
    raise ValueError(f"unknown env_kind {env_kind!r}")


def make_env(env_kind, rng=None, **kwargs):
    if env_kind == "reach":
        return PlanarReachEnv(rng=rng, **kwargs)
    if env_kind == "push":
        return PlanarPushEnv(rng=rng, **kwargs)
    if env_kind == "car1d":
        return Car1dEnv(rng=rng, **kwargs)
    raise ValueError(f"unknown env_kind {env_kind!r}")


def expert_policy(env_kind):
    """Scripted controller for an environment kind, as obs -> action."""
    if env_kind in ("reach", "push"):
        return lambda obs: scripted_expert(env_kind, obs)
    if env_kind == "car1d":
        return lambda obs: np.array([car1d_expert(float(obs[0]))])
    raise ValueError(f"unknown env_kind {env_kind!r}")


def rollout(env, policy_fn):
    obs = env.reset()
    traj = Trajectory()
    for _ in range(env.horizon):
        tr = env.step(policy_fn(obs))
        traj.transitions.append(tr)
        obs = tr.next_state
    return traj


def generate_expert_dataset(env_kind, n_trajectories, seed, **env_kwargs):
    """Seeded scripted-expert rollouts; AIL training consumes (s, a) pairs."""
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    if env_kind == "car1d":
        env_kwargs.setdefault("start_noise_std", 0.01)
    streams = np.random.SeedSequence(seed).spawn(n_trajectories)
    policy_fn = expert_policy(env_kind)
    trajectories = []
    for ss in streams:
        env = make_env(env_kind, rng=np.random.default_rng(ss), **env_kwargs)
        trajectories.append(rollout(env, policy_fn))
    return trajectories


# --- trajectory files ---

def _fmt(x):
    return format(float(x), ".17g")


def save_trajectories(path, trajectories):
    """CSV with header episode,t,s0..s{n-1},a0..a{m-1},reward,done."""
    first = trajectories[0].transitions[0]
    n, m = len(first.state), len(first.action)
    header = (["episode", "t"] + [f"s{i}" for i in range(n)]
              + [f"a{j}" for j in range(m)] + ["reward", "done"])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for ep, traj in enumerate(trajectories):
            for t, tr in enumerate(traj.transitions):
                row = ([str(ep), str(t)] + [_fmt(v) for v in tr.state]
                       + [_fmt(v) for v in tr.action]
                       + [_fmt(tr.reward_env), str(int(tr.done))])
                writer.writerow(row)


def load_state_action_pairs(path):
    """Read a trajectory CSV back as (states, actions, rewards, episode_ids)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        n = sum(1 for h in header if h.startswith("s"))
        m = sum(1 for h in header if h.startswith("a"))
        states, actions, rewards, episodes = [], [], [], []
        for row in reader:
            episodes.append(int(row[0]))
            states.append([float(v) for v in row[2:2 + n]])
            actions.append([float(v) for v in row[2 + n:2 + n + m]])
            rewards.append(float(row[2 + n + m]))
    return (np.array(states), np.array(actions), np.array(rewards),
            np.array(episodes, dtype=int))
