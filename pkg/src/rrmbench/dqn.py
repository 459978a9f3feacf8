"""Deep Q-learning for power allocation.

Two environment adapters: an OFDM environment whose actions add a fixed
power increment to one subcarrier (episode ends on budget violation), and a
single-carrier multi-cell environment whose actions pick one of A discrete
power levels for the user currently being decided.  The value estimator is
a small fully connected network trained on uniformly sampled experiences
from a bounded FIFO knowledge base.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn, optim
from .optim import NetworkConfig, SystemModel
from .seeding import stream


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class KnowledgeBase:
    """Bounded FIFO buffer of experiences with uniform sampling."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._buf = deque(maxlen=capacity)
        self.capacity = capacity

    def add(self, exp: Experience):
        self._buf.append(exp)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        if len(self._buf) == 0:
            raise ValueError("knowledge base is empty")
        idx = rng.integers(0, len(self._buf), size=batch_size)
        return [self._buf[i] for i in idx]

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 0.8
    end: float = 0.01
    anneal_episodes: int = 1000

    def value(self, episode: int, prediction: bool = False) -> float:
        if prediction:
            return 0.0
        if episode >= self.anneal_episodes:
            return self.end
        frac = episode / self.anneal_episodes
        return self.start + (self.end - self.start) * frac


def select_action(q_values: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Uniform random with probability epsilon, otherwise the greedy action
    (lowest index on ties)."""
    q_values = np.asarray(q_values)
    if q_values.size == 0:
        raise ValueError("empty q_values")
    if rng.random() < epsilon:
        return int(rng.integers(q_values.size))
    return int(np.argmax(q_values))


@dataclass
class DqnConfig:
    discount: float = 0.99
    lr: float = 1e-3
    actions: int = 10
    delta: float | None = None  # OFDM increment; defaults to p_max/20
    steps_per_episode: int | None = None  # defaults: U*A (SC), 4*N (OFDM)
    warmup_episodes: int = 1
    init_mode: str = "zero"  # zero | carry
    kb_capacity: int = 50_000
    batch_size: int = 32
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if self.actions < 2:
            raise ValueError("need at least 2 actions")
        if self.init_mode not in ("zero", "carry"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")


# ---------------------------------------------------------------------------
# environments


class SingleCarrierEnv:
    """Multi-cell single-carrier environment, BS b serving user b.

    A step decides every user once, in index order; each micro-decision sets
    one BS's power to a discrete level and earns the network sum rate as the
    reward.  The per-user observable stacks the gains that user's BS causes
    (its own channel plus its interference footprint), every BS's current
    power (budget-normalized), and every user's current rate.

    One step per episode is the default: the allocation is fully re-decided
    each episode.  Longer refinement horizons inflate the bootstrapped
    value scale far above the per-action rate differences and train poorly.
    """

    def __init__(self, cfg: NetworkConfig, actions: int,
                 steps_per_episode: int | None = None):
        if cfg.num_bs != cfg.num_users:
            raise ValueError("single-carrier environment pairs BS b with user b")
        self.cfg = cfg
        self.actions = actions
        self.steps = steps_per_episode or 1
        self.levels = np.linspace(0.0, cfg.p_max, actions)
        self._gains = None
        self.powers = np.zeros(cfg.num_bs)
        self._warned_no_prior = False

    @property
    def state_dim(self):
        return 3 * self.cfg.num_users

    def set_gains(self, gains: np.ndarray):
        g = np.asarray(gains)
        B = self.cfg.num_bs
        if g.shape != (B, B):
            raise ValueError(f"gains must be ({B}, {B}), got {g.shape}")
        self._gains = np.abs(g)

    def _rates(self):
        s = optim.sinr(SystemModel.SM2B, self._gains, self.powers, self.cfg)
        return np.log2(1.0 + s)

    FEATURE_MODE = "row"  # gains the user's BS causes ("row") or receives ("col")

    def _observe(self, user: int) -> np.ndarray:
        if self.FEATURE_MODE == "row":
            gain_block = self._gains[user, :] ** 2
        else:
            gain_block = self._gains[:, user] ** 2
        return np.concatenate([
            gain_block,
            self.powers / self.cfg.p_max,
            self._rates(),
        ])

    def reset(self, init_mode: str = "zero", prior_powers: np.ndarray | None = None):
        if self._gains is None:
            raise ValueError("set_gains must be called before reset")
        self._warned_no_prior = False
        if init_mode == "carry":
            if prior_powers is None:
                self.powers = np.zeros(self.cfg.num_bs)
                self._warned_no_prior = True
            else:
                self.powers = prior_powers.copy()
        else:
            self.powers = np.zeros(self.cfg.num_bs)
        self.step_index = 0
        self.current_user = 0
        return self._observe(0)

    @property
    def warned_no_prior(self):
        return self._warned_no_prior

    def step(self, action: int):
        if not 0 <= action < self.actions:
            raise ValueError(f"action {action} outside [0, {self.actions})")
        self.powers[self.current_user] = self.levels[action]
        reward = float(np.sum(self._rates()))
        self.current_user += 1
        if self.current_user == self.cfg.num_users:
            self.current_user = 0
            self.step_index += 1
        done = self.step_index >= self.steps
        state = self._observe(self.current_user)
        return state, reward, done, {"powers": self.powers.copy()}


class OfdmIncrementEnv:
    """Single-user OFDM environment whose actions add a fixed increment to
    one subcarrier; violating the budget ends the episode with zero reward."""

    def __init__(self, cfg: NetworkConfig, delta: float | None = None,
                 steps_per_episode: int | None = None):
        self.cfg = cfg
        self.delta = delta if delta is not None else cfg.p_max / 20.0
        self.steps = steps_per_episode or 4 * cfg.num_subcarriers
        self._gains = None
        self.powers = np.zeros(cfg.num_subcarriers)
        self._warned_no_prior = False

    @property
    def state_dim(self):
        return 2 * self.cfg.num_subcarriers

    @property
    def actions(self):
        return self.cfg.num_subcarriers

    def set_gains(self, gains: np.ndarray):
        g = np.asarray(gains).reshape(-1)
        if g.shape != (self.cfg.num_subcarriers,):
            raise ValueError("gains must hold one value per subcarrier")
        self._gains = np.abs(g)

    def _observe(self):
        return np.concatenate([self._gains ** 2, self.powers / self.cfg.p_max])

    def reset(self, init_mode: str = "zero", prior_powers: np.ndarray | None = None):
        if self._gains is None:
            raise ValueError("set_gains must be called before reset")
        self._warned_no_prior = False
        if init_mode == "carry" and prior_powers is not None:
            self.powers = prior_powers.copy()
        else:
            if init_mode == "carry":
                self._warned_no_prior = True
            self.powers = np.zeros(self.cfg.num_subcarriers)
        self.step_index = 0
        return self._observe()

    @property
    def warned_no_prior(self):
        return self._warned_no_prior

    def step(self, action: int):
        if not 0 <= action < self.actions:
            raise ValueError(f"action {action} outside [0, {self.actions})")
        self.powers[action] += self.delta
        self.step_index += 1
        violation = self.powers.sum() > self.cfg.p_max
        if violation:
            # an over-budget allocation cannot be transmitted
            reward = 0.0
        else:
            s = optim.sinr(SystemModel.SM1, self._gains, self.powers, self.cfg)
            reward = optim.sum_rate(SystemModel.SM1, s, self.cfg)
        done = violation or self.step_index >= self.steps
        return self._observe(), float(reward), done, {
            "powers": self.powers.copy(), "violation": violation}


# ---------------------------------------------------------------------------
# value estimator and training


class QEstimator:
    """Value network Q(s, .) with one output per action."""

    def __init__(self, state_dim: int, actions: int, lr: float = 1e-3, seed: int = 0,
                 hidden=(128, 128, 128)):
        self.spec = nn.mlp((state_dim,) + tuple(hidden) + (actions,), out_act="linear")
        rng = np.random.default_rng(seed)
        self.weights = nn.init_weights(self.spec, rng, scheme="unit_interval")
        self.adam = nn.AdamState(self.weights)
        self.hyper = nn.AdamParams(lr=lr)
        self.actions = actions

    def q_values(self, state: np.ndarray) -> np.ndarray:
        return nn.forward(self.spec, self.weights, state[None, :])[0]

    def q_batch(self, states: np.ndarray) -> np.ndarray:
        return nn.forward(self.spec, self.weights, states)

    def snapshot(self) -> list:
        return nn.clone_weights(self.weights)

    def restore(self, snapshot: list):
        self.weights = nn.clone_weights(snapshot)
        self.adam = nn.AdamState(self.weights)

    def save(self, path):
        nn.save_checkpoint(path, self.spec, self.weights,
                           extra={"kind": "dqn", "actions": self.actions})

    @staticmethod
    def load(path, lr: float = 1e-3) -> "QEstimator":
        spec, weights, _, extra = nn.load_checkpoint(path)
        if extra.get("kind") != "dqn":
            raise ValueError("checkpoint does not hold a value estimator")
        state_dim = spec.layers[0].in_dim
        est = QEstimator(state_dim, extra["actions"], lr=lr)
        est.spec = spec
        est.weights = weights
        est.adam = nn.AdamState(weights)
        return est


def train_step(estimator: QEstimator, batch: list[Experience], discount: float) -> float:
    """One temporal-difference update: targets bootstrap with the max
    next-state Q-value except on terminal transitions."""
    if not batch:
        raise ValueError("empty batch")
    states = np.stack([e.state for e in batch])
    next_states = np.stack([e.next_state for e in batch])
    actions = np.array([e.action for e in batch])
    rewards = np.array([e.reward for e in batch])
    done = np.array([e.done for e in batch])

    q_next = estimator.q_batch(next_states)
    targets = rewards + np.where(done, 0.0, discount * q_next.max(axis=1))

    out, caches = nn.forward_cached(estimator.spec, estimator.weights, states)
    n = len(batch)
    picked = out[np.arange(n), actions]
    td_loss = float(np.mean((picked - targets) ** 2))
    d_out = np.zeros_like(out)
    d_out[np.arange(n), actions] = 2.0 * (picked - targets) / n
    grads = nn.backward(estimator.spec, estimator.weights, caches, d_out)
    nn.adam_step(estimator.weights, grads, estimator.adam, estimator.hyper)
    return td_loss


@dataclass
class EpisodeLog:
    episode: int
    steps: int
    total_reward: float
    mean_reward: float
    final_reward: float
    epsilon: float
    wall_time: float
    phase: str  # warmup | train


def run_episode(env, estimator: QEstimator, epsilon: float, rng,
                kb: KnowledgeBase | None = None, train: bool = False,
                discount: float = 0.99, batch_size: int = 32,
                init_mode: str = "zero", prior_powers=None):
    """Play one episode; optionally store experiences and train per step."""
    state = env.reset(init_mode=init_mode, prior_powers=prior_powers)
    total, count, last_reward = 0.0, 0, 0.0
    done = False
    while not done:
        action = select_action(estimator.q_values(state), epsilon, rng)
        next_state, reward, done, info = env.step(action)
        if kb is not None:
            kb.add(Experience(state, action, reward, next_state, done))
        if train and kb is not None and len(kb) >= batch_size:
            train_step(estimator, kb.sample(batch_size, rng), discount)
        total += reward
        count += 1
        last_reward = reward
        state = next_state
    return total, count, last_reward, info["powers"]


def run_online(env, gains_for, episodes: int, cfg: DqnConfig,
               estimator: QEstimator | None = None):
    """Warmup then interleaved act/store/train over a stream of per-episode
    gains; returns the estimator, per-episode logs, and the knowledge base.

    ``gains_for(episode)`` supplies each episode's channel realization, so
    correlated streams and fresh draws use the same loop.
    """
    rng = stream(cfg.seed, 17)
    if estimator is None:
        estimator = QEstimator(env.state_dim, env.actions, lr=cfg.lr, seed=cfg.seed)
    kb = KnowledgeBase(cfg.kb_capacity)
    logs = []
    prior_powers = None
    t0 = time.perf_counter()
    for episode in range(episodes):
        env.set_gains(gains_for(episode))
        warmup = episode < cfg.warmup_episodes
        eps = cfg.epsilon.value(episode)
        total, steps, final, powers = run_episode(
            env, estimator, eps, rng, kb=kb, train=not warmup,
            discount=cfg.discount, batch_size=cfg.batch_size,
            init_mode=cfg.init_mode, prior_powers=prior_powers)
        prior_powers = powers
        logs.append(EpisodeLog(
            episode=episode, steps=steps, total_reward=total,
            mean_reward=total / max(1, steps), final_reward=final,
            epsilon=eps, wall_time=time.perf_counter() - t0,
            phase="warmup" if warmup else "train"))
    return estimator, logs, kb


def predict_allocation(env, estimator: QEstimator, gains: np.ndarray,
                       init_mode: str = "zero"):
    """Greedy (epsilon = 0) rollout; returns (powers, final reward)."""
    env.set_gains(gains)
    rng = np.random.default_rng(0)  # unused at epsilon 0
    total, steps, final, powers = run_episode(env, estimator, 0.0, rng)
    return powers, final
