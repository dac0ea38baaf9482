"""Hybrid discrete/continuous DDPG for the backup MDP.

The actor emits a softmax over the ``k - 1`` overwritable devices plus a
sigmoid ``u``; the executed action is ``(argmax, 1 + u)``.  Discrete
exploration is epsilon-greedy, continuous exploration adds Ornstein-Uhlenbeck
noise to ``u``.  The task is continuing, so Bellman targets always bootstrap.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple

import numpy as np

from . import env, nn, rng as rngmod
from .errors import InvalidArgument

EPS_START = 1.0
U_MIN = env.MIN_STEP - 1.0


@dataclass
class HyperParams:
    n_eps: int = 600
    n_steps: int = 10000
    lam: float = 5.0
    lr_critic: float = 0.001
    lr_actor: float = 0.0001
    tau: float = 0.001
    gamma: float = 0.99
    eps_d_min: float = 0.1
    d_eps_d: float = 1.0 / 3e6
    eps_c_min: float = 0.1
    d_eps_c: float = 1.0 / 3e6
    mu_ou: float = 0.0
    theta_ou: float = 0.3
    sigma_ou: float = 0.1
    buffer_size: int = 1_000_000
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_eps", "n_steps", "buffer_size", "batch_size"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")
        for name in ("lam", "lr_critic", "lr_actor", "tau", "d_eps_d", "d_eps_c", "theta_ou"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgument(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if self.tau > 1.0:
            raise InvalidArgument(f"tau must be <= 1, got {self.tau!r}")
        for name in ("eps_d_min", "eps_c_min"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")
        if self.sigma_ou < 0:
            raise InvalidArgument("sigma_ou must be non-negative")
        if self.batch_size > self.buffer_size:
            raise InvalidArgument("batch_size must not exceed buffer_size")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


@dataclass
class TransitionRecord:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


class ReplayBuffer:
    """Bounded FIFO of transitions backed by growable numpy arrays."""

    def __init__(self, capacity: int, k: int):
        if capacity < 1:
            raise InvalidArgument("replay buffer capacity must be positive")
        self.capacity = int(capacity)
        self.k = k
        self._alloc = min(self.capacity, 1024)
        self._data = np.empty((self._alloc, 3 * k + 1))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def store(self, state, action, reward: float, next_state) -> None:
        if self._size == self._alloc and self._alloc < self.capacity:
            self._alloc = min(self.capacity, 2 * self._alloc)
            grown = np.empty((self._alloc, self._data.shape[1]))
            grown[: self._size] = self._data[: self._size]
            self._data = grown
        k = self.k
        row = self._data[self._next]
        row[:k] = state
        row[k : 2 * k] = action
        row[2 * k] = reward
        row[2 * k + 1 :] = next_state
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _oldest_first(self) -> np.ndarray:
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self._size) + self._next) % self.capacity

    def records(self) -> list[TransitionRecord]:
        return [self._record(i) for i in self._oldest_first()]

    def _record(self, i: int) -> TransitionRecord:
        k = self.k
        row = self._data[i]
        return TransitionRecord(row[:k].copy(), row[k : 2 * k].copy(), float(row[2 * k]), row[2 * k + 1 :].copy())

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self._size == 0:
            raise InvalidArgument("cannot sample from an empty replay buffer")
        rows = self._data[rng.integers(0, self._size, n)]
        k = self.k
        return Batch(rows[:, :k], rows[:, k : 2 * k], rows[:, 2 * k], rows[:, 2 * k + 1 :])


def batch_from_records(records) -> Batch:
    records = list(records)
    if not records:
        raise InvalidArgument("batch is empty")
    return Batch(
        np.array([r.state for r in records], dtype=float),
        np.array([r.action for r in records], dtype=float),
        np.array([r.reward for r in records], dtype=float),
        np.array([r.next_state for r in records], dtype=float),
    )


@dataclass
class ExplorationState:
    eps_d: float = EPS_START
    eps_c: float = EPS_START
    x: float = 0.0
    mu: float = 0.0
    theta: float = 0.3
    sigma: float = 0.1
    d_eps_d: float = 1.0 / 3e6
    d_eps_c: float = 1.0 / 3e6
    eps_d_min: float = 0.1
    eps_c_min: float = 0.1

    @classmethod
    def from_hyperparams(cls, hp: HyperParams) -> "ExplorationState":
        return cls(
            x=hp.mu_ou, mu=hp.mu_ou, theta=hp.theta_ou, sigma=hp.sigma_ou,
            d_eps_d=hp.d_eps_d, d_eps_c=hp.d_eps_c,
            eps_d_min=hp.eps_d_min, eps_c_min=hp.eps_c_min,
        )

    def anneal(self) -> None:
        self.eps_d = max(self.eps_d_min, self.eps_d - self.d_eps_d)
        self.eps_c = max(self.eps_c_min, self.eps_c - self.d_eps_c)


def ou_step(ex: ExplorationState, rng: np.random.Generator):
    """Advance the OU process one step; returns ``(x, ex)`` with ``ex`` updated in place."""
    ex.x = ex.x + ex.theta * (ex.mu - ex.x) + ex.sigma * float(rng.standard_normal())
    return ex.x, ex


def _clamp_u(u: float) -> float:
    return min(max(u, U_MIN), 1.0)


def greedy_action(actor: nn.NetworkParams, state) -> tuple[int, float]:
    out, _ = nn.forward(actor, state)
    out = out[0]
    return int(np.argmax(out[:-1])), _clamp_u(float(out[-1]))


def _explore(actor, s: np.ndarray, ex: ExplorationState, rng: np.random.Generator,
             greedy=None) -> tuple[int, float]:
    d, u = greedy(s) if greedy is not None else greedy_action(actor, s)
    if float(rng.random()) < ex.eps_d:
        d = int(rng.integers(0, s.shape[0] - 1))
    noise, _ = ou_step(ex, rng)
    u = _clamp_u(u + ex.eps_c * noise)
    ex.anneal()
    return d, u


def select_action(actor: nn.NetworkParams, state: env.Snapshot, ex: ExplorationState,
                  mode: str = "greedy", rng: np.random.Generator | None = None):
    """Returns ``(UpdateAction, executed encoding, ex)``."""
    if actor.k != state.k:
        raise InvalidArgument(f"actor built for k={actor.k}, state has k={state.k}")
    if mode == "explore":
        if rng is None:
            raise InvalidArgument("explore mode needs a random generator")
        d, u = _explore(actor, state.intervals, ex, rng)
    elif mode == "greedy":
        d, u = greedy_action(actor, state.intervals)
    else:
        raise InvalidArgument(f"unknown mode {mode!r}")
    action = env.UpdateAction(d, 1.0 + u)
    enc = np.zeros(state.k)
    enc[d] = 1.0
    enc[-1] = action.step - 1.0
    return action, enc, ex


def _greedy_encoding(actor_out: np.ndarray) -> np.ndarray:
    enc = np.zeros_like(actor_out)
    rows = np.arange(actor_out.shape[0])
    enc[rows, np.argmax(actor_out[:, :-1], axis=1)] = 1.0
    enc[:, -1] = np.clip(actor_out[:, -1], U_MIN, 1.0)
    return enc


class Agent:
    """Online and target actor/critic networks, their optimizers and the replay buffer."""

    def __init__(self, k: int, hp: HyperParams | None = None, dtype=np.float32):
        hp = hp or HyperParams()
        hp.validate()
        self.k = k
        self.hp = hp
        init_rng = rngmod.stream(hp.seed, "init")
        self.actor = nn.init_actor(k, init_rng, dtype=dtype)
        self.critic = nn.init_critic(k, init_rng, dtype=dtype)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = nn.init_adam(self.actor, hp.lr_actor)
        self.critic_opt = nn.init_adam(self.critic, hp.lr_critic)
        self.exploration = ExplorationState.from_hyperparams(hp)
        self.rng = rngmod.stream(hp.seed, "train")
        self.buffer = ReplayBuffer(hp.buffer_size, k)
        self.total_steps = 0
        self._trainer = None

    def policy(self) -> "GreedyPolicy":
        return GreedyPolicy(self.actor)


class GreedyPolicy:
    """Deterministic policy reading the actor's heads."""

    def __init__(self, actor: nn.NetworkParams):
        self.actor = actor
        self.k = actor.k

    def reset(self) -> None:
        pass

    def act(self, state: env.Snapshot) -> env.UpdateAction:
        d, u = greedy_action(self.actor, state.intervals)
        return env.UpdateAction(d, 1.0 + u)


def critic_update(agent: Agent, batch: Batch) -> float:
    """One Adam step on the mean squared Bellman error; returns the pre-step loss."""
    if len(batch.rewards) == 0:
        raise InvalidArgument("batch is empty")
    y = bellman_targets(agent, batch)
    q, cache = nn.forward(agent.critic, batch.states, batch.actions)
    err = q[:, 0] - y
    n = err.shape[0]
    grads, _ = nn.backward(agent.critic, cache, (2.0 / n) * err[:, None], inputs=False)
    nn.adam_step(agent.critic, grads, agent.critic_opt)
    return float(np.mean(err * err))


def bellman_targets(agent: Agent, batch: Batch) -> np.ndarray:
    a_next, _ = nn.forward(agent.actor_target, batch.next_states)
    q_next, _ = nn.forward(agent.critic_target, batch.next_states, _greedy_encoding(a_next))
    return batch.rewards + agent.hp.gamma * q_next[:, 0]


def policy_gradient(actor: nn.NetworkParams, critic, states: np.ndarray):
    """Gradient of ``mean Q(s, actor(s))`` w.r.t. the actor parameters, and that mean.

    ``critic`` is a critic network, or any object whose
    ``action_gradient(states, actions)`` returns per-row values and their
    gradients w.r.t. the actions (a frozen analytic critic, say).
    """
    out, a_cache = nn.forward(actor, states)
    n = out.shape[0]
    if isinstance(critic, nn.NetworkParams):
        q, c_cache = nn.forward(critic, states, out)
        _, (_, dq_da) = nn.backward(critic, c_cache, np.full((n, 1), 1.0 / n), params=False)
    else:
        q, dq_da = critic.action_gradient(states, out)
        dq_da = np.asarray(dq_da, dtype=out.dtype) / n
    grads, _ = nn.backward(actor, a_cache, dq_da, inputs=False)
    return grads, float(np.mean(q))


def actor_update(agent: Agent, batch: Batch) -> float:
    """One Adam ascent step on ``mean Q(s, actor(s))``; returns the pre-step objective."""
    if len(batch.states) == 0:
        raise InvalidArgument("batch is empty")
    grads, objective = policy_gradient(agent.actor, agent.critic, batch.states)
    nn.adam_step(agent.actor, -grads, agent.actor_opt)
    return objective


@dataclass
class EpisodeLog:
    episode: int
    mean_reward: float
    mean_q_reporting: float
    epsilon_d: float
    epsilon_c: float
    critic_loss: float


LOG_COLUMNS = ["episode", "mean_reward", "mean_q_reporting", "epsilon_d", "epsilon_c", "critic_loss"]


@dataclass
class TrainingLog:
    episodes: list[EpisodeLog] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.episodes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for e in self.episodes:
            row = asdict(e)
            w.writerow([row["episode"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def run_episode(agent: Agent, fused: bool = True) -> EpisodeLog:
    """One episode from the uniform state.

    ``fused`` runs each update through the compiled kernel; ``False`` uses the
    numpy reference route (same maths, far slower).
    """
    hp = agent.hp
    k = agent.k
    ex = agent.exploration
    ex.x = hp.mu_ou
    rng = agent.rng
    buf = agent.buffer
    actor = agent.actor
    lam = hp.lam
    s = np.full(k, 1.0 / k)
    rewards = 0.0
    q_sum = 0.0
    losses = 0.0
    n_updates = 0
    trainer = _fused_trainer(agent) if fused else None
    greedy = trainer.greedy if fused else None
    for _ in range(hp.n_steps):
        d, u = _explore(actor, s, ex, rng, greedy)
        step = 1.0 + u
        enc = np.zeros(k)
        enc[d] = 1.0
        enc[-1] = u
        s2 = env.step_intervals(s, d, step)
        m = float(s2.max())
        r = env.reward_from_max(m, k, lam)
        buf.store(s, enc, r, s2)
        rewards += r
        q_sum += (k + 1) * m
        agent.total_steps += 1
        if len(buf) >= hp.batch_size:
            batch = buf.sample(hp.batch_size, rng)
            if fused:
                losses += trainer.update(batch)[0]
            else:
                losses += critic_update(agent, batch)
                actor_update(agent, batch)
                nn.soft_update(agent.critic_target, agent.critic, hp.tau)
                nn.soft_update(agent.actor_target, agent.actor, hp.tau)
            n_updates += 1
        s = s2
    return EpisodeLog(
        0,
        rewards / hp.n_steps,
        q_sum / hp.n_steps,
        ex.eps_d,
        ex.eps_c,
        losses / n_updates if n_updates else math.nan,
    )


def _fused_trainer(agent: Agent):
    if getattr(agent, "_trainer", None) is None:
        from .fused import FusedTrainer
        agent._trainer = FusedTrainer(agent)
    return agent._trainer


def train(hp: HyperParams, k: int, callback: Callable[[EpisodeLog], None] | None = None,
          fused: bool = True):
    """Train from scratch; returns ``(agent, TrainingLog)``.  Deterministic given ``hp``."""
    hp.validate()
    env.new_uniform(k)
    agent = Agent(k, hp)
    log = TrainingLog()
    for ep in range(hp.n_eps):
        entry = run_episode(agent, fused)
        entry.episode = ep
        log.episodes.append(entry)
        if callback is not None:
            callback(entry)
    return agent, log
