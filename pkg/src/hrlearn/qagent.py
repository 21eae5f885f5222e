"""Q-learning agents for the cart-pole task.

Two value networks share one control loop:

* ``method="hr"``: an ELM whose output weights are initialized with an HR
  solve on the first minibatch and then tracked with the incremental ELM
  recursion (``reg_order=0`` gives plain EQLM),
* ``method="gradq"``: a single-hidden-layer sigmoid Q-network trained by
  stochastic gradient descent on the mean squared TD error.

Both use epsilon-greedy exploration with a linear decay, an alternating
heuristic policy for the first ``heuristic_episodes`` episodes, a sliding
replay window and a target network refreshed every ``target_update_steps``
environment steps.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as la
from scipy.special import expit

from . import elmnet
from .elmnet import Batch, ElmModel, TrainState
from .errors import ConfigError, HrError
from .regcore import HrConfig, Scalar

METHODS = ("hr", "gradq")
REG_PARAM_KINDS = ("mu", "mu_bar")


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayMemory:
    """Sliding window of the most recent ``window`` transitions."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("memory window must be >= 1")
        self.window = int(window)
        self.buffer: deque[Transition] = deque(maxlen=self.window)

    def __len__(self) -> int:
        return len(self.buffer)

    def __iter__(self):
        return iter(self.buffer)

    def push(self, transition: Transition) -> None:
        self.buffer.append(transition)

    def sample(self, rng: np.random.Generator, n: int) -> list[Transition]:
        """``n`` uniform draws; with replacement only while the memory holds fewer than ``n``."""
        size = len(self.buffer)
        if size == 0:
            raise ValueError("cannot sample from an empty memory")
        idx = rng.choice(size, size=n, replace=size < n)
        return [self.buffer[int(i)] for i in idx]


@dataclass(frozen=True)
class AgentConfig:
    """Agent hyperparameters. Defaults are the ELM column of the reference setup.

    ``reg_param`` is read according to ``reg_param_kind``: ``"mu"`` means the
    ridge is ``I / reg_param``, ``"mu_bar"`` means the ridge is
    ``reg_param * I``. ``state_scale``/``state_offset`` define an optional
    affine map applied to observations before they reach the network.
    """

    hidden_nodes: int = 25
    reg_param: float = 1.827e-5
    reg_param_kind: str = "mu"
    reg_order: int = 1
    eps_initial: float = 0.599
    eps_final: float = 0.05
    eps_episodes: int = 360
    discount: float = 0.93
    minibatch: int = 2
    target_update_steps: int = 48
    heuristic_episodes: int = 10
    memory_window: int = 10000
    learning_rate: float | None = None
    activation: str = "sigmoid"
    state_scale: tuple[float, ...] | None = None
    state_offset: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not 0 <= self.eps_final <= self.eps_initial <= 1:
            problems.append("need 0 <= eps_final <= eps_initial <= 1")
        if not 0 < self.discount <= 1:
            problems.append("discount must be in (0, 1]")
        if self.minibatch < 1:
            problems.append("minibatch must be >= 1")
        if self.target_update_steps < 1:
            problems.append("target_update_steps must be >= 1")
        if self.hidden_nodes < 1:
            problems.append("hidden_nodes must be >= 1")
        if self.eps_episodes < 1:
            problems.append("eps_episodes must be >= 1")
        if self.heuristic_episodes < 0:
            problems.append("heuristic_episodes must be >= 0")
        if self.memory_window < 1:
            problems.append("memory_window must be >= 1")
        if self.reg_order < 0:
            problems.append("reg_order must be >= 0")
        if not self.reg_param > 0:
            problems.append("reg_param must be positive")
        if self.reg_param_kind not in REG_PARAM_KINDS:
            problems.append(f"reg_param_kind must be one of {REG_PARAM_KINDS}")
        if self.activation not in elmnet.ACTIVATIONS:
            problems.append(f"unknown activation {self.activation!r}")
        if self.learning_rate is not None and self.learning_rate < 0:
            problems.append("learning_rate must be >= 0")
        for name in ("state_scale", "state_offset"):
            v = getattr(self, name)
            if v is not None:
                if len(v) != 4:
                    problems.append(f"{name} must have 4 entries")
                object.__setattr__(self, name, tuple(float(x) for x in v))
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def ridge(self) -> float:
        """Diagonal value of the ridge matrix ``R = ridge * I``."""
        return 1.0 / self.reg_param if self.reg_param_kind == "mu" else self.reg_param

    @classmethod
    def elm(cls, **overrides) -> "AgentConfig":
        return cls(**overrides)

    @classmethod
    def eqlm(cls, **overrides) -> "AgentConfig":
        return cls(**{"reg_order": 0, **overrides})

    @classmethod
    def qnetwork(cls, **overrides) -> "AgentConfig":
        base = dict(hidden_nodes=29, learning_rate=0.0065, eps_initial=0.670, eps_episodes=400,
                    discount=0.99, minibatch=26, target_update_steps=70)
        return cls(**{**base, **overrides})


def epsilon(config: AgentConfig, episode: int) -> float:
    if episode < 0:
        raise ValueError("episode must be >= 0")
    if episode >= config.eps_episodes:
        return config.eps_final
    return config.eps_initial - (episode / config.eps_episodes) * (config.eps_initial - config.eps_final)


def heuristic_action(t: int) -> int:
    """Alternate push-left, push-right."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return t % 2


# Gradient baseline -----------------------------------------------------------------


@dataclass(frozen=True)
class QNetwork:
    """``Q(x) = sigmoid(x W1^T + b1) W2 + b2`` with every layer trainable."""

    W1: np.ndarray  # (L, d)
    b1: np.ndarray  # (L,)
    W2: np.ndarray  # (L, k)
    b2: np.ndarray  # (k,)

    @property
    def shapes(self):
        return [self.W1.shape, self.b1.shape, self.W2.shape, self.b2.shape]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1.ravel(), self.W2.ravel(), self.b2.ravel()])

    def from_flat(self, p) -> "QNetwork":
        p = np.asarray(p, dtype=float)
        parts, i = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            parts.append(p[i:i + size].reshape(shape).copy())
            i += size
        return QNetwork(*parts)

    def hidden(self, X) -> np.ndarray:
        return expit(np.atleast_2d(X) @ self.W1.T + self.b1)

    def predict(self, X) -> np.ndarray:
        return self.hidden(X) @ self.W2 + self.b2


def init_qnetwork(d: int, L: int, k: int, rng: np.random.Generator) -> QNetwork:
    """Hidden layer as in :func:`elmnet.init_elm`; output layer ~ U(-0.1, 0.1), zero bias."""
    return QNetwork(
        W1=rng.uniform(-1.0, 1.0, size=(L, d)),
        b1=rng.uniform(0.0, 1.0, size=L),
        W2=rng.uniform(-0.1, 0.1, size=(L, k)),
        b2=np.zeros(k),
    )


# Shared pieces ---------------------------------------------------------------------


@dataclass(frozen=True)
class TargetSnapshot:
    """Frozen copy of the value network used for bootstrapped targets."""

    network: ElmModel | QNetwork

    @property
    def beta_target(self) -> np.ndarray:
        net = self.network
        return net.output_weights if isinstance(net, ElmModel) else net.W2


def q_values(network, states) -> np.ndarray:
    X = np.atleast_2d(np.asarray(states, dtype=float))
    if isinstance(network, ElmModel):
        return elmnet.predict(network, X)
    return network.predict(X)


def snapshot(network) -> TargetSnapshot:
    if isinstance(network, ElmModel):
        return TargetSnapshot(network.with_beta(np.array(network.output_weights, copy=True)))
    return TargetSnapshot(network.from_flat(network.flat()))


def select_action(network, state, eps: float, rng: np.random.Generator, episode: int,
                  config: AgentConfig, t: int = 0) -> int:
    """Heuristic during warm-up, then epsilon-greedy with ties going to action 0."""
    if episode < config.heuristic_episodes:
        return heuristic_action(t)
    if rng.random() < eps:
        return int(rng.integers(2))
    return int(np.argmax(q_values(network, state)[0]))


def td_targets(network, target: TargetSnapshot, minibatch: Sequence[Transition], gamma: float) -> Batch:
    """Regression batch whose only changed entry per row is the taken action's value."""
    if len(minibatch) == 0:
        raise ValueError("minibatch must be nonempty")
    S = np.array([tr.state for tr in minibatch], dtype=float)
    S2 = np.array([tr.next_state for tr in minibatch], dtype=float)
    actions = np.array([tr.action for tr in minibatch], dtype=int)
    rewards = np.array([tr.reward for tr in minibatch], dtype=float)
    terminal = np.array([tr.terminal for tr in minibatch], dtype=bool)
    Y = q_values(network, S)
    bootstrap = q_values(target.network, S2).max(axis=1)
    Y[np.arange(len(minibatch)), actions] = rewards + np.where(terminal, 0.0, gamma * bootstrap)
    return Batch(S, Y)


def _td_parts(qnet: QNetwork, target: TargetSnapshot, minibatch, gamma):
    batch = td_targets(qnet, target, minibatch, gamma)
    actions = np.array([tr.action for tr in minibatch], dtype=int)
    rows = np.arange(len(minibatch))
    return batch.inputs, actions, batch.targets[rows, actions], rows


def td_loss(qnet: QNetwork, target: TargetSnapshot, minibatch, gamma: float) -> float:
    """Mean squared TD error over the minibatch, targets held fixed."""
    X, actions, y, rows = _td_parts(qnet, target, minibatch, gamma)
    delta = y - qnet.predict(X)[rows, actions]
    return float(np.mean(delta ** 2))


def td_loss_grad(qnet: QNetwork, target: TargetSnapshot, minibatch, gamma: float) -> QNetwork:
    """Analytic gradient of :func:`td_loss`, packed as a ``QNetwork``."""
    X, actions, y, rows = _td_parts(qnet, target, minibatch, gamma)
    n = len(minibatch)
    Hd = qnet.hidden(X)
    delta = y - (Hd @ qnet.W2 + qnet.b2)[rows, actions]
    dQ = np.zeros((n, qnet.W2.shape[1]))
    dQ[rows, actions] = -2.0 * delta / n
    gW2 = Hd.T @ dQ
    gb2 = dQ.sum(axis=0)
    dZ = (dQ @ qnet.W2.T) * Hd * (1.0 - Hd)
    gW1 = dZ.T @ X
    gb1 = dZ.sum(axis=0)
    return QNetwork(gW1, gb1, gW2, gb2)


def gradient_q_update(qnet: QNetwork, minibatch, gamma: float, alpha: float,
                      target: TargetSnapshot | None = None) -> QNetwork:
    """One SGD step of rate ``alpha`` on the mean squared TD error."""
    if target is None:
        target = snapshot(qnet)
    g = td_loss_grad(qnet, target, minibatch, gamma)
    return qnet.from_flat(qnet.flat() - alpha * g.flat())


# Control loop ----------------------------------------------------------------------


class EpisodeRecord(NamedTuple):
    reward: float
    steps: int
    target_refreshes: int
    error: str | None = None


@dataclass
class AgentState:
    """Mutable state of one learning run; owned by a single control loop."""

    config: AgentConfig
    method: str
    network: ElmModel | QNetwork
    target: TargetSnapshot
    memory: ReplayMemory
    rng: np.random.Generator
    train: TrainState | None = None
    global_step: int = 0
    episode: int = 0
    failed: str | None = None
    history: list = field(default_factory=list)

    @property
    def step0(self) -> bool:
        return self.method == "hr" and self.train is None


def new_agent(config: AgentConfig, method: str = "hr",
              rng: np.random.Generator | None = None) -> AgentState:
    """Build an agent whose network and exploration draw from ``rng``.

    Without ``rng`` a generator is seeded from ``config.seed``.
    """
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}")
    if method == "gradq" and config.learning_rate is None:
        raise ConfigError("gradq needs a learning_rate")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    init_rng, act_rng = rng.spawn(2)
    if method == "hr":
        network = elmnet.init_elm(4, config.hidden_nodes, 2, seed=init_rng,
                                  activation=config.activation)
    else:
        network = init_qnetwork(4, config.hidden_nodes, 2, init_rng)
    return AgentState(config=config, method=method, network=network, target=snapshot(network),
                      memory=ReplayMemory(config.memory_window), rng=act_rng)


def observe(config: AgentConfig, state) -> np.ndarray:
    """Apply the optional affine observation map."""
    s = np.asarray(state, dtype=float)
    if config.state_scale is not None:
        s = s * np.asarray(config.state_scale)
    if config.state_offset is not None:
        s = s + np.asarray(config.state_offset)
    return s


def _learn(agent: AgentState, minibatch) -> None:
    cfg = agent.config
    if agent.method == "gradq":
        agent.network = gradient_q_update(agent.network, minibatch, cfg.discount,
                                          cfg.learning_rate, agent.target)
        return
    batch = td_targets(agent.network, agent.target, minibatch, cfg.discount)
    if agent.train is None:
        hr_cfg = HrConfig(order=cfg.reg_order)
        agent.train = elmnet.ihr_init(agent.network, batch, Scalar(cfg.ridge), hr_cfg)
    else:
        agent.train = elmnet.eqlm_update(agent.train, batch)
    agent.network = agent.network.with_beta(agent.train.beta)


def run_episode(agent: AgentState, env, config: AgentConfig | None = None) -> EpisodeRecord:
    """Play one episode, learning after every step.

    ``env`` must be reset by the caller and follow the ``step(action) ->
    (state, reward, terminal)`` contract; a ``truncated`` attribute, when
    present, marks time-limit endings, which keep bootstrapping.
    Numerical failures stop the episode and are reported in ``error``; the
    agent is then marked as failed.
    """
    cfg = config or agent.config
    eps = epsilon(cfg, agent.episode)
    s = observe(cfg, env.state)
    total, t, refreshes = 0.0, 0, 0
    error = None
    done = False
    while not done:
        a = select_action(agent.network, s, eps, agent.rng, agent.episode, cfg, t)
        nxt, r, done = env.step(a)
        s2 = observe(cfg, nxt)
        failed = done and not getattr(env, "truncated", False)
        agent.memory.push(Transition(s, a, float(r), s2, failed))
        total += r
        t += 1
        try:
            _learn(agent, agent.memory.sample(agent.rng, cfg.minibatch))
        except (HrError, la.LinAlgError, FloatingPointError) as exc:
            error = f"{type(exc).__name__}: {exc}"
            agent.failed = error
            break
        agent.global_step += 1
        if agent.global_step % cfg.target_update_steps == 0:
            agent.target = snapshot(agent.network)
            refreshes += 1
        s = s2
    agent.episode += 1
    record = EpisodeRecord(total, t, refreshes, error)
    agent.history.append(record)
    return record


def dataclass_fields(cls=AgentConfig) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]
