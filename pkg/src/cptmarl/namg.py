"""Network aggregative Markov games.

A game is fully described by :class:`GameSpec`.  Rewards depend on the
agent's own action and the graph-weighted aggregate of its neighbours'
actions; transitions depend on the state and the joint action.

:class:`AgentView` is what a single agent can know about the game without
seeing anyone else's policy: the lattice of aggregate values it can observe,
its reward table indexed by (state, own action, aggregate), and a transition
model conditioned on those same quantities.
"""
from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_NAME = "namg-spec"
FORMAT_VERSION = 1
AGGREGATE_DECIMALS = 9


def aggregate_key(value: float) -> float:
    """Canonical float used to bin aggregate observations."""
    return round(float(value), AGGREGATE_DECIMALS) + 0.0


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Per-agent reward coefficients.

    ``r_self`` has shape (agents, states) or, when the self reward also varies
    with the own action, (agents, states, actions).  ``r_com`` is (agents, states).
    """

    r_self: np.ndarray
    r_com: np.ndarray

    def __post_init__(self):
        r_self = np.asarray(self.r_self, dtype=float)
        r_com = np.asarray(self.r_com, dtype=float)
        if not (np.all(np.isfinite(r_self)) and np.all(np.isfinite(r_com))):
            raise ValueError("reward coefficients must be finite")
        if r_self.ndim not in (2, 3) or r_com.ndim != 2 or r_self.shape[:2] != r_com.shape:
            raise ValueError("r_self must be (N, S) or (N, S, A) and r_com (N, S)")
        object.__setattr__(self, "r_self", r_self)
        object.__setattr__(self, "r_com", r_com)

    @property
    def by_action(self) -> bool:
        return self.r_self.ndim == 3

    def self_term(self, agent: int, state: int, own_action: int) -> float:
        if self.by_action:
            return float(self.r_self[agent, state, own_action])
        return float(self.r_self[agent, state])


@dataclass(frozen=True)
class Observation:
    state: int
    own_action: int
    aggregate: float
    reward: float
    next_state: int


@dataclass(frozen=True, eq=False)
class GameSpec:
    n_agents: int
    n_states: int
    n_actions: int
    graph_weights: np.ndarray
    transition: np.ndarray
    reward_model: RewardModel
    discount: float
    initial_dist: np.ndarray
    r_max: float

    def __post_init__(self):
        n, s, a = self.n_agents, self.n_states, self.n_actions
        if min(n, s, a) < 1:
            raise ValueError("n_agents, n_states and n_actions must be positive")
        w = np.asarray(self.graph_weights, dtype=float)
        if w.shape != (n, n):
            raise ValueError(f"graph_weights must be {n}x{n}")
        if np.any(np.diag(w) != 0):
            raise ValueError("an agent cannot be its own neighbour (diagonal of graph_weights must be 0)")
        p = np.asarray(self.transition, dtype=float)
        if p.shape != (s, a ** n, s):
            raise ValueError(f"transition must have shape ({s}, {a ** n}, {s}), got {p.shape}")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=-1) - 1.0)) > 1e-12:
            raise ValueError("every transition row must be a probability distribution")
        p0 = np.asarray(self.initial_dist, dtype=float)
        if p0.shape != (s,) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-12:
            raise ValueError("initial_dist must be a distribution over states")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        rm = self.reward_model
        if rm.r_com.shape != (n, s) or (rm.by_action and rm.r_self.shape != (n, s, a)):
            raise ValueError("reward model shape does not match the game")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")
        for name, arr in (("graph_weights", w), ("transition", p), ("initial_dist", p0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def joint_shape(self) -> tuple[int, ...]:
        return (self.n_actions,) * self.n_agents

    def joint_index(self, joint_action) -> int:
        return int(np.ravel_multi_index(tuple(int(a) for a in joint_action), self.joint_shape))

    __hash__ = object.__hash__

    def __eq__(self, other):
        if not isinstance(other, GameSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        rm = self.reward_model
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "n_agents": self.n_agents,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": float(self.discount),
            "r_max": float(self.r_max),
            "initial_dist": self.initial_dist.tolist(),
            "graph_weights": self.graph_weights.tolist(),
            "reward_model": {"r_self": rm.r_self.tolist(), "r_com": rm.r_com.tolist()},
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GameSpec":
        if d.get("format") != FORMAT_NAME or d.get("version") != FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT_NAME} v{FORMAT_VERSION} document")
        return cls(
            n_agents=int(d["n_agents"]),
            n_states=int(d["n_states"]),
            n_actions=int(d["n_actions"]),
            graph_weights=np.array(d["graph_weights"], dtype=float),
            transition=np.array(d["transition"], dtype=float),
            reward_model=RewardModel(np.array(d["reward_model"]["r_self"], dtype=float),
                                     np.array(d["reward_model"]["r_com"], dtype=float)),
            discount=float(d["discount"]),
            initial_dist=np.array(d["initial_dist"], dtype=float),
            r_max=float(d["r_max"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "GameSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- game dynamics -----------------------------------------------------------------

def aggregate(agent: int, joint_action, spec: GameSpec) -> float:
    """Weighted sum of the neighbours' actions seen by ``agent``."""
    return float(spec.graph_weights[agent] @ np.asarray(joint_action, dtype=float))


def reward(agent: int, state: int, own_action: int, aggregate_value: float, spec: GameSpec) -> float:
    rm = spec.reward_model
    r = rm.self_term(agent, state, own_action) + aggregate_value * rm.r_com[agent, state] * own_action
    return float(np.clip(r, -spec.r_max, spec.r_max))


def step(state: int, joint_action, spec: GameSpec, rng: np.random.Generator):
    """Advance the game one step; returns ``(next_state, observations)``."""
    row = spec.transition[state, spec.joint_index(joint_action)]
    next_state = int(rng.choice(spec.n_states, p=row))
    observations = []
    for i in range(spec.n_agents):
        sigma = aggregate(i, joint_action, spec)
        observations.append(Observation(state, int(joint_action[i]), sigma,
                                        reward(i, state, int(joint_action[i]), sigma, spec),
                                        next_state))
    return next_state, observations


def generate_experiment(seed: int = 0, *, n_agents: int = 4, n_states: int = 5, n_actions: int = 3,
                        discount: float = 0.9, initial_state: int | None = 0,
                        reward_by_action: bool = False) -> GameSpec:
    """Random loss-aversion experiment game.

    Fully connected graph with equal neighbour weights, self rewards drawn
    Normal(0.5, 0.1), community coefficients 5 * Uniform[-0.5, 0.5], and a
    transition kernel whose rows are Dirichlet(1, ..., 1) draws (full support,
    hence ergodic).  ``initial_state=None`` gives a uniform start distribution.
    """
    rng = np.random.default_rng(seed)
    if n_agents > 1:
        w = np.full((n_agents, n_agents), 1.0 / (n_agents - 1))
    else:
        w = np.zeros((1, 1))
    np.fill_diagonal(w, 0.0)
    self_shape = (n_agents, n_states, n_actions) if reward_by_action else (n_agents, n_states)
    r_self = rng.normal(0.5, 0.1, size=self_shape)
    r_com = 5.0 * rng.uniform(-0.5, 0.5, size=(n_agents, n_states))
    raw = rng.exponential(1.0, size=(n_states, n_actions ** n_agents, n_states))
    transition = raw / raw.sum(axis=-1, keepdims=True)
    if initial_state is None:
        p0 = np.full(n_states, 1.0 / n_states)
    else:
        p0 = np.zeros(n_states)
        p0[initial_state] = 1.0
    a_max = n_actions - 1
    sigma_max = float(np.max(w.sum(axis=1))) * a_max
    r_max = float(np.max(np.abs(r_self)) + np.max(np.abs(r_com)) * sigma_max * a_max)
    return GameSpec(n_agents, n_states, n_actions, w, transition, RewardModel(r_self, r_com),
                    discount, p0, max(r_max, 1e-12))


# -- the single agent's view ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AgentView:
    """Quantities of the game indexed by (state, own action, aggregate index).

    The conditional transition model averages the joint kernel uniformly over
    all neighbour action profiles that produce the same aggregate, so it uses
    the kernel and the graph only.  It is exact whenever the aggregate pins
    down the neighbours' joint action (e.g. two agents).
    """

    spec: GameSpec
    agent: int
    grid: np.ndarray            # (K,) observable aggregate values, ascending
    kernel: np.ndarray          # (S, A, K, S)
    rewards: np.ndarray         # (S, A, K)
    profile_index: np.ndarray   # (A**N,) aggregate index of every joint action
    _lookup: dict = field(repr=False)

    @property
    def n_aggregates(self) -> int:
        return self.grid.size

    def aggregate_index(self, value: float) -> int:
        try:
            return self._lookup[aggregate_key(value)]
        except KeyError:
            raise ValueError(f"aggregate {value!r} is not observable by agent {self.agent}") from None

    def exact_sigma(self, policies) -> np.ndarray:
        """Aggregate distribution per state, (S, K), induced by all agents' policies.

        ``policies`` is a sequence of (S, A) probability tables; the agent's own
        entry is ignored.
        """
        spec = self.spec
        out = np.zeros((spec.n_states, self.n_aggregates))
        for j, joint in enumerate(itertools.product(range(spec.n_actions), repeat=spec.n_agents)):
            if joint[self.agent] != 0:
                continue
            prob = np.ones(spec.n_states)
            for other, a in enumerate(joint):
                if other != self.agent:
                    prob = prob * np.asarray(policies[other])[:, a]
            out[:, self.profile_index[j]] += prob
        return out

    def sample(self, state: int, own_action: int, k: int, rng: np.random.Generator, size: int = 1):
        """Simulator draws of ``(rewards, next_states)`` for one (state, action, aggregate) key."""
        nxt = rng.choice(self.spec.n_states, size=size, p=self.kernel[state, own_action, k])
        return np.full(size, self.rewards[state, own_action, k]), nxt


@functools.lru_cache(maxsize=32)
def _agent_view(spec: GameSpec, agent: int) -> AgentView:
    n, s, a = spec.n_agents, spec.n_states, spec.n_actions
    joints = np.array(list(itertools.product(range(a), repeat=n)), dtype=float)
    sigmas = joints @ spec.graph_weights[agent]
    keys = np.array([aggregate_key(v) for v in sigmas])
    grid = np.unique(keys)
    lookup = {float(v): i for i, v in enumerate(grid)}
    profile_index = np.array([lookup[float(v)] for v in keys])
    own = joints[:, agent].astype(int)

    total = np.zeros((s, a, grid.size, s))
    count = np.zeros((a, grid.size))
    for j in range(joints.shape[0]):
        total[:, own[j], profile_index[j], :] += spec.transition[:, j, :]
        count[own[j], profile_index[j]] += 1
    kernel = total / count[None, :, :, None]
    kernel /= kernel.sum(axis=-1, keepdims=True)

    rewards = np.empty((s, a, grid.size))
    for st in range(s):
        for act in range(a):
            for k, sig in enumerate(grid):
                rewards[st, act, k] = reward(agent, st, act, float(sig), spec)
    for arr in (grid, kernel, rewards, profile_index):
        arr.setflags(write=False)
    return AgentView(spec, agent, grid, kernel, rewards, profile_index, lookup)


def agent_view(spec: GameSpec, agent: int) -> AgentView:
    return _agent_view(spec, int(agent))
