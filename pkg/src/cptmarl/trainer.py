"""Distributed nested CPT actor-critic and the loss-aversion scenarios.

Every round is lock-step: all agents draw actions from their own policies
and rng streams, the environment steps once, and then each agent updates
its own store, aggregate statistics, critic and actor.  Agents only ever see
the shared state, their own observation and the broadcast actions.
"""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .actor import SigmaDistribution, VisitationError, actor_step, grad_value, softmax_policy
from .cpt import CptParams
from .critic import critic_step, sampled_value_estimate
from .namg import GameSpec, agent_view, generate_experiment, step
from .store import ExperienceStore

__all__ = [
    "ExperienceStore", "LearningSchedule", "TrainOptions", "TrainingResult", "lr", "train",
    "SCENARIOS", "scenario_params", "ScenarioSummary", "run_scenarios",
]


@dataclass(frozen=True)
class LearningSchedule:
    """Polynomially decaying step sizes ``scale / (1 + t)**exponent``.

    Exponents in (0.5, 1] make both series diverge while their squares
    converge; a larger actor exponent makes the actor the slow timescale.
    """

    cr_scale: float = 0.5
    cr_exponent: float = 0.6
    ac_scale: float = 0.05
    ac_exponent: float = 0.9

    def __post_init__(self):
        for name in ("cr_exponent", "ac_exponent"):
            e = getattr(self, name)
            if not 0.5 < e <= 1.0:
                raise ValueError(f"{name} must lie in (0.5, 1], got {e!r}")
        if not self.ac_exponent > self.cr_exponent:
            raise ValueError("ac_exponent must exceed cr_exponent (actor on the slower timescale)")
        if not 0 < self.cr_scale <= 1:
            raise ValueError("cr_scale must lie in (0, 1]")
        if not self.ac_scale > 0:
            raise ValueError("ac_scale must be positive")

    def rates(self, t: int) -> tuple[float, float]:
        if t < 0:
            raise ValueError("t must be non-negative")
        return self.cr_scale / (1.0 + t) ** self.cr_exponent, self.ac_scale / (1.0 + t) ** self.ac_exponent


def lr(schedule: LearningSchedule, t: int) -> tuple[float, float]:
    return schedule.rates(t)


@dataclass(frozen=True)
class TrainOptions:
    store_threshold: int = 32
    reward_source: str = "store"          # or "model"
    gradient_mode: str = "chain_rule"     # or "literal"
    visitation: str = "normalized"        # or "exact"
    u_cap: float = 1e3
    grad_tol: float = 1e-4
    patience: int = 100

    def __post_init__(self):
        if self.reward_source not in ("store", "model"):
            raise ValueError("reward_source must be 'store' or 'model'")
        if self.gradient_mode not in ("chain_rule", "literal"):
            raise ValueError("gradient_mode must be 'chain_rule' or 'literal'")
        if self.visitation not in ("normalized", "exact"):
            raise ValueError("visitation must be 'normalized' or 'exact'")
        if self.store_threshold < 1 or self.patience < 1:
            raise ValueError("store_threshold and patience must be positive")


@dataclass
class TrainingResult:
    thetas: list[np.ndarray]
    values: list[np.ndarray]
    states: np.ndarray          # (T,) state at each iteration
    actions: np.ndarray         # (T, N)
    value_trace: np.ndarray     # (T, N, S) value tables after the critic step
    td_errors: np.ndarray       # (T, N)
    grad_norms: np.ndarray      # (T, N), NaN while the actor is idle
    seed: int
    converged: bool
    wall_clock: float = field(default=0.0, compare=False)

    @property
    def n_iters(self) -> int:
        return int(self.states.size)

    @property
    def policies(self) -> list[np.ndarray]:
        return [softmax_policy(th) for th in self.thetas]


class _Learner:
    """All state private to one agent."""

    def __init__(self, spec: GameSpec, agent: int, params: CptParams, n_max: int,
                 options: TrainOptions, rng: np.random.Generator):
        self.agent = agent
        self.params = params
        self.model = agent_view(spec, agent)
        self.n_max = n_max
        self.options = options
        self.rng = rng
        self.theta = np.zeros((spec.n_states, spec.n_actions))
        self.V = np.zeros(spec.n_states)
        self.sigma = SigmaDistribution(spec.n_states, self.model.grid)
        self.store = ExperienceStore(spec.n_states, spec.n_actions, self.model.grid)
        self.skipped = 0

    def act(self, state: int) -> int:
        return int(self.rng.choice(self.theta.shape[1], p=softmax_policy(self.theta[state])))

    def _reward_table(self, sigma: np.ndarray) -> np.ndarray:
        if self.options.reward_source == "model":
            return self.model.rewards
        missing = np.argwhere((self.store.counts == 0) & (sigma[:, None, :] > 0))
        for s, a, k in missing:
            r, s2 = self.model.sample(int(s), int(a), int(k), self.rng)
            self.store.push_index(s, a, k, r, s2)
        return np.nan_to_num(self.store.mean_rewards(), nan=0.0)

    def learn(self, obs, lr_cr: float, lr_ac: float) -> tuple[float, float]:
        s = obs.state
        self.store.push(s, obs.own_action, obs.aggregate, obs.reward, obs.next_state)
        self.sigma.update(s, obs.aggregate)
        sigma = self.sigma.probs()
        pi = softmax_policy(self.theta)

        estimate = sampled_value_estimate(s, pi, sigma, self.V, self.model, self.params, self.n_max,
                                          self.store, self.rng, self.options.store_threshold)
        self.V, delta = critic_step(self.V, s, estimate, lr_cr)

        if not self.sigma.covered:
            return delta, float("nan")
        try:
            grad = grad_value(self.theta, self.V, self.model, sigma, self.params,
                              reward=self._reward_table(sigma), mode=self.options.gradient_mode,
                              u_cap=self.options.u_cap, visitation=self.options.visitation)
        except VisitationError:
            # exact visitation only: the subjective kernel does not contract at the current V
            self.skipped += 1
            return delta, float("nan")
        self.theta = actor_step(self.theta, grad, lr_ac)
        return delta, float(np.linalg.norm(grad))


def train(spec: GameSpec, agent_params, schedule: LearningSchedule | None = None, n_iters: int = 10_000,
          n_max: int = 32, seed: int = 0, workers: int = 1, options: TrainOptions | None = None) -> TrainingResult:
    """Run the distributed nested CPT actor-critic.

    Stops after ``n_iters`` rounds, or earlier once every agent's gradient
    norm has stayed below ``options.grad_tol`` for ``options.patience``
    consecutive rounds.  The result depends only on the inputs and ``seed``,
    not on ``workers``.
    """
    schedule = schedule or LearningSchedule()
    options = options or TrainOptions()
    agent_params = list(agent_params)
    if len(agent_params) != spec.n_agents:
        raise ValueError(f"need {spec.n_agents} agent parameter sets, got {len(agent_params)}")
    if n_iters < 1 or n_max < 1:
        raise ValueError("n_iters and n_max must be positive")

    streams = np.random.SeedSequence(seed).spawn(spec.n_agents + 1)
    env_rng = np.random.default_rng(streams[0])
    learners = [_Learner(spec, i, p, n_max, options, np.random.default_rng(streams[i + 1]))
                for i, p in enumerate(agent_params)]

    N, S = spec.n_agents, spec.n_states
    states = np.empty(n_iters, dtype=np.int64)
    actions = np.empty((n_iters, N), dtype=np.int64)
    value_trace = np.empty((n_iters, N, S))
    td_errors = np.empty((n_iters, N))
    grad_norms = np.empty((n_iters, N))

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    start = time.perf_counter()
    state = int(env_rng.choice(S, p=spec.initial_dist))
    quiet = 0
    converged = False
    t = 0
    try:
        for t in range(n_iters):
            joint = [learner.act(state) for learner in learners]
            next_state, observations = step(state, joint, spec, env_rng)
            lr_cr, lr_ac = schedule.rates(t)
            jobs = [(learner, obs) for learner, obs in zip(learners, observations)]
            if pool is None:
                out = [learner.learn(obs, lr_cr, lr_ac) for learner, obs in jobs]
            else:
                out = list(pool.map(lambda job: job[0].learn(job[1], lr_cr, lr_ac), jobs))

            states[t] = state
            actions[t] = joint
            for i, (delta, gnorm) in enumerate(out):
                value_trace[t, i] = learners[i].V
                td_errors[t, i] = delta
                grad_norms[t, i] = gnorm
            state = next_state

            if np.all(grad_norms[t] < options.grad_tol):
                quiet += 1
                if quiet >= options.patience:
                    converged = True
                    break
            else:
                quiet = 0
    finally:
        if pool is not None:
            pool.shutdown()

    T = t + 1
    return TrainingResult(
        thetas=[learner.theta.copy() for learner in learners],
        values=[learner.V.copy() for learner in learners],
        states=states[:T], actions=actions[:T], value_trace=value_trace[:T],
        td_errors=td_errors[:T], grad_norms=grad_norms[:T],
        seed=seed, converged=converged, wall_clock=time.perf_counter() - start,
    )


# -- loss-aversion scenarios -------------------------------------------------------------

SCENARIOS = {
    1: "all agents risk-neutral",
    2: "all agents loss-averse (lambda=2.6)",
    3: "only agent 1 loss-averse (lambda=2.6)",
    4: "agent 1 lambda=3.2, others lambda=2.6",
}


def scenario_params(scenario: int, n_agents: int = 4) -> list[CptParams]:
    neutral = CptParams.risk_neutral()
    if scenario == 1:
        return [neutral] * n_agents
    if scenario == 2:
        return [CptParams.conventional(2.6)] * n_agents
    if scenario == 3:
        return [CptParams.conventional(2.6)] + [neutral] * (n_agents - 1)
    if scenario == 4:
        return [CptParams.conventional(3.2)] + [CptParams.conventional(2.6)] * (n_agents - 1)
    raise ValueError(f"unknown scenario {scenario!r}")


@dataclass
class ScenarioSummary:
    """State-averaged converged policies, ``probs[scenario_idx, run, agent, action]``."""

    scenarios: tuple[int, ...]
    seeds: tuple[int, ...]
    probs: np.ndarray
    value_traces: dict = field(default_factory=dict, repr=False)

    def mean(self) -> np.ndarray:
        return self.probs.mean(axis=1)

    def std(self) -> np.ndarray:
        return self.probs.std(axis=1)

    def p_conservative(self, agent: int = 0) -> np.ndarray:
        """P(a=0) of ``agent`` per (scenario, run)."""
        return self.probs[:, :, agent, 0]


def _scenario_job(args):
    scenario, seed, n_iters, n_max, schedule, options, game_overrides = args
    spec = generate_experiment(seed, **game_overrides)
    result = train(spec, scenario_params(scenario, spec.n_agents), schedule, n_iters, n_max, seed,
                   options=options)
    probs = np.stack([p.mean(axis=0) for p in result.policies])
    return probs, result.value_trace


def run_scenarios(base_seed: int = 0, n_runs: int = 8, n_iters: int = 10_000, n_max: int = 32,
                  schedule: LearningSchedule | None = None, options: TrainOptions | None = None,
                  scenarios=(1, 2, 3, 4), workers: int = 1, game_overrides: dict | None = None,
                  keep_traces: bool = False) -> ScenarioSummary:
    """Train every scenario on ``n_runs`` generated games (seeds ``base_seed + r``)."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    schedule = schedule or LearningSchedule()
    options = options or TrainOptions()
    game_overrides = dict(game_overrides or {})
    seeds = tuple(base_seed + r for r in range(n_runs))
    scenarios = tuple(scenarios)
    jobs = [(sc, sd, n_iters, n_max, schedule, options, game_overrides) for sc in scenarios for sd in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_scenario_job, jobs))
    else:
        outputs = [_scenario_job(job) for job in jobs]
    n_agents = outputs[0][0].shape[0]
    n_actions = outputs[0][0].shape[1]
    probs = np.empty((len(scenarios), n_runs, n_agents, n_actions))
    traces = {}
    for (sc, sd, *_), (p, trace) in zip(jobs, outputs):
        i, r = scenarios.index(sc), seeds.index(sd)
        probs[i, r] = p
        if keep_traces:
            traces[(sc, sd)] = trace
    return ScenarioSummary(tuple(scenarios), seeds, probs, traces)
