"""Invariant checks shared by the ``check`` subcommand.

Each check returns a :class:`CheckResult` carrying the measured quantity,
the bar it is held to, and whether it passed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actor import grad_value, softmax_policy
from .cpt import CptParams, DiscreteDistribution, cpt_estimate, cpt_exact
from .critic import check_contraction, fixed_point
from .namg import GameSpec, agent_view, generate_experiment


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    bar: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6g} (bar {self.bar:.6g}){' ' + self.detail if self.detail else ''}"


def estimator_consistency(params: CptParams | None = None, n: int = 100_000, seeds=range(10),
                          tol: float = 0.01) -> CheckResult:
    """Seed-averaged |estimate - exact| on the symmetric +-1 coin."""
    params = params or CptParams.conventional()
    dist = DiscreteDistribution([1.0, -1.0], [0.5, 0.5])
    exact = cpt_exact(dist, params)
    errors = []
    for seed in seeds:
        draws = np.random.default_rng(seed).choice(dist.values, size=n, p=dist.probs)
        errors.append(abs(cpt_estimate(draws, params) - exact))
    err = float(np.mean(errors))
    return CheckResult("estimator consistency", err, tol, err <= tol, f"n={n}")


def contraction(spec: GameSpec, params: CptParams | None = None, n_pairs: int = 200, seed: int = 0,
                agent: int = 0) -> CheckResult:
    """Sup-norm Lipschitz ratio of the TD operator under uniform policies."""
    params = params or CptParams.conventional()
    uniform = [np.full((spec.n_states, spec.n_actions), 1.0 / spec.n_actions)] * spec.n_agents
    report = check_contraction(spec, uniform, params, n_pairs, np.random.default_rng(seed), agent=agent)
    bar = spec.discount if params.is_risk_neutral else 1.0
    passed = report.max_ratio <= bar + 1e-9 if params.is_risk_neutral else report.max_ratio < 1.0
    return CheckResult("TD contraction", report.max_ratio, bar, passed, f"scale={report.scale:.4g}")


def finite_difference_gradient(spec: GameSpec, thetas, params: CptParams, agent: int = 0,
                               h: float = 1e-5, tol: float = 1e-13) -> np.ndarray:
    """Central differences of ``p0 . V`` at the exact fixed point, in ``thetas[agent]``."""
    model = agent_view(spec, agent)

    def objective(theta):
        pols = [softmax_policy(t) for t in thetas]
        pols[agent] = softmax_policy(theta)
        V, _, _ = fixed_point(pols[agent], model.exact_sigma(pols), model, params, tol=tol, max_iter=100_000)
        return float(spec.initial_dist @ V)

    base = np.asarray(thetas[agent], dtype=float)
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        e = np.zeros_like(base)
        e[idx] = h
        out[idx] = (objective(base + e) - objective(base - e)) / (2 * h)
    return out


def exact_gradient(spec: GameSpec, thetas, params: CptParams, agent: int = 0, mode: str = "chain_rule") -> np.ndarray:
    model = agent_view(spec, agent)
    pols = [softmax_policy(t) for t in thetas]
    sigma = model.exact_sigma(pols)
    V, _, _ = fixed_point(pols[agent], sigma, model, params, tol=1e-13, max_iter=100_000)
    return grad_value(thetas[agent], V, model, sigma, params, mode=mode)


def gradient_agreement(n_games: int = 20, params: CptParams | None = None, seed: int = 0,
                       discount: float = 0.8, bar: float = 0.999, mode: str = "chain_rule") -> CheckResult:
    """Worst cosine similarity between the analytic and finite-difference gradients
    over small random two-agent games."""
    params = params or CptParams.conventional()
    rng = np.random.default_rng(seed)
    worst = 1.0
    for g in range(n_games):
        spec = generate_experiment(seed + g, n_agents=2, n_states=int(rng.integers(2, 4)), n_actions=2,
                                   discount=discount)
        thetas = [rng.normal(size=(spec.n_states, spec.n_actions)) for _ in range(2)]
        a = exact_gradient(spec, thetas, params, mode=mode).ravel()
        b = finite_difference_gradient(spec, thetas, params).ravel()
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cos = 1.0 if na == nb == 0 else float(a @ b / (na * nb)) if na and nb else 0.0
        worst = min(worst, cos)
    return CheckResult("gradient vs finite differences", worst, bar, worst >= bar, f"games={n_games}")
