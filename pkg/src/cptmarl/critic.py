"""Nested CPT critic: the TD(0) operator, its sampled estimate and update.

Policies are (S, A) probability tables, aggregate distributions are (S, K)
tables over the agent's observable aggregate lattice (rows of zeros mark
states where nothing has been observed yet), and value tables are (S,)
arrays.  ``model`` is the agent's :class:`~cptmarl.namg.AgentView`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpt import CptParams, cpt_estimate, cpt_rows
from .namg import AgentView, GameSpec, agent_view


class InsufficientExploration(ValueError):
    """No aggregate has been observed at a state the computation needs."""


@dataclass(frozen=True)
class OutcomeSet:
    """Joint outcomes (own action, aggregate, next state) of one state."""

    actions: np.ndarray
    aggregates: np.ndarray
    next_states: np.ndarray
    probs: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.probs.size


def _check_sigma(sigma: np.ndarray, states=None) -> None:
    totals = sigma.sum(axis=1)
    rows = range(sigma.shape[0]) if states is None else np.atleast_1d(states)
    for s in rows:
        if totals[s] == 0:
            raise InsufficientExploration(f"no aggregate observations at state {int(s)}")
        if abs(totals[s] - 1.0) > 1e-10:
            raise ValueError(f"aggregate distribution at state {int(s)} sums to {totals[s]!r}")


def outcome_arrays(pi, sigma, V, model: AgentView, reward=None):
    """Dense (S, A*K*S) outcome values and probabilities for every state.

    Zero-probability combinations are kept so that all rows share one layout:
    entry ``(a, k, s')`` lives at column ``(a*K + k)*S + s'``.
    """
    R = model.rewards if reward is None else np.asarray(reward, dtype=float)
    gamma = model.spec.discount
    p = np.asarray(pi)[:, :, None, None] * np.asarray(sigma)[:, None, :, None] * model.kernel
    x = R[..., None] + gamma * np.asarray(V, dtype=float)[None, None, None, :]
    S = p.shape[0]
    return x.reshape(S, -1), p.reshape(S, -1)


def enumerate_outcomes(state: int, pi, sigma, V, model: AgentView, reward=None) -> OutcomeSet:
    """Outcome set of ``state``: one entry per positive-probability (a, sigma, s')."""
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma, state)
    x, p = outcome_arrays(pi, sigma, V, model, reward)
    A, K, S = model.kernel.shape[1], model.n_aggregates, model.spec.n_states
    a_idx, k_idx, s_idx = np.unravel_index(np.arange(A * K * S), (A, K, S))
    keep = p[state] > 0
    return OutcomeSet(a_idx[keep], model.grid[k_idx[keep]], s_idx[keep], p[state][keep], x[state][keep])


def td_sweep(pi, sigma, V, model: AgentView, params: CptParams, reward=None) -> np.ndarray:
    """The CPT TD operator applied at every state."""
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma)
    x, p = outcome_arrays(pi, sigma, V, model, reward)
    return cpt_rows(x, p, params)


def td_apply(state: int, pi, sigma, V, model: AgentView, params: CptParams, reward=None) -> float:
    out = enumerate_outcomes(state, pi, sigma, V, model, reward)
    return float(cpt_rows(out.values, out.probs, params)[0])


def fixed_point(pi, sigma, model: AgentView, params: CptParams, V0=None, tol: float = 1e-10,
                max_iter: int = 10_000, reward=None):
    """Iterate the TD operator to its fixed point.

    Returns ``(V, residual, iterations)`` with ``residual = max|T V - V|``.
    """
    V = np.zeros(model.spec.n_states) if V0 is None else np.array(V0, dtype=float)
    residual = np.inf
    for it in range(1, max_iter + 1):
        TV = td_sweep(pi, sigma, V, model, params, reward)
        residual = float(np.max(np.abs(TV - V)))
        V = TV
        if residual <= tol:
            break
    # residual of the returned table itself
    residual = float(np.max(np.abs(td_sweep(pi, sigma, V, model, params, reward) - V)))
    return V, residual, it


def _draw(probs, u):
    idx = np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right")
    return np.minimum(idx, probs.size - 1)


def sampled_value_estimate(state: int, pi, sigma, V, model: AgentView, params: CptParams, n_max: int,
                           store, rng: np.random.Generator, threshold: int = 32) -> float:
    """Sample-based estimate of the TD target at ``state``.

    Own actions come from the policy and aggregates from the agent's
    aggregate distribution.  A key with at least ``threshold`` stored samples
    is read from the store; otherwise the simulator is queried and its draws
    are pushed to the store.  Store sufficiency is judged once per key per call.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    sigma_row = np.asarray(sigma[state], dtype=float)
    if sigma_row.sum() == 0:
        raise InsufficientExploration(f"no aggregate observations at state {state}")
    u = rng.random((3, n_max))
    acts = _draw(np.asarray(pi[state], dtype=float), u[0])
    ks = _draw(sigma_row, u[1])
    from_store = store.counts[state, acts, ks] >= threshold
    rewards, nxt = store.sample_many(state, acts, ks, u[2])
    if not from_store.all():
        K = model.n_aggregates
        codes = acts * K + ks
        for code in np.unique(codes[~from_store]):
            idx = np.flatnonzero(codes == code)
            a, k = divmod(int(code), K)
            r, s2 = model.sample(state, a, k, rng, idx.size)
            store.push_index(state, a, k, r, s2)
            rewards[idx] = r
            nxt[idx] = s2
    return cpt_estimate(rewards + model.spec.discount * np.asarray(V)[nxt], params)


def critic_step(V, state: int, estimate: float, lr_cr: float):
    """TD(0) update of one entry; returns ``(new_V, td_error)``."""
    if not 0 < lr_cr <= 1:
        raise ValueError("critic learning rate must lie in (0, 1]")
    V = np.array(V, dtype=float)
    delta = float(estimate - V[state])
    V[state] += lr_cr * delta
    return V, delta


def value_bound(params: CptParams, r_max: float, discount: float, max_iter: int = 100_000) -> float:
    """Bound ``B`` on |V| for rewards in [-r_max, r_max]: smallest ``B`` with
    ``max(u+(r_max + gB), lam * (r_max + gB)**beta) <= B``.
    """
    b = 0.0
    for _ in range(max_iter):
        z = r_max + discount * b
        nb = max(z ** params.alpha, params.lam * z ** params.beta)
        if nb > 1e12:
            raise ValueError("value function is unbounded for these parameters")
        if abs(nb - b) <= 1e-12 * max(1.0, nb):
            return nb
        b = nb
    return b


@dataclass(frozen=True)
class ContractionReport:
    max_ratio: float
    ratios: np.ndarray
    scale: float


def check_contraction(spec: GameSpec, policies, params: CptParams, n_pairs: int,
                      rng: np.random.Generator, agent: int = 0, scale: float | None = None) -> ContractionReport:
    """Empirical sup-norm Lipschitz ratio of the TD operator.

    Value tables are drawn uniformly from ``[-scale, scale]^S``; by default
    ``scale`` is :func:`value_bound`, the box every value table of the game
    lives in.  Identical pairs get ratio 0.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    model = agent_view(spec, agent)
    pi = np.asarray(policies[agent])
    sigma = model.exact_sigma(policies)
    if scale is None:
        scale = value_bound(params, spec.r_max, spec.discount)
    ratios = np.zeros(n_pairs)
    for i in range(n_pairs):
        V = rng.uniform(-scale, scale, spec.n_states)
        W = rng.uniform(-scale, scale, spec.n_states)
        gap = np.max(np.abs(V - W))
        if gap == 0:
            continue
        diff = td_sweep(pi, sigma, V, model, params) - td_sweep(pi, sigma, W, model, params)
        ratios[i] = np.max(np.abs(diff)) / gap
    return ContractionReport(float(ratios.max()), ratios, float(scale))
