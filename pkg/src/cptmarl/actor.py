"""Softmax actor for the nested CPT objective.

The gradient of ``p0 . V`` with respect to one agent's tabular softmax
parameters combines two pieces:

* the subjective one-step kernel ``DPr[s, s'] = gamma * sum phi * u'(x)``,
  the Jacobian of the TD operator in ``V``, whose resolvent gives the
  subjective visitation ``eta = (I - DPr^T)^{-1} p0``;
* the per-state sensitivity of the TD operator to the policy, obtained from
  the CPT value's sensitivity to every outcome probability.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpt import (CptParams, cpt_probability_gradient_rows, decision_weights_rows, utility_derivative,
                  weights_and_gradient_rows)
from .critic import _check_sigma, outcome_arrays
from .namg import AgentView, aggregate_key


class VisitationError(RuntimeError):
    """The subjective visitation system has no non-negative solution."""


def softmax_policy(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    z = np.exp(theta - theta.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def policy(theta, state: int) -> np.ndarray:
    return softmax_policy(np.asarray(theta)[state])


def grad_pi(theta, state: int, action: int) -> np.ndarray:
    """d pi(action|state) / d theta, same shape as ``theta``."""
    theta = np.asarray(theta, dtype=float)
    probs = policy(theta, state)
    out = np.zeros_like(theta)
    out[state] = -probs[action] * probs
    out[state, action] += probs[action]
    return out


def actor_step(theta, grad, lr_ac: float) -> np.ndarray:
    if lr_ac < 0:
        raise ValueError("actor learning rate must be non-negative")
    return np.asarray(theta, dtype=float) + lr_ac * np.asarray(grad, dtype=float)


class SigmaDistribution:
    """Empirical distribution of observed aggregates per state.

    Aggregates are binned exactly on the agent's observable lattice.
    """

    def __init__(self, n_states: int, grid):
        self.grid = np.asarray(grid, dtype=float)
        self.counts = np.zeros((n_states, self.grid.size), dtype=np.int64)
        self._lookup = {float(v): k for k, v in enumerate(self.grid)}

    def update(self, state: int, observed_aggregate: float) -> "SigmaDistribution":
        try:
            k = self._lookup[aggregate_key(observed_aggregate)]
        except KeyError:
            raise ValueError(f"aggregate {observed_aggregate!r} is not on the observable lattice") from None
        self.counts[state, k] += 1
        return self

    def probs(self) -> np.ndarray:
        """(S, K) probabilities; rows of unvisited states are all zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.where(totals > 0, self.counts / np.maximum(totals, 1), 0.0)

    def at(self, state: int) -> list[tuple[float, float]]:
        row = self.probs()[state]
        return [(float(self.grid[k]), float(row[k])) for k in np.flatnonzero(row)]

    @property
    def covered(self) -> bool:
        return bool(np.all(self.counts.sum(axis=1) > 0))


def update_sigma_dist(sigma_dist: SigmaDistribution, state: int, observed_aggregate: float) -> SigmaDistribution:
    return sigma_dist.update(state, observed_aggregate)


@dataclass(frozen=True)
class SubjectiveVisitation:
    eta: np.ndarray
    mu: np.ndarray


def subjective_transition(pi, sigma, V, model: AgentView, params: CptParams, reward=None,
                          u_cap: float = 1e3) -> np.ndarray:
    """Subjective one-step kernel ``DPr`` of shape (S, S), entries >= 0.

    Each outcome's decision weight times ``gamma * u'(R + gamma V(s'))`` is
    credited to its destination state; the utility branch follows the sign of
    the outcome value.
    """
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma)
    S = model.spec.n_states
    x, p = outcome_arrays(pi, sigma, V, model, reward)
    phi = decision_weights_rows(x, p, params)
    du = utility_derivative(x, params, cap=u_cap)
    per_outcome = model.spec.discount * phi * du
    return per_outcome.reshape(S, -1, S).sum(axis=1)


def solve_eta(dpr, p0) -> SubjectiveVisitation:
    """Solve ``(I - DPr^T) eta = p0`` directly; ``mu`` is ``eta`` normalised."""
    dpr = np.asarray(dpr, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    # the largest row sum bounds the spectral radius of a non-negative matrix
    if dpr.size and dpr.sum(axis=1).max() >= 1.0:
        radius = float(np.max(np.abs(np.linalg.eigvals(dpr))))
        if radius >= 1.0:
            raise VisitationError(f"subjective kernel has spectral radius {radius:.6g} >= 1")
    try:
        eta = np.linalg.solve(np.eye(dpr.shape[0]) - dpr.T, p0)
    except np.linalg.LinAlgError as exc:
        raise VisitationError(str(exc)) from exc
    if np.any(eta < -1e-12) or eta.sum() <= 0:
        raise VisitationError("subjective visitation has negative entries")
    eta = np.maximum(eta, 0.0)
    return SubjectiveVisitation(eta, eta / eta.sum())


def _sensitivity_from(dp, pi, sigma, model: AgentView) -> np.ndarray:
    S, A = pi.shape
    # probability of each outcome given the own action
    cond = (np.asarray(sigma)[:, None, :, None] * model.kernel).reshape(S, -1)
    W = (dp * cond).reshape(S, A, -1).sum(axis=2)
    return pi * (W - np.sum(pi * W, axis=1, keepdims=True))


def state_sensitivity(pi, sigma, V, model: AgentView, params: CptParams, reward=None,
                      mode: str = "chain_rule", cap: float = 1e3) -> np.ndarray:
    """Per-state derivative of the TD operator w.r.t. ``theta[s, .]`` with V held fixed, (S, A)."""
    pi = np.asarray(pi, dtype=float)
    x, p = outcome_arrays(pi, sigma, V, model, reward)
    dp = cpt_probability_gradient_rows(x, p, params, mode=mode, cap=cap)
    return _sensitivity_from(dp, pi, sigma, model)


def subjective_distribution(dpr, p0) -> np.ndarray:
    """Normalised subjective visitation ``mu``.

    When ``(I - DPr^T) eta = p0`` has a non-negative solution this is
    ``eta / sum(eta)``.  Otherwise (spectral radius of ``DPr`` at least 1) the
    Perron vector of ``DPr^T`` is returned, which is the limit of
    ``eta / sum(eta)`` as the spectral radius approaches 1 from below.
    """
    try:
        return solve_eta(dpr, p0).mu
    except VisitationError:
        vals, vecs = np.linalg.eig(np.asarray(dpr, dtype=float).T)
        v = np.abs(np.real(vecs[:, int(np.argmax(np.real(vals)))]))
        return v / v.sum()


def grad_value(theta, V, model: AgentView, sigma, params: CptParams, reward=None,
               mode: str = "chain_rule", u_cap: float = 1e3, return_visitation: bool = False,
               visitation: str = "exact"):
    """Policy gradient of ``p0 . V`` for the agent owning ``model``, shape of ``theta``.

    ``visitation="exact"`` weights the per-state sensitivities by the
    unnormalised ``eta``; with ``V`` the exact fixed point and
    ``mode="chain_rule"`` this is the exact gradient, and a ``VisitationError``
    is raised when ``eta`` does not exist.  ``visitation="normalized"`` uses
    ``mu / (1 - gamma)`` instead (see :func:`subjective_distribution`), which
    has the same direction, equals the exact gradient for risk-neutral agents,
    and is always defined.
    """
    if visitation not in ("exact", "normalized"):
        raise ValueError("visitation must be 'exact' or 'normalized'")
    pi = softmax_policy(theta)
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma)
    S = model.spec.n_states
    gamma = model.spec.discount
    x, p = outcome_arrays(pi, sigma, V, model, reward)
    phi, dp = weights_and_gradient_rows(x, p, params, mode=mode, cap=u_cap)
    dpr = (gamma * phi * utility_derivative(x, params, cap=u_cap)).reshape(S, -1, S).sum(axis=1)
    if visitation == "exact":
        vis = solve_eta(dpr, model.spec.initial_dist)
    else:
        mu = subjective_distribution(dpr, model.spec.initial_dist)
        vis = SubjectiveVisitation(mu / (1.0 - gamma), mu)
    grad = vis.eta[:, None] * _sensitivity_from(dp, pi, sigma, model)
    if return_visitation:
        return grad, vis
    return grad
