import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cptmarl.actor import (SigmaDistribution, VisitationError, actor_step, grad_pi, grad_value, policy,
                           softmax_policy, solve_eta, state_sensitivity, subjective_distribution,
                           subjective_transition, update_sigma_dist)
from cptmarl.checks import exact_gradient, finite_difference_gradient
from cptmarl.cpt import utility_derivative
from cptmarl.critic import fixed_point
from cptmarl.namg import agent_view, generate_experiment

from conftest import NEUTRAL, LOSS_AVERSE, definitional_weights, hand_outcomes, make_toy, random_policy


def _toy(seed, discount=0.7, params=LOSS_AVERSE):
    rng = np.random.default_rng(seed)
    spec = make_toy(discount=discount)
    theta = rng.normal(size=(2, 2))
    pi0, pi1 = softmax_policy(theta), random_policy(rng)
    view = agent_view(spec, 0)
    sigma = view.exact_sigma([pi0, pi1])
    V, _, _ = fixed_point(pi0, sigma, view, params, tol=1e-14)
    return spec, view, theta, pi0, pi1, sigma, V


def _classical(spec, pi0, pi1):
    """Markov matrix, expected reward and action values of agent 0 on a toy game."""
    P = np.zeros((2, 2))
    r = np.zeros(2)
    for s in range(2):
        for x, p, s2, _ in hand_outcomes(spec, s, pi0, pi1, np.zeros(2)):
            P[s, s2] += p
            r[s] += p * x
    V = np.linalg.solve(np.eye(2) - spec.discount * P, r)
    Q = np.zeros((2, 2))
    for s in range(2):
        for a in range(2):
            onehot = np.zeros_like(pi0)
            onehot[s, a] = 1.0
            for x, p, _, _ in hand_outcomes(spec, s, onehot, pi1, V):
                Q[s, a] += p * x
    return P, V, Q


# -- softmax policy --------------------------------------------------------------------

def test_equal_logits_give_uniform_policy():
    np.testing.assert_allclose(policy(np.full((2, 3), 4.2), 1), 1 / 3)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.integers(0, 1), st.integers(0, 2))
def test_grad_pi_matches_central_differences(flat, s, a):
    theta = np.array(flat).reshape(2, 3)
    g = grad_pi(theta, s, a)
    h = 1e-6
    fd = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        e = np.zeros_like(theta)
        e[idx] = h
        fd[idx] = (policy(theta + e, s)[a] - policy(theta - e, s)[a]) / (2 * h)
    np.testing.assert_allclose(g, fd, atol=1e-6)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.integers(0, 1))
def test_grad_pi_sums_to_zero_over_actions(flat, s):
    theta = np.array(flat).reshape(2, 3)
    total = sum(grad_pi(theta, s, a) for a in range(3))
    np.testing.assert_allclose(total, 0.0, atol=1e-15)


def test_actor_step_examples():
    theta = np.zeros((1, 4))
    assert np.array_equal(actor_step(theta, np.zeros((1, 4)), 0.5), theta)
    assert np.array_equal(actor_step(theta + 1, np.ones((1, 4)), 0.0), theta + 1)
    np.testing.assert_array_equal(actor_step(theta, np.array([[1.0, -1.0, 1.0, -1.0]]), 0.5),
                                  [[0.5, -0.5, 0.5, -0.5]])
    with pytest.raises(ValueError):
        actor_step(theta, theta, -0.1)


# -- aggregate distribution -------------------------------------------------------------

def test_sigma_distribution_examples():
    d = SigmaDistribution(2, [0.0, 0.5, 1.0])
    assert not d.covered
    update_sigma_dist(d, 0, 0.5)
    assert d.at(0) == [(0.5, 1.0)]
    np.testing.assert_array_equal(d.probs()[1], 0.0)
    d.update(0, 1.0)
    assert d.at(0) == [(0.5, 0.5), (1.0, 0.5)]
    d.update(1, 0.0)
    assert d.covered
    with pytest.raises(ValueError):
        d.update(0, 0.7)


def test_sigma_distribution_converges_to_product_distribution():
    spec = generate_experiment(0)
    view = agent_view(spec, 0)
    rng = np.random.default_rng(0)
    pols = [rng.dirichlet(np.ones(3), size=5) for _ in range(4)]
    d = SigmaDistribution(5, view.grid)
    for _ in range(10_000):
        others = [rng.choice(3, p=pols[j][2]) for j in (1, 2, 3)]
        d.update(2, spec.graph_weights[0, 1:] @ np.array(others, dtype=float))
    np.testing.assert_allclose(d.probs()[2], view.exact_sigma(pols)[2], atol=0.02)


# -- subjective kernel and visitation ------------------------------------------------------

def test_zero_discount_gives_zero_kernel():
    spec, view, _, pi0, _, sigma, V = _toy(0, discount=0.0)
    np.testing.assert_array_equal(subjective_transition(pi0, sigma, V, view, LOSS_AVERSE), 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_risk_neutral_kernel_is_discounted_markov_matrix(seed):
    spec, view, _, pi0, pi1, sigma, V = _toy(seed, params=NEUTRAL)
    P, _, _ = _classical(spec, pi0, pi1)
    np.testing.assert_allclose(subjective_transition(pi0, sigma, V, view, NEUTRAL), spec.discount * P, atol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_kernel_matches_hand_computation(seed):
    spec, view, _, pi0, pi1, sigma, V = _toy(seed)
    expected = np.zeros((2, 2))
    for s in range(2):
        hand = hand_outcomes(spec, s, pi0, pi1, V)
        xs = np.array([h[0] for h in hand])
        ps = np.array([h[1] for h in hand])
        w = definitional_weights(xs, ps, LOSS_AVERSE)
        for (x, _, s2, _), wi in zip(hand, w):
            expected[s, s2] += spec.discount * wi * utility_derivative(x, LOSS_AVERSE)
    np.testing.assert_allclose(subjective_transition(pi0, sigma, V, view, LOSS_AVERSE), expected, atol=1e-12)


def test_zero_kernel_visitation_is_initial_distribution():
    p0 = np.array([0.2, 0.8])
    vis = solve_eta(np.zeros((2, 2)), p0)
    np.testing.assert_array_equal(vis.eta, p0)
    np.testing.assert_array_equal(vis.mu, p0)


@pytest.mark.parametrize("seed", range(4))
def test_risk_neutral_visitation_is_classical(seed):
    spec, view, _, pi0, pi1, sigma, V = _toy(seed, params=NEUTRAL)
    P, _, _ = _classical(spec, pi0, pi1)
    classical = np.linalg.inv(np.eye(2) - spec.discount * P.T) @ spec.initial_dist
    vis = solve_eta(subjective_transition(pi0, sigma, V, view, NEUTRAL), spec.initial_dist)
    np.testing.assert_allclose(vis.eta, classical, atol=1e-12)
    np.testing.assert_allclose(vis.mu, classical / classical.sum(), atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_visitation_matches_fixed_point_iteration(seed):
    spec, view, _, pi0, _, sigma, V = _toy(seed)
    dpr = subjective_transition(pi0, sigma, V, view, LOSS_AVERSE)
    eta = np.zeros(2)
    for _ in range(100_000):
        new = spec.initial_dist + dpr.T @ eta
        done = np.max(np.abs(new - eta)) <= 1e-13
        eta = new
        if done:
            break
    vis = solve_eta(dpr, spec.initial_dist)
    np.testing.assert_allclose(vis.eta, eta, atol=1e-10)
    assert np.max(np.abs((np.eye(2) - dpr.T) @ vis.eta - spec.initial_dist)) <= 1e-10
    assert vis.mu.sum() == pytest.approx(1.0) and np.all(vis.mu >= 0)


def test_visitation_rejects_non_contracting_kernel():
    with pytest.raises(VisitationError):
        solve_eta(np.array([[0.7, 0.5], [0.1, 0.95]]), np.array([1.0, 0.0]))


def test_normalised_visitation_falls_back_to_perron_vector():
    dpr = np.array([[0.7, 0.5], [0.1, 0.95]])
    mu = subjective_distribution(dpr, np.array([1.0, 0.0]))
    vals, vecs = np.linalg.eig(dpr.T)
    v = np.abs(vecs[:, np.argmax(vals.real)].real)
    np.testing.assert_allclose(mu, v / v.sum(), atol=1e-12)
    # continuity: just below radius one the normalised solution approaches the same vector
    radius = np.max(np.abs(vals))
    near = solve_eta(dpr / radius * (1 - 1e-9), np.array([1.0, 0.0])).mu
    np.testing.assert_allclose(near, mu, atol=1e-6)


# -- policy gradient -----------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_risk_neutral_gradient_is_classical_policy_gradient(seed):
    spec, view, theta, pi0, pi1, sigma, V = _toy(seed, params=NEUTRAL)
    P, V_lin, Q = _classical(spec, pi0, pi1)
    np.testing.assert_allclose(V, V_lin, atol=1e-12)
    d = np.linalg.solve(np.eye(2) - spec.discount * P.T, spec.initial_dist)
    classical = np.zeros_like(theta)
    for s in range(2):
        for a in range(2):
            classical += d[s] * grad_pi(theta, s, a) * Q[s, a]
    for visitation in ("exact", "normalized"):
        g = grad_value(theta, V, view, sigma, NEUTRAL, visitation=visitation)
        np.testing.assert_allclose(g, classical, atol=1e-9)


def test_symmetric_game_has_zero_gradient():
    spec = make_toy(transition=np.full((2, 4, 2), 0.5), r_self=np.full((2, 2), 0.4), r_com=np.zeros((2, 2)))
    view = agent_view(spec, 0)
    pi = np.full((2, 2), 0.5)
    sigma = view.exact_sigma([pi, pi])
    V, _, _ = fixed_point(pi, sigma, view, LOSS_AVERSE)
    np.testing.assert_allclose(grad_value(np.zeros((2, 2)), V, view, sigma, LOSS_AVERSE), 0.0, atol=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_finite_differences(seed):
    spec = generate_experiment(100 + seed, n_agents=2, n_states=2 + seed % 2, n_actions=2, discount=0.8)
    rng = np.random.default_rng(seed)
    thetas = [rng.normal(size=(spec.n_states, 2)) for _ in range(2)]
    g = exact_gradient(spec, thetas, LOSS_AVERSE).ravel()
    fd = finite_difference_gradient(spec, thetas, LOSS_AVERSE).ravel()
    assert g @ fd / (np.linalg.norm(g) * np.linalg.norm(fd)) >= 0.999
    np.testing.assert_allclose(g, fd, atol=1e-4)


def test_state_sensitivity_rows_sum_to_zero():
    spec, view, _, pi0, _, sigma, V = _toy(3)
    for mode in ("chain_rule", "literal"):
        sens = state_sensitivity(pi0, sigma, V, view, LOSS_AVERSE, mode=mode)
        np.testing.assert_allclose(sens.sum(axis=1), 0.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_normalised_gradient_is_proportional_to_exact(seed):
    spec, view, theta, pi0, _, sigma, V = _toy(seed)
    exact, vis = grad_value(theta, V, view, sigma, LOSS_AVERSE, return_visitation=True)
    norm = grad_value(theta, V, view, sigma, LOSS_AVERSE, visitation="normalized")
    np.testing.assert_allclose(norm * vis.eta.sum() * (1 - spec.discount), exact, atol=1e-10)


def test_gradient_rejects_unknown_visitation():
    spec, view, theta, _, _, sigma, V = _toy(0)
    with pytest.raises(ValueError):
        grad_value(theta, V, view, sigma, LOSS_AVERSE, visitation="other")
