import itertools

import numpy as np
import pytest

from cptmarl.cpt import CptParams, weight
from cptmarl.namg import GameSpec, RewardModel

LOSS_AVERSE = CptParams.conventional(2.6)
NEUTRAL = CptParams.risk_neutral()


def make_toy(discount=0.7, transition=None, r_self=None, r_com=None, p0=(1.0, 0.0)):
    """Two agents, two states, two actions, each the other's only neighbour."""
    if transition is None:
        # rows indexed by joint action (a0, a1) in lexicographic order
        transition = np.array([
            [[0.9, 0.1], [0.6, 0.4], [0.3, 0.7], [0.2, 0.8]],
            [[0.5, 0.5], [0.25, 0.75], [0.8, 0.2], [0.1, 0.9]],
        ])
    r_self = np.array([[0.5, -0.2], [0.3, 0.1]]) if r_self is None else np.asarray(r_self)
    r_com = np.array([[1.0, -2.0], [0.5, 1.5]]) if r_com is None else np.asarray(r_com)
    return GameSpec(2, 2, 2, np.array([[0.0, 1.0], [1.0, 0.0]]), np.asarray(transition, dtype=float),
                    RewardModel(r_self, r_com), discount, np.asarray(p0, dtype=float), 10.0)


@pytest.fixture
def toy():
    return make_toy()


def hand_outcomes(spec, state, pi0, pi1, V):
    """Brute-force (value, probability, next_state, own_action) list for agent 0 of a toy game."""
    out = []
    rs, rc = spec.reward_model.r_self, spec.reward_model.r_com
    for a0, a1 in itertools.product(range(2), repeat=2):
        for s2 in range(2):
            p = pi0[state, a0] * pi1[state, a1] * spec.transition[state, 2 * a0 + a1, s2]
            if p > 0:
                x = rs[0, state] + a1 * rc[0, state] * a0 + spec.discount * V[s2]
                out.append((x, p, s2, a0))
    return out


def definitional_weights(values, probs, params):
    """Decision weights straight from the rank definition.

    Each distinct value gets ``w(P(X >= x)) - w(P(X > x))`` (gains) or
    ``w(P(X <= x)) - w(P(X < x))`` (losses); entries sharing a value split
    that weight in proportion to their probabilities.
    """
    values, probs = np.asarray(values), np.asarray(probs)
    w = np.empty(values.size)
    for i, x in enumerate(values):
        if x >= params.x0:
            block = (weight(probs[values >= x].sum(), params.gamma_w, params.weighting)
                     - weight(probs[values > x].sum(), params.gamma_w, params.weighting))
        else:
            block = (weight(probs[values <= x].sum(), params.delta_w, params.weighting)
                     - weight(probs[values < x].sum(), params.delta_w, params.weighting))
        w[i] = block * probs[i] / probs[values == x].sum()
    return w


def random_policy(rng, S=2, A=2):
    p = rng.uniform(0.1, 1.0, size=(S, A))
    return p / p.sum(axis=1, keepdims=True)
