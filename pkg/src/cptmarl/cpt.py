"""Cumulative prospect theory valuation.

Weighting and utility families, rank-dependent decision weights, the exact
CPT value of a finite discrete random variable and the order-statistic
estimator that works from samples.

All row-wise helpers (``*_rows``) operate on 2-D arrays where each row is an
independent lottery; zero-probability entries are allowed and contribute
nothing to the value.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-12


class Weighting(str, enum.Enum):
    TVERSKY_KAHNEMAN = "tk"
    PRELEC = "prelec"


@dataclass(frozen=True)
class CptParams:
    """Subjective risk profile of one agent.

    ``lam`` is the loss-aversion multiplier (``lambda`` in configs).
    ``gamma_w`` and ``delta_w`` are the curvatures of the gain and loss
    weighting functions.
    """

    alpha: float = 1.0
    beta: float = 1.0
    lam: float = 1.0
    gamma_w: float = 1.0
    delta_w: float = 1.0
    x0: float = 0.0
    weighting: Weighting = Weighting.TVERSKY_KAHNEMAN

    def __post_init__(self):
        for name in ("alpha", "beta", "lam", "gamma_w", "delta_w"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if not np.isfinite(self.x0):
            raise ValueError(f"x0 must be finite, got {self.x0!r}")
        object.__setattr__(self, "weighting", Weighting(self.weighting))

    @classmethod
    def risk_neutral(cls) -> "CptParams":
        return cls()

    @classmethod
    def conventional(cls, lam: float = 2.6, **kwargs) -> "CptParams":
        """Tversky-Kahneman style profile: alpha=beta=0.65, curvatures 0.69."""
        base = dict(alpha=0.65, beta=0.65, lam=lam, gamma_w=0.69, delta_w=0.69)
        base.update(kwargs)
        return cls(**base)

    @property
    def is_risk_neutral(self) -> bool:
        return (self.alpha == self.beta == self.lam == self.gamma_w == self.delta_w == 1.0
                and self.x0 == 0.0)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "lambda": self.lam,
                "gamma_w": self.gamma_w, "delta_w": self.delta_w, "x0": self.x0,
                "weighting": self.weighting.value}

    @classmethod
    def from_dict(cls, d: dict) -> "CptParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class DiscreteDistribution:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        probs = np.asarray(self.probs, dtype=float).ravel()
        if values.shape != probs.shape or values.size == 0:
            raise ValueError("need a non-empty list of (value, probability) pairs")
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        if not np.all(np.isfinite(values)):
            raise ValueError("outcome values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "DiscreteDistribution":
        pairs = list(pairs)
        return cls([v for v, _ in pairs], [p for _, p in pairs])


# -- weighting functions -----------------------------------------------------

def _omega(p, curvature, family):
    p = np.asarray(p, dtype=float)
    if curvature == 1.0:
        return p.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        if family is Weighting.PRELEC:
            out = np.exp(-np.power(-np.log(p), curvature))
        else:
            pg = np.power(p, curvature)
            out = pg / np.power(pg + np.power(1.0 - p, curvature), 1.0 / curvature)
    return out


def _omega_prime(p, curvature, family):
    """Derivative of the weighting function; infinite at the ends when curvature < 1."""
    p = np.asarray(p, dtype=float)
    if curvature == 1.0:
        return np.ones_like(p)
    g = curvature
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family is Weighting.PRELEC:
            nl = -np.log(p)
            out = np.exp(-np.power(nl, g)) * g * np.power(nl, g - 1.0) / p
        else:
            q = 1.0 - p
            pg, qg = np.power(p, g), np.power(q, g)
            d = pg + qg
            out = (np.power(d, -1.0 / g - 1.0)
                   * (g * np.power(p, g - 1.0) * d - pg * (np.power(p, g - 1.0) - np.power(q, g - 1.0))))
    return np.where(np.isnan(out), np.inf, out)


def weight(p, curvature: float, family: Weighting | str = Weighting.TVERSKY_KAHNEMAN):
    """Probability weighting function with ``weight(0) = 0`` and ``weight(1) = 1``.

    Inputs within 1e-12 of [0, 1] are clamped; anything further out raises.
    """
    if curvature <= 0:
        raise ValueError("curvature must be positive")
    arr = np.asarray(p, dtype=float)
    if np.any(arr < -PROB_TOL) or np.any(arr > 1 + PROB_TOL) or np.any(np.isnan(arr)):
        raise ValueError(f"probability outside [0, 1]: {p!r}")
    out = _omega(np.clip(arr, 0.0, 1.0), curvature, Weighting(family))
    return float(out) if out.ndim == 0 else out


def weight_derivative(p, curvature: float, family: Weighting | str = Weighting.TVERSKY_KAHNEMAN):
    arr = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    out = _omega_prime(arr, curvature, Weighting(family))
    return float(out) if out.ndim == 0 else out


# -- utility -------------------------------------------------------------------

def utility(x, params: CptParams):
    """Signed utility around the reference point: gains ``d**alpha``, losses ``-lam*(-d)**beta``."""
    d = np.asarray(x, dtype=float) - params.x0
    gain = d >= 0
    mag = np.abs(d)
    out = np.where(gain, np.power(mag, params.alpha), -params.lam * np.power(mag, params.beta))
    return float(out) if out.ndim == 0 else out


def utility_derivative(x, params: CptParams, cap: float = 1e3):
    """Marginal utility, capped because power utilities have unbounded slope at the reference point."""
    d = np.asarray(x, dtype=float) - params.x0
    mag = np.abs(d)
    with np.errstate(divide="ignore"):
        out = np.where(d >= 0,
                       params.alpha * np.power(mag, params.alpha - 1.0),
                       params.lam * params.beta * np.power(mag, params.beta - 1.0))
    out = np.minimum(out, cap)
    return float(out) if out.ndim == 0 else out


# -- row-wise CPT machinery ------------------------------------------------------

def _snap(cum):
    # weighting slopes are unbounded at 1, so rounding residue there must not survive
    cum = np.clip(cum, 0.0, 1.0)
    cum[cum >= 1.0 - PROB_TOL] = 1.0
    return cum


def _sorted_rows(x, p):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = np.atleast_2d(np.asarray(p, dtype=float))
    order = np.argsort(x, axis=1, kind="stable")
    xs = np.take_along_axis(x, order, axis=1)
    ps = np.take_along_axis(p, order, axis=1)
    head = _snap(np.cumsum(ps, axis=1))
    tail = _snap(np.cumsum(ps[:, ::-1], axis=1)[:, ::-1])
    zeros = np.zeros((x.shape[0], 1))
    head_prev = np.concatenate([zeros, head[:, :-1]], axis=1)
    tail_next = np.concatenate([tail[:, 1:], zeros], axis=1)
    return order, xs, ps, head, head_prev, tail, tail_next


def _unsort(order, values):
    out = np.empty_like(values)
    np.put_along_axis(out, order, values, axis=1)
    return out


def decision_weights_rows(x, p, params: CptParams) -> np.ndarray:
    """Decision weights for every entry, returned in the input order."""
    order, xs, _, head, head_prev, tail, tail_next = _sorted_rows(x, p)
    fam = params.weighting
    gain = xs >= params.x0
    w_gain = _omega(tail, params.gamma_w, fam) - _omega(tail_next, params.gamma_w, fam)
    w_loss = _omega(head, params.delta_w, fam) - _omega(head_prev, params.delta_w, fam)
    return _unsort(order, np.where(gain, w_gain, w_loss))


def cpt_rows(x, p, params: CptParams) -> np.ndarray:
    """CPT value of each row lottery."""
    w = decision_weights_rows(x, p, params)
    return np.sum(w * utility(np.atleast_2d(x), params), axis=1)


def _sorted_probability_gradient(xs, head, tail, gain, params, mode, cap):
    """dCPT/dp in sorted order (see :func:`cpt_probability_gradient_rows`)."""
    fam = params.weighting
    u = utility(xs, params)
    wp_gain = _omega_prime(tail, params.gamma_w, fam)
    wp_loss = _omega_prime(head, params.delta_w, fam)
    if mode == "literal":
        return np.minimum(np.where(gain, wp_gain, wp_loss), cap) * u
    if mode != "chain_rule":
        raise ValueError(f"unknown gradient mode {mode!r}")
    rows = xs.shape[0]
    interior_gain = gain & (tail > PROB_TOL) & (tail < 1.0 - PROB_TOL)
    interior_loss = ~gain & (head > PROB_TOL) & (head < 1.0 - PROB_TOL)
    zeros = np.zeros((rows, 1))
    prev_gain = np.concatenate([np.zeros((rows, 1), bool), gain[:, :-1]], axis=1)
    next_loss = np.concatenate([~gain[:, 1:], np.zeros((rows, 1), bool)], axis=1)
    u_prev = np.where(prev_gain, np.concatenate([zeros, u[:, :-1]], axis=1), 0.0)
    u_next = np.where(next_loss, np.concatenate([u[:, 1:], zeros], axis=1), 0.0)
    with np.errstate(invalid="ignore"):
        c = np.where(interior_gain, wp_gain * (u - u_prev), 0.0)
        d = np.where(interior_loss, wp_loss * (u - u_next), 0.0)
    d_gain = np.cumsum(c, axis=1)
    d_loss = np.cumsum(d[:, ::-1], axis=1)[:, ::-1]
    return np.where(gain, d_gain, d_loss)


def cpt_probability_gradient_rows(x, p, params: CptParams, mode: str = "chain_rule",
                                  cap: float = 1e3) -> np.ndarray:
    """Sensitivity of each row's CPT value to each entry's probability.

    ``chain_rule`` is the exact partial derivative of the rank-dependent
    functional (gain tail sums and loss head sums treated as functions of the
    individual probabilities).  ``literal`` weights each entry's utility by the
    weighting-function slope at its own cumulative probability, which agrees
    with the exact derivative only for identity weighting.

    Terms whose cumulative sum sits at 0 or 1 multiply a direction that is
    constant on the simplex and are dropped; their slope is unbounded for
    curvatures below one.
    """
    order, xs, _, head, _, tail, _ = _sorted_rows(x, p)
    gain = xs >= params.x0
    return _unsort(order, _sorted_probability_gradient(xs, head, tail, gain, params, mode, cap))


def weights_and_gradient_rows(x, p, params: CptParams, mode: str = "chain_rule", cap: float = 1e3):
    """Decision weights and probability sensitivities from a single sort."""
    order, xs, _, head, head_prev, tail, tail_next = _sorted_rows(x, p)
    fam = params.weighting
    gain = xs >= params.x0
    w_gain = _omega(tail, params.gamma_w, fam) - _omega(tail_next, params.gamma_w, fam)
    w_loss = _omega(head, params.delta_w, fam) - _omega(head_prev, params.delta_w, fam)
    phi = np.where(gain, w_gain, w_loss)
    dp = _sorted_probability_gradient(xs, head, tail, gain, params, mode, cap)
    return _unsort(order, phi), _unsort(order, dp)


# -- public single-lottery API ---------------------------------------------------

def decision_weights(dist: DiscreteDistribution, params: CptParams) -> list[tuple[float, float]]:
    """``(value, weight)`` pairs sorted ascending by value."""
    w = decision_weights_rows(dist.values, dist.probs, params)[0]
    order = np.argsort(dist.values, kind="stable")
    return [(float(dist.values[i]), float(w[i])) for i in order]


def cpt_exact(dist: DiscreteDistribution, params: CptParams) -> float:
    return float(cpt_rows(dist.values, dist.probs, params)[0])


@functools.lru_cache(maxsize=64)
def _rank_weights(n: int, params: CptParams) -> tuple[np.ndarray, np.ndarray]:
    levels = np.arange(n + 1) / n
    fam = params.weighting
    w_plus = _omega(levels, params.gamma_w, fam)
    w_minus = _omega(levels, params.delta_w, fam)
    i = np.arange(1, n + 1)
    gain_w = w_plus[n + 1 - i] - w_plus[n - i]
    loss_w = w_minus[i] - w_minus[i - 1]
    return gain_w, loss_w


def cpt_estimate(samples: Sequence[float], params: CptParams) -> float:
    """Order-statistic CPT estimate from i.i.d. samples.

    The i-th smallest sample receives gain weight ``w+((n+1-i)/n) - w+((n-i)/n)``
    and loss weight ``w-(i/n) - w-((i-1)/n)``.  Samples at the reference point
    count as gains with zero utility.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel(), kind="stable")
    n = x.size
    if n == 0:
        raise ValueError("cpt_estimate needs at least one sample")
    gain_w, loss_w = _rank_weights(n, params)
    d = x - params.x0
    gain = d >= 0
    rho_plus = np.sum(np.where(gain, np.power(np.where(gain, d, 0.0), params.alpha), 0.0) * gain_w)
    rho_minus = np.sum(np.where(gain, 0.0, params.lam * np.power(np.where(gain, 0.0, -d), params.beta)) * loss_w)
    return float(rho_plus - rho_minus)
