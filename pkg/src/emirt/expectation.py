"""E-step quantities: pattern likelihoods, posteriors, expected counts.

All probability work happens in log space; probabilities are clamped to
[EPS_P, 1 - EPS_P] before any log or division so that extreme nodes can
never produce infinities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ItemParams
from .patterns import PatternData
from .quadrature import QuadratureGrid

EPS_P = 1e-10


class PosteriorUnderflowError(ArithmeticError):
    """A pattern's mixture likelihood underflowed to zero at every node."""

    def __init__(self, pattern_index: int):
        super().__init__(
            f"posterior normalization underflowed for pattern {pattern_index}"
        )
        self.pattern_index = pattern_index


@dataclass(frozen=True)
class ExpectedCounts:
    """Posterior-weighted response counts per item and quadrature node.

    n1 : (J, T) expected number of correct responses
    nt : (T,)  expected number of persons at each node
    """

    n1: np.ndarray
    nt: np.ndarray


def response_prob_matrix(params: Sequence[ItemParams], grid: QuadratureGrid) -> np.ndarray:
    """Clamped P_j(theta_t) for every item j and node t, shape (J, T)."""
    a = np.array([p.a for p in params])
    b = np.array([p.b for p in params])
    z = a[:, None] * (grid.nodes[None, :] - b[:, None])
    prob = np.empty_like(z)
    pos = z >= 0
    prob[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    prob[~pos] = ez / (1.0 + ez)
    return np.clip(prob, EPS_P, 1.0 - EPS_P)


def _pattern_logliks(
    data: PatternData, params: Sequence[ItemParams], grid: QuadratureGrid
) -> np.ndarray:
    """log P(X | theta_t) for every pattern X and node t, shape (P, T)."""
    if len(params) != data.n_items:
        raise ValueError(f"expected {data.n_items} item parameters, got {len(params)}")
    prob = response_prob_matrix(params, grid)
    log_p = np.log(prob)
    log_q = np.log1p(-prob)
    x = data.patterns.astype(np.float64)
    return x @ log_p + (1.0 - x) @ log_q


def _logsumexp_rows(m: np.ndarray) -> np.ndarray:
    peak = m.max(axis=1, keepdims=True)
    return (peak + np.log(np.exp(m - peak).sum(axis=1, keepdims=True))).ravel()


def pattern_likelihoods(
    data: PatternData, params: Sequence[ItemParams], grid: QuadratureGrid
) -> np.ndarray:
    """P(X | theta_t) by local independence, computed in log space."""
    return np.exp(_pattern_logliks(data, params, grid))


def posterior(
    data: PatternData, params: Sequence[ItemParams], grid: QuadratureGrid
) -> np.ndarray:
    """Posterior P(theta_t | X) over nodes, one row per pattern.

    Rows are normalized with log-sum-exp; each row sums to one.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        log_joint = _pattern_logliks(data, params, grid) + np.log(grid.weights)[None, :]
        norm = _logsumexp_rows(log_joint)
    if not np.all(np.isfinite(norm)):
        raise PosteriorUnderflowError(int(np.argmin(np.isfinite(norm))))
    return np.exp(log_joint - norm[:, None])


def expected_counts(data: PatternData, post: np.ndarray) -> ExpectedCounts:
    """Expected per-node counts N1_jt and N_t from a posterior table."""
    freqs = data.freqs.astype(np.float64)
    nt = freqs @ post
    weighted = data.patterns.T.astype(np.float64) * freqs[None, :]
    n1 = weighted @ post
    return ExpectedCounts(n1=n1, nt=nt)


def observed_loglik(
    data: PatternData, params: Sequence[ItemParams], grid: QuadratureGrid
) -> float:
    """Marginal log-likelihood sum_X N_X log sum_t P(X|theta_t) A_t."""
    log_joint = _pattern_logliks(data, params, grid) + np.log(grid.weights)[None, :]
    return float(data.freqs @ _logsumexp_rows(log_joint))


def q1(
    params: Sequence[ItemParams], counts: ExpectedCounts, grid: QuadratureGrid
) -> float:
    """Item-parameter part of the expected complete-data log-likelihood."""
    prob = response_prob_matrix(params, grid)
    return float(
        np.sum(counts.n1 * np.log(prob))
        + np.sum((counts.nt[None, :] - counts.n1) * np.log1p(-prob))
    )


def phi_residuals(
    params: Sequence[ItemParams], counts: ExpectedCounts, grid: QuadratureGrid
) -> np.ndarray:
    """Per-item, per-node stationarity residuals N1/P - N0/(1-P).

    These approach zero at the marginal maximum likelihood solution, so the
    matrix doubles as a convergence diagnostic.
    """
    prob = response_prob_matrix(params, grid)
    n0 = counts.nt[None, :] - counts.n1
    return counts.n1 / prob - n0 / (1.0 - prob)


def membership_estimate(counts: ExpectedCounts) -> np.ndarray:
    """Estimated latent-class membership probabilities nt_l / sum_t nt_t."""
    total = counts.nt.sum()
    if total <= 0:
        raise ValueError("expected counts sum to zero; nothing to normalize")
    return counts.nt / total
