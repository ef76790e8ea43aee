"""Reference estimator: EM whose M-step solves the score equations by Newton-Raphson.

Serves as the in-repo oracle for the OLS-based EM.  The per-item score of
the expected complete-data log-likelihood is analytic; the 2x2 Hessian is
taken by central finite differences of that score.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import expectation
from .em_ols import FitConfig, FitResult, IterationCallback, _run_em
from .expectation import ExpectedCounts
from .model import ItemParams, ModelKind
from .patterns import PatternData
from .quadrature import QuadratureGrid

HESSIAN_FALLBACK = "hessian_fallback"

_FD_STEP = 1e-5
_GRADIENT_STEP = 0.1


class MonotonicityViolationError(RuntimeError):
    """The observed log-likelihood decreased during a Newton-Raphson EM fit."""


@dataclass(frozen=True)
class NRConfig(FitConfig):
    """FitConfig plus the inner Newton loop controls."""

    inner_max_iter: int = 50
    inner_tol: float = 1e-8
    step_halving_max: int = 20

    def __post_init__(self):
        super().__post_init__()
        if self.inner_max_iter < 1:
            raise ValueError(f"inner_max_iter must be >= 1, got {self.inner_max_iter}")
        if not self.inner_tol > 0:
            raise ValueError(f"inner_tol must be > 0, got {self.inner_tol}")


def item_score(
    p: ItemParams, n1_j: np.ndarray, nt: np.ndarray, grid: QuadratureGrid
) -> tuple[float, float]:
    """Gradient of the expected complete-data log-likelihood for one item.

    With residuals r_t = N1_jt - N_t * P_j(theta_t):
        s_a = sum_t (theta_t - b) * r_t
        s_b = -a * sum_t r_t
    """
    prob = expectation.response_prob_matrix([p], grid)[0]
    resid = n1_j - nt * prob
    s_a = float((grid.nodes - p.b) @ resid)
    s_b = float(-p.a * resid.sum())
    return s_a, s_b


def _item_q1(
    p: ItemParams, n1_j: np.ndarray, nt: np.ndarray, grid: QuadratureGrid
) -> float:
    counts = ExpectedCounts(n1=n1_j[None, :], nt=nt)
    return expectation.q1([p], counts, grid)


def _score_vector(x, free, n1_j, nt, grid):
    p = ItemParams(a=x[0], b=x[1])
    s = item_score(p, n1_j, nt, grid)
    return np.array([s[i] for i in free])


def _fd_hessian(x, free, n1_j, nt, grid):
    """Jacobian of the score (Hessian of item Q1) by central differences."""
    k = len(free)
    hess = np.empty((k, k))
    for col, idx in enumerate(free):
        step = np.zeros(2)
        step[idx] = _FD_STEP
        s_plus = _score_vector(x + step, free, n1_j, nt, grid)
        s_minus = _score_vector(x - step, free, n1_j, nt, grid)
        hess[:, col] = (s_plus - s_minus) / (2.0 * _FD_STEP)
    return 0.5 * (hess + hess.T)


def _ascent_direction(hess: np.ndarray, score: np.ndarray) -> np.ndarray:
    """Newton direction made safe for maximization.

    At a maximum the Hessian of Q1 is negative definite and this is the
    plain Newton step.  Elsewhere positive curvature directions are
    flipped (saddle-free Newton), so the step is always an ascent
    direction and the iteration cannot be attracted to the saddle at a=0.
    """
    eigvals, eigvecs = np.linalg.eigh(hess)
    peak = float(np.abs(eigvals).max())
    if peak < 1e-10:
        raise np.linalg.LinAlgError("flat curvature")
    safe = -np.maximum(np.abs(eigvals), 1e-8 * peak)
    return eigvecs @ ((eigvecs.T @ score) / -safe)


def _newton_item(
    p: ItemParams,
    n1_j: np.ndarray,
    nt: np.ndarray,
    grid: QuadratureGrid,
    cfg: NRConfig,
    model: ModelKind,
) -> tuple[ItemParams, bool, list[float]]:
    """Newton iterations on (a, b) (or b alone for the 1PL) for one item.

    Steps that would decrease the item's Q1 contribution are halved, up to
    cfg.step_halving_max times; a singular Hessian falls back to a fixed
    gradient-ascent step.  A zero score with positive curvature left over
    (a saddle) is escaped along the positive-curvature eigenvector.
    Returns the updated parameters, whether the fallback fired, and the
    score-norm history.
    """
    free = [1] if model is ModelKind.ONE_PL else [0, 1]
    x = np.array([p.a, p.b], dtype=float)
    q_curr = _item_q1(p, n1_j, nt, grid)
    # Accept steps down to the rounding noise of the Q1 evaluation itself.
    q_slack = 1e-13 * max(1.0, abs(q_curr))
    fallback = False
    norms: list[float] = []

    def try_direction(direction: np.ndarray) -> bool:
        nonlocal x, q_curr
        step = 1.0
        for _ in range(cfg.step_halving_max + 1):
            x_new = x.copy()
            for col, idx in enumerate(free):
                x_new[idx] += step * direction[col]
            if x_new[0] != 0.0:
                q_new = _item_q1(ItemParams(a=x_new[0], b=x_new[1]), n1_j, nt, grid)
                if q_new >= q_curr - q_slack:
                    x, q_curr = x_new, max(q_new, q_curr)
                    return True
            step *= 0.5
        return False

    for _ in range(cfg.inner_max_iter):
        score = _score_vector(x, free, n1_j, nt, grid)
        norm = float(np.linalg.norm(score))
        norms.append(norm)
        hess = _fd_hessian(x, free, n1_j, nt, grid)
        if norm < cfg.inner_tol:
            if float(np.linalg.eigvalsh(hess).max()) <= cfg.inner_tol:
                break
            # stationary but not a maximum: kick along the ascent curvature
            _, eigvecs = np.linalg.eigh(hess)
            kick = _GRADIENT_STEP * eigvecs[:, -1]
            if not (try_direction(kick) or try_direction(-kick)):
                break
            continue

        try:
            direction = _ascent_direction(hess, score)
        except np.linalg.LinAlgError:
            direction = _GRADIENT_STEP * score
            fallback = True

        if not try_direction(direction):
            if np.allclose(direction, _GRADIENT_STEP * score) or not try_direction(
                _GRADIENT_STEP * score
            ):
                break  # stalled at numerical stationarity

    return ItemParams(a=float(x[0]), b=float(x[1])), fallback, norms


def nr_mstep(
    params: Sequence[ItemParams],
    counts: ExpectedCounts,
    grid: QuadratureGrid,
    cfg: NRConfig,
    model: ModelKind,
) -> tuple[list[ItemParams], list[bool]]:
    """Per-item Newton-Raphson maximization of the expected log-likelihood."""
    new_params: list[ItemParams] = []
    fallbacks: list[bool] = []
    for j, p in enumerate(params):
        updated, fellback, _ = _newton_item(p, counts.n1[j], counts.nt, grid, cfg, model)
        new_params.append(updated)
        fallbacks.append(fellback)
    return new_params, fallbacks


def fit_nr(
    data: PatternData, cfg: NRConfig, callback: IterationCallback | None = None
) -> FitResult:
    """EM fit with the Newton-Raphson M-step.

    Because each M-step cannot decrease the expected log-likelihood, the
    observed log-likelihood trace must be non-decreasing (slack 1e-8); a
    violation means the step-halving safeguard failed and raises.
    """

    def mstep(params, counts, grid):
        new_params, fallbacks = nr_mstep(params, counts, grid, cfg, cfg.model)
        return new_params, [{HESSIAN_FALLBACK} if f else set() for f in fallbacks]

    def enforce_ascent(ll_old, ll_new, iteration):
        raise MonotonicityViolationError(
            f"log-likelihood fell from {ll_old:.10g} to {ll_new:.10g} "
            f"at iteration {iteration}"
        )

    return _run_em(data, cfg, mstep, enforce_ascent=enforce_ascent, callback=callback)
