"""Reference implementations for cross-checking the production path.

These deliberately use different algorithms from :mod:`hrlearn.regcore`
(SVD instead of eigendecompositions, explicit matrix powers instead of Horner
accumulation) so that agreement between the two is evidence rather than
tautology. Not re-exported from the package namespace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


def svd_factors(A, rcond: float | None = None) -> SvdFactors:
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if rcond is None:
        rcond = max(A.shape) * np.finfo(float).eps
    r = int(np.count_nonzero(s > rcond * s[0])) if s.size and s[0] > 0 else 0
    return SvdFactors(U=U[:, :r], sigma=s[:r], V=Vt[:r].T)


def pinv(A, rcond: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, ``V diag(1/sigma) U^T`` over the numerical rank."""
    f = svd_factors(A, rcond)
    return (f.V / f.sigma) @ f.U.T


def neumann_sum(F, c: int) -> np.ndarray:
    """``sum_{i=0}^{c} F^i`` with each power formed by repeated multiplication."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    total = np.eye(n)
    power = np.eye(n)
    for _ in range(c):
        power = power @ F
        total = total + power
    return total


def stacked_solve(batches: Sequence[tuple], R, config):
    """Concatenate ``(H, Y)`` batches and run one batch HR solve.

    Reference for the incremental recursions in :mod:`hrlearn.elmnet`.
    """
    from . import regcore

    H = np.vstack([np.atleast_2d(np.asarray(h, dtype=float)) for h, _ in batches])
    Y = np.vstack([np.asarray(y, dtype=float).reshape(len(h), -1) for h, y in batches])
    problem = regcore.RegProblem.from_data(H, Y)
    beta, _ = regcore.hr_solve_matrix(problem, R, config)
    return beta


def fd_gradient(loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    p = np.array(params, dtype=float)
    grad = np.empty_like(p)
    for i in range(p.size):
        step = np.zeros_like(p)
        step.flat[i] = h
        grad.flat[i] = (loss_fn(p + step) - loss_fn(p - step)) / (2.0 * h)
    return grad


def rls_step(P, beta, H, Y):
    """One literal step of the incremental ELM recursion.

    ``K = I - P H^T (H P H^T + I)^{-1} H``, ``beta' = K beta + K P H^T Y``,
    ``P' = K P``, evaluated term by term with explicit inverses.
    """
    n = H.shape[0]
    L = P.shape[0]
    K = np.eye(L) - P @ H.T @ np.linalg.inv(H @ P @ H.T + np.eye(n)) @ H
    return K @ P, K @ beta + K @ P @ H.T @ Y
