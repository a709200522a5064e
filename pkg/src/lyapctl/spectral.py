"""Spectral radius of nonnegative (sparse) matrices by power iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class PowerIterationResult:
    estimate: float
    upper_bound: float
    iterations: int
    converged: bool


def _collatz_wielandt_max(ax: np.ndarray, x: np.ndarray) -> float:
    # for x > 0 and A >= 0, rho(A) <= max_i (Ax)_i / x_i
    return float(np.max(ax / x))


def spectral_radius(A, max_iters: int = 10_000, tol: float = 1e-10) -> PowerIterationResult:
    """Perron root of a nonnegative square matrix.

    Plain power iteration from the all-ones vector is tried first; it stops
    early with an exact zero for nilpotent matrices.  If the estimate does
    not settle (periodic or slowly mixing matrices), the iteration restarts
    on ``A + I``, which is aperiodic and has Perron root ``rho(A) + 1``.

    ``upper_bound`` is the Collatz-Wielandt bound at the final positive
    iterate, a rigorous upper bound on ``rho(A)``.
    """
    A = sp.csr_matrix(A, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        return PowerIterationResult(0.0, 0.0, 0, True)
    if A.nnz and A.data.min() < 0:
        raise ValueError("power iteration here assumes a nonnegative matrix")

    x = np.full(n, 1.0 / n)
    bound = np.inf
    prev_lam = np.nan
    prev_est = np.inf
    budget = max_iters // 2
    it = 0
    for it in range(1, budget + 1):
        y = A @ x
        lam = y.sum()  # x has unit 1-norm
        if lam == 0.0:
            return PowerIterationResult(0.0, 0.0, it, True)
        if np.all(x > 0):
            bound = min(bound, _collatz_wielandt_max(y, x))
        x = y / lam
        # two-step growth rate: also settles when the dominant class has period 2
        est = lam if np.isnan(prev_lam) else np.sqrt(lam * prev_lam)
        if abs(est - prev_est) <= tol * est:
            return PowerIterationResult(float(est), float(max(bound, est)), it, True)
        prev_lam, prev_est = lam, est

    used = it
    shift = 1.0
    x = np.full(n, 1.0 / n)
    prev = np.inf
    lam = np.nan
    for it in range(1, max_iters - used + 1):
        y = A @ x + shift * x
        lam = y.sum()
        bound = min(bound, _collatz_wielandt_max(y - shift * x, x))
        x = y / lam
        if abs(lam - prev) <= tol * lam:
            est = lam - shift
            return PowerIterationResult(float(est), float(max(bound, est)), used + it, True)
        prev = lam
    return PowerIterationResult(float(lam - shift), float(bound), max_iters, False)
