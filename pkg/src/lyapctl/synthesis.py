"""Deterministic policy extraction, Lyapunov measure and stability certificate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CertificateError, ConvergenceError, ExtractionError, PreconditionError
from .feasibility import closed_loop_sub
from .lp_core import LPSolution, StabilizationLP, Tolerances, OPTIMAL
from .spectral import spectral_radius

DIRECT_SOLVE_LIMIT = 5000
ITERATIVE_TOL = 1e-10


@dataclass(frozen=True)
class ControlPolicy:
    action_of: np.ndarray  # action per cell, -1 where no action is supported
    closed_loop_sub: sp.csr_matrix
    closed_loop_cost: np.ndarray

    @property
    def assigned(self) -> np.ndarray:
        return self.action_of >= 0


def policy_from_actions(spec: StabilizationLP, actions) -> ControlPolicy:
    actions = np.asarray(actions, dtype=np.int64)
    P = closed_loop_sub(spec.family, actions)
    cost = np.zeros(spec.n_cells)
    ok = actions >= 0
    cost[ok] = spec.G[actions[ok], np.flatnonzero(ok)]
    actions.setflags(write=False)
    return ControlPolicy(actions, P, cost)


def extract_policy(spec: StabilizationLP, solution: LPSolution,
                   support_tol: float = Tolerances.theta_support) -> ControlPolicy:
    """Pick ``a(j) = min{a : theta^a_j > support_tol}`` on every cell.

    Cells whose ``m`` entry is zero (masked by the feasibility phase) may
    legitimately carry no mass; they are left unassigned.  A cell with
    positive ``m`` and no supported action raises :class:`ExtractionError`.
    """
    if solution.status != OPTIMAL:
        raise PreconditionError(f"cannot extract a policy from an LP with status {solution.status}")
    supported = solution.theta > support_tol
    has = supported.any(axis=0)
    missing = np.flatnonzero(~has & (spec.m > 0))
    if missing.size:
        j = int(missing[0])
        raise ExtractionError(j, f"cell {j} (m = {spec.m[j]!r}) has no action with theta above "
                                 f"{support_tol}; max theta there is {solution.theta[:, j].max()!r}")
    actions = np.where(has, np.argmax(supported, axis=0), -1)
    return policy_from_actions(spec, actions)


def _solve(matrix: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    """Sparse LU up to DIRECT_SOLVE_LIMIT unknowns, ILU-preconditioned GMRES beyond."""
    n = matrix.shape[0]
    if n == 0:
        return np.zeros(0)
    A = sp.csc_matrix(matrix)
    if n <= DIRECT_SOLVE_LIMIT:
        try:
            return spla.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise CertificateError(f"closed-loop system is singular: {exc}") from exc
    history = []
    ilu = spla.spilu(A, drop_tol=1e-6)
    pre = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, rhs, M=pre, rtol=ITERATIVE_TOL, restart=100, maxiter=2000,
                         callback=history.append, callback_type="pr_norm")
    if info != 0:
        raise ConvergenceError(f"GMRES did not converge (info={info})", history)
    return x


def _measure_operator(spec: StabilizationLP, policy: ControlPolicy) -> sp.csr_matrix:
    n1 = spec.n_cells
    return (sp.identity(n1, format="csr") - spec.gamma * policy.closed_loop_sub.T).tocsr()


def theta_tilde(spec: StabilizationLP, policy: ControlPolicy) -> tuple[np.ndarray, float]:
    """Primal solution concentrated on the policy's actions.

    Per cell the mass is ``((I - gamma P1_u')^{-1} m)_j`` on action ``a(j)``
    and zero on every other action.
    """
    mu = _solve(_measure_operator(spec, policy), spec.m)
    if np.any(mu < -1e-12 * max(1.0, np.abs(mu).max())):
        raise CertificateError("closed-loop inverse is not nonnegative; rho(P1_u) < 1/gamma fails")
    theta = np.zeros((spec.M, spec.n_cells))
    ok = policy.assigned
    theta[policy.action_of[ok], np.flatnonzero(ok)] = np.maximum(mu[ok], 0.0)
    return theta, float(np.sum(spec.G * theta))


@dataclass(frozen=True)
class LyapunovMeasure:
    mu: np.ndarray
    residual: float


def lyapunov_measure(spec: StabilizationLP, policy: ControlPolicy) -> LyapunovMeasure:
    """Solve ``(I - gamma P1_u') mu = m`` and report ``||gamma P1_u' mu - mu + m||_inf``."""
    op = _measure_operator(spec, policy)
    mu = _solve(op, spec.m)
    residual = float(np.max(np.abs(spec.gamma * (policy.closed_loop_sub.T @ mu) - mu + spec.m),
                            initial=0.0))
    return LyapunovMeasure(mu, residual)


VALID = "valid"
INVALID = "invalid"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class StabilityCertificate:
    spectral_radius_estimate: float
    spectral_radius_bound: float
    gamma: float
    margin: float
    duality_gap: float
    theta_tilde_check: float
    power_iterations: int
    converged: bool
    status: str

    @property
    def valid(self) -> bool:
        return self.status == VALID

    def report(self) -> str:
        rows = [
            ("status", self.status),
            ("gamma", repr(self.gamma)),
            ("1/gamma", repr(1.0 / self.gamma)),
            ("spectral_radius_estimate", repr(self.spectral_radius_estimate)),
            ("spectral_radius_upper_bound", repr(self.spectral_radius_bound)),
            ("margin", repr(self.margin)),
            ("power_iterations", str(self.power_iterations)),
            ("power_iteration_converged", str(self.converged)),
            ("duality_gap", repr(self.duality_gap)),
            ("theta_tilde_objective_difference", repr(self.theta_tilde_check)),
        ]
        return "".join(f"{k}: {v}\n" for k, v in rows)


def certify(spec: StabilizationLP, policy: ControlPolicy, solution: LPSolution | None = None,
            tolerances: Tolerances | None = None, max_iters: int = 10_000) -> StabilityCertificate:
    """Power-iteration check of ``rho(P1_u) < 1/gamma`` plus LP consistency figures.

    The certificate is valid when the estimate is below ``1/gamma - rho_tol``
    and the duality gap is within tolerance; it is inconclusive, never valid,
    when the power iteration did not converge.
    """
    tol = tolerances or Tolerances()
    rho = spectral_radius(policy.closed_loop_sub, max_iters=max_iters)
    margin = 1.0 / spec.gamma - rho.estimate
    gap = tilde_diff = float("nan")
    if solution is not None and solution.status == OPTIMAL:
        gap = solution.duality_gap
        try:
            _, obj = theta_tilde(spec, policy)
            tilde_diff = abs(obj - solution.dual_objective)
        except CertificateError:
            tilde_diff = float("inf")
    gap_ok = solution is not None and gap <= tol.duality * (1.0 + abs(solution.dual_objective))
    if not rho.converged:
        status = INCONCLUSIVE
    elif rho.estimate < 1.0 / spec.gamma - tol.rho and gap_ok:
        status = VALID
    else:
        status = INVALID
    return StabilityCertificate(rho.estimate, rho.upper_bound, spec.gamma, margin, gap, tilde_diff,
                                rho.iterations, rho.converged, status)


@dataclass(frozen=True)
class ValueConsistency:
    dp_residual: float
    neumann_residual: float
    neumann_terms: int
    tol: float

    @property
    def ok(self) -> bool:
        return self.dp_residual <= self.tol and self.neumann_residual <= self.tol


def value_consistency(spec: StabilizationLP, policy: ControlPolicy, V: np.ndarray,
                      tol: float = Tolerances.kkt, max_terms: int = 200_000) -> ValueConsistency:
    """Check ``V = gamma P1_u V + G^u`` and ``V = sum_k (gamma P1_u)^k G^u`` on assigned cells."""
    P = policy.closed_loop_sub
    ok = policy.assigned
    dp = spec.gamma * (P @ V) + policy.closed_loop_cost - V
    dp_res = float(np.max(np.abs(dp[ok]), initial=0.0))
    term = policy.closed_loop_cost.copy()
    total = term.copy()
    k = 0
    scale = max(1.0, float(np.max(np.abs(total), initial=0.0)))
    for k in range(1, max_terms + 1):
        term = spec.gamma * (P @ term)
        total += term
        if np.max(np.abs(term), initial=0.0) <= 1e-17 * scale:
            break
    neu = float(np.max(np.abs(total[ok] - V[ok]), initial=0.0))
    return ValueConsistency(dp_res, neu, k, tol)


@dataclass(frozen=True)
class ClosedLoopDecay:
    mass: np.ndarray  # 1'(P1_u')^n m for n = 0..steps
    beta: float
    M0: float


def closed_loop_decay(spec: StabilizationLP, policy: ControlPolicy, steps: int = 500) -> ClosedLoopDecay:
    """Surviving mass ``1'(P1_u')^n m`` and a geometric fit on its tail."""
    mu = spec.m.copy()
    out = [mu.sum()]
    PT = policy.closed_loop_sub.T.tocsr()
    for _ in range(steps):
        mu = PT @ mu
        out.append(mu.sum())
    mass = np.asarray(out)
    beta, M0 = fit_geometric(mass)
    return ClosedLoopDecay(mass, beta, M0)


def fit_geometric(seq: np.ndarray) -> tuple[float, float]:
    """Least-squares fit of ``log seq[n] = log M + n log beta`` on the positive tail.

    The tail is the second half of the strictly positive entries; an all-zero
    tail gives ``beta = 0``.
    """
    seq = np.asarray(seq, dtype=np.float64)
    idx = np.flatnonzero(seq > 0)
    if idx.size < 2:
        return 0.0, float(seq[0]) if seq.size else 0.0
    tail = idx[idx.size // 2:]
    if tail.size < 2:
        tail = idx[-2:]
    slope, intercept = np.polyfit(tail.astype(np.float64), np.log(seq[tail]), 1)
    return float(np.exp(slope)), float(np.exp(intercept))
