"""The finite Lyapunov-measure LP and its dual.

Primal (decision vector is theta stacked action by action)::

    min  sum_a G^a' theta^a
    s.t. sum_a theta^a - gamma sum_a (P1_a)' theta^a = m,   theta >= 0

Dual::

    max  m'V   s.t.  V <= gamma P1_a V + G^a   for every action a
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .discretization import TransitionFamily
from .errors import AssemblyError, ValidationError
from .lp_solver import (INFEASIBLE, OPTIMAL, UNBOUNDED, UNCONVERGED, LinearProgram, LPResult,
                        SolverOptions, solve_lp)


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    kkt: float = 1e-7
    duality: float = 1e-6
    theta_support: float = 1e-9
    rho: float = 1e-6
    solver: float = 1e-10

    @classmethod
    def from_dict(cls, data: dict | None) -> "Tolerances":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class StabilizationLP:
    gamma: float
    m: np.ndarray
    G: np.ndarray  # shape (M, N-1)
    family: TransitionFamily

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        G = np.atleast_2d(np.asarray(self.G, dtype=np.float64))
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "G", G)
        if not self.gamma > 1.0:
            raise ValidationError(f"gamma must exceed 1, got {self.gamma}")
        if m.ndim != 1 or m.size != self.n_cells:
            raise AssemblyError(f"m has length {m.size}, expected {self.n_cells}")
        if G.shape != (self.M, self.n_cells):
            raise AssemblyError(f"G has shape {G.shape}, expected {(self.M, self.n_cells)}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValidationError("m must be finite and nonnegative")
        if np.any(G < 0) or not np.all(np.isfinite(G)):
            raise ValidationError("costs G must be finite and nonnegative")
        for a, mat in enumerate(self.family.sub):
            if mat.shape != (self.n_cells, self.n_cells):
                raise AssemblyError(f"sub-matrix {a} has shape {mat.shape}")

    @property
    def n_cells(self) -> int:
        return self.family.N - 1

    @property
    def M(self) -> int:
        return self.family.M

    def with_m(self, m) -> "StabilizationLP":
        return replace(self, m=np.asarray(m, dtype=np.float64))

    def with_costs(self, G) -> "StabilizationLP":
        return replace(self, G=np.asarray(G, dtype=np.float64))


@dataclass
class KKTReport:
    primal_feasibility: float
    stationarity: float
    complementarity: float
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.primal_feasibility, self.stationarity, self.complementarity) <= self.tol


@dataclass
class LPSolution:
    theta: np.ndarray  # shape (M, N-1)
    V: np.ndarray
    primal_objective: float
    dual_objective: float
    status: str
    kkt_residuals: KKTReport | None = None
    iterations: int = 0
    vertex: bool = False
    history: list = field(default_factory=list)
    message: str = ""

    @property
    def duality_gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective)


def _constraint_matrix(spec: StabilizationLP) -> sp.csr_matrix:
    n1 = spec.n_cells
    eye = sp.identity(n1, format="csr")
    return sp.hstack([eye - spec.gamma * mat.T for mat in spec.family.sub]).tocsr()


def assemble_primal(spec: StabilizationLP) -> LinearProgram:
    """Equality-form primal with right-hand side ``m``."""
    A = _constraint_matrix(spec)
    return LinearProgram(spec.G.ravel(), A_eq=A, b_eq=spec.m.copy(), name="lyapunov_measure_primal")


def assemble_dual(spec: StabilizationLP) -> LinearProgram:
    """Inequality-form dual: one block ``(I - gamma P1_a) V <= G^a`` per action, V free."""
    n1 = spec.n_cells
    eye = sp.identity(n1, format="csr")
    A_ub = sp.vstack([eye - spec.gamma * mat for mat in spec.family.sub]).tocsr()
    return LinearProgram(spec.m.copy(), A_ub=A_ub, b_ub=spec.G.ravel(), free=np.ones(n1, bool),
                         maximize=True, name="lyapunov_measure_dual")


def primal_objective(spec: StabilizationLP, theta: np.ndarray) -> float:
    return float(np.sum(spec.G * theta))


def dual_slacks(spec: StabilizationLP, V: np.ndarray) -> np.ndarray:
    """``gamma P1_a V + G^a - V`` for every action, shape ``(M, N-1)``."""
    return np.stack([spec.gamma * (mat @ V) + spec.G[a] - V for a, mat in enumerate(spec.family.sub)])


def equality_residual(spec: StabilizationLP, theta: np.ndarray) -> np.ndarray:
    r = theta.sum(axis=0) - spec.m
    for a, mat in enumerate(spec.family.sub):
        r = r - spec.gamma * (mat.T @ theta[a])
    return r


def verify_kkt(spec: StabilizationLP, solution: LPSolution, tol: float = Tolerances.kkt) -> KKTReport:
    """Residuals of the optimality system, computed from the problem data directly."""
    theta, V = solution.theta, solution.V
    eq = np.max(np.abs(equality_residual(spec, theta)), initial=0.0)
    primal = max(eq, float(np.max(-theta, initial=0.0)))
    slack = dual_slacks(spec, V)
    stationarity = float(np.max(-slack, initial=0.0))
    comp = float(np.max(np.abs(theta * slack), initial=0.0))
    return KKTReport(float(primal), stationarity, comp, tol)


def _solution_from_primal(spec: StabilizationLP, res: LPResult) -> LPSolution:
    theta = res.x.reshape(spec.M, spec.n_cells)
    return LPSolution(theta, res.y_eq.copy(), res.objective, float(spec.m @ res.y_eq), res.status,
                      iterations=res.iterations, vertex=res.vertex, history=res.history,
                      message=res.message)


def solve_stabilization(spec: StabilizationLP, tolerances: Tolerances | None = None,
                        options: SolverOptions | None = None) -> LPSolution:
    """Solve the primal; ``V`` is read off the equality multipliers."""
    tol = tolerances or Tolerances()
    opts = options or SolverOptions(tol=tol.solver)
    res = solve_lp(assemble_primal(spec), opts)
    sol = _solution_from_primal(spec, res)
    if sol.status == OPTIMAL:
        sol.kkt_residuals = verify_kkt(spec, sol, tol.kkt)
    return sol


def solve_dual(spec: StabilizationLP, tolerances: Tolerances | None = None,
               options: SolverOptions | None = None) -> LPSolution:
    """Solve the dual LP on its own; ``theta`` comes from its inequality multipliers."""
    tol = tolerances or Tolerances()
    opts = options or SolverOptions(tol=tol.solver)
    res = solve_lp(assemble_dual(spec), opts)
    theta = res.y_ub.reshape(spec.M, spec.n_cells)
    status = res.status
    # primal infeasible <=> dual unbounded (the dual is always feasible at V = 0)
    if status == UNBOUNDED:
        status = INFEASIBLE
    sol = LPSolution(theta, res.x.copy(), primal_objective(spec, theta), res.objective, status,
                     iterations=res.iterations, vertex=res.vertex, history=res.history,
                     message=res.message)
    if status == OPTIMAL:
        sol.kkt_residuals = verify_kkt(spec, sol, tol.kkt)
    return sol


@dataclass
class FeasibilityPhaseReport:
    residuals: np.ndarray
    masked: tuple[int, ...]
    resid_tol: float
    status: str
    objective: float

    @property
    def nothing_stabilizable(self) -> bool:
        return len(self.masked) == self.residuals.size

    def summary(self) -> str:
        if self.nothing_stabilizable:
            return "nothing stabilizable: every cell masked"
        if not self.masked:
            return "all cells stabilizable: zero residual, no masking"
        return f"{len(self.masked)} non-stabilizable cells masked: " + " ".join(
            str(i + 1) for i in self.masked)


def feasibility_phase(spec: StabilizationLP, resid_tol: float | None = None,
                      options: SolverOptions | None = None) -> tuple[StabilizationLP, FeasibilityPhaseReport]:
    """Minimize the l1 norm of the equality residuals over theta >= 0.

    Cells whose residual exceeds ``resid_tol`` (default ``1e-6 * max(m)``)
    are reported and their ``m`` entries zeroed in the returned spec.
    """
    n1, M = spec.n_cells, spec.M
    if resid_tol is None:
        resid_tol = 1e-6 * max(float(spec.m.max(initial=0.0)), 1e-300)
    A = _constraint_matrix(spec)
    eye = sp.identity(n1, format="csr")
    A_big = sp.hstack([A, eye, -eye]).tocsr()
    c = np.concatenate([np.zeros(M * n1), np.ones(2 * n1)])
    lp = LinearProgram(c, A_eq=A_big, b_eq=spec.m.copy(), name="l1_feasibility_phase")
    res = solve_lp(lp, options or SolverOptions())
    if res.status != OPTIMAL:
        raise RuntimeError(f"feasibility phase LP ended with status {res.status}: {res.message}")
    theta = res.x[: M * n1].reshape(M, n1)
    resid = np.abs(equality_residual(spec, theta))
    masked = tuple(int(i) for i in np.flatnonzero(resid > resid_tol))
    m_new = spec.m.copy()
    m_new[list(masked)] = 0.0
    report = FeasibilityPhaseReport(resid, masked, float(resid_tol), res.status, res.objective)
    return spec.with_m(m_new), report


__all__ = [
    "Tolerances", "StabilizationLP", "LPSolution", "KKTReport", "assemble_primal", "assemble_dual",
    "solve_stabilization", "solve_dual", "verify_kkt", "feasibility_phase", "FeasibilityPhaseReport",
    "dual_slacks", "equality_residual", "primal_objective", "OPTIMAL", "INFEASIBLE", "UNCONVERGED",
]
