"""Self-contained sparse LP solver.

Problems are stated in general form::

    min (or max)  c'x
    s.t.          A_eq x  = b_eq
                  A_ub x <= b_ub
                  x_j >= 0 unless free[j]

and solved with a homogeneous self-dual primal-dual interior-point method
using Mehrotra's predictor-corrector (Andersen & Andersen, "The MOSEK
interior point optimizer for linear programming", 2000).  Free variables are
split and inequality rows get slacks, so the core only sees standard form
``min c'x, Ax = b, x >= 0``.  A basis-recovery step then tries to move the
interior solution onto a vertex.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
UNCONVERGED = "unconverged"


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    A_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    free: np.ndarray | None = None
    maximize: bool = False
    name: str = "lp"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).ravel()
        n = self.c.size
        if self.A_eq is None:
            self.A_eq, self.b_eq = sp.csr_matrix((0, n)), np.zeros(0)
        if self.A_ub is None:
            self.A_ub, self.b_ub = sp.csr_matrix((0, n)), np.zeros(0)
        self.A_eq = sp.csr_matrix(self.A_eq, dtype=np.float64)
        self.A_ub = sp.csr_matrix(self.A_ub, dtype=np.float64)
        self.b_eq = np.asarray(self.b_eq, dtype=np.float64).ravel()
        self.b_ub = np.asarray(self.b_ub, dtype=np.float64).ravel()
        self.free = (np.zeros(n, dtype=bool) if self.free is None
                     else np.asarray(self.free, dtype=bool).ravel())
        if self.A_eq.shape[1] != n or self.A_ub.shape[1] != n or self.free.size != n:
            raise ValueError("column counts of c, A_eq, A_ub and free disagree")
        if self.A_eq.shape[0] != self.b_eq.size or self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError("row counts of constraint matrices and right-hand sides disagree")
        for arr in (self.c, self.b_eq, self.b_ub, self.A_eq.data, self.A_ub.data):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP data must be finite")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 200
    step_fraction: float = 0.99995
    dense_threshold: int = 4000
    crossover: bool = True
    crossover_tol: float = 1e-9


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    objective: float
    dual_objective: float
    y_eq: np.ndarray
    y_ub: np.ndarray
    iterations: int
    message: str = ""
    history: list = field(default_factory=list)
    certificate: np.ndarray | None = None
    vertex: bool = False


class _NormalMatrix:
    """Factorization of ``A diag(d) A'``; dense Cholesky when small."""

    def __init__(self, A: sp.csr_matrix, d: np.ndarray, dense: bool):
        M = (A @ sp.diags(d) @ A.T).tocsc()
        self.dense = dense
        if dense:
            M = M.toarray()
            M[np.diag_indices_from(M)] += 1e-15 * max(1.0, float(np.max(np.diag(M), initial=0.0)))
            try:
                self._fac = ("chol", la.cho_factor(M, check_finite=False))
            except la.LinAlgError:
                self._fac = ("lu", la.lu_factor(M, check_finite=False))
        else:
            self._fac = ("splu", spla.splu(M, permc_spec="MMD_AT_PLUS_A"))

    def solve(self, r: np.ndarray) -> np.ndarray:
        kind, fac = self._fac
        if kind == "chol":
            return la.cho_solve(fac, r, check_finite=False)
        if kind == "lu":
            return la.lu_solve(fac, r, check_finite=False)
        return fac.solve(r)


def _to_standard(lp: LinearProgram):
    """Return ``(A, b, c)`` in standard form plus the column layout."""
    pos = np.flatnonzero(~lp.free)
    fr = np.flatnonzero(lp.free)
    m_ub = lp.A_ub.shape[0]
    sign = -1.0 if lp.maximize else 1.0
    A_all = sp.vstack([lp.A_eq, lp.A_ub]).tocsc()
    blocks = [A_all[:, pos], A_all[:, fr], -A_all[:, fr]]
    slack = sp.vstack([sp.csc_matrix((lp.A_eq.shape[0], m_ub)), sp.identity(m_ub, format="csc")])
    A = sp.hstack(blocks + [slack]).tocsr()
    b = np.concatenate([lp.b_eq, lp.b_ub])
    c = sign * np.concatenate([lp.c[pos], lp.c[fr], -lp.c[fr], np.zeros(m_ub)])
    return A, b, c, pos, fr


def _from_standard(lp: LinearProgram, xs: np.ndarray, pos, fr) -> np.ndarray:
    x = np.zeros(lp.n)
    x[pos] = xs[: pos.size]
    nf = fr.size
    x[fr] = xs[pos.size: pos.size + nf] - xs[pos.size + nf: pos.size + 2 * nf]
    return x


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-v[neg] / dv[neg]))


def _hsd(A: sp.csr_matrix, b: np.ndarray, c: np.ndarray, opts: SolverOptions):
    """Homogeneous self-dual IPM on ``min c'x, Ax = b, x >= 0``."""
    m, n = A.shape
    dense = m <= opts.dense_threshold
    x, z = np.ones(n), np.ones(n)
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0

    def residuals(x, y, z, tau, kappa):
        rp = b * tau - A @ x
        rd = c * tau - A.T @ y - z
        rg = c @ x - b @ y + kappa
        return rp, rd, rg

    rp0, rd0, rg0 = residuals(x, y, z, tau, kappa)
    n_rp0 = max(1.0, np.linalg.norm(rp0))
    n_rd0 = max(1.0, np.linalg.norm(rd0))
    n_rg0 = max(1.0, abs(rg0))
    mu0 = (x @ z + tau * kappa) / (n + 1)

    history = []
    status = UNCONVERGED
    message = "iteration limit reached"
    it = 0
    for it in range(1, opts.max_iter + 1):
        rp, rd, rg = residuals(x, y, z, tau, kappa)
        mu = (x @ z + tau * kappa) / (n + 1)
        d = x / z
        try:
            normal = _NormalMatrix(A, d, dense)
            # (p, q): the tau-coupling solve, shared by predictor and corrector
            q = normal.solve(b + A @ (d * c))
            p = d * (A.T @ q - c)
        except (la.LinAlgError, RuntimeError, ValueError) as exc:
            message = f"normal equations failed: {exc}"
            break

        def direction(gamma, rxs, rtk):
            eta = 1.0 - gamma
            r1 = eta * rd - rxs / x
            r2 = eta * rp
            v = normal.solve(r2 + A @ (d * r1))
            u = d * (A.T @ v - r1)
            dtau = ((eta * rg + rtk / tau - (-c @ u + b @ v))
                    / (kappa / tau + (-c @ p + b @ q)))
            dx = u + p * dtau
            dy = v + q * dtau
            dz = (rxs - z * dx) / x
            dkappa = (rtk - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        def step_length(dx, dz, dtau, dkappa, frac):
            a = min(_max_step(x, dx), _max_step(z, dz),
                    tau / -dtau if dtau < 0 else math.inf,
                    kappa / -dkappa if dkappa < 0 else math.inf)
            return min(1.0, frac * a)

        # predictor (affine scaling)
        rxs = -x * z
        rtk = -tau * kappa
        dx, dy, dz, dtau, dkappa = direction(0.0, rxs, rtk)
        alpha_aff = step_length(dx, dz, dtau, dkappa, 1.0)
        # corrector
        gamma = (1.0 - alpha_aff) ** 2 * min(0.1, 1.0 - alpha_aff)
        rxs = gamma * mu - x * z - dx * dz
        rtk = gamma * mu - tau * kappa - dtau * dkappa
        dx, dy, dz, dtau, dkappa = direction(gamma, rxs, rtk)
        if not all(np.all(np.isfinite(v)) for v in (dx, dy, dz)) or not np.isfinite(dtau):
            message = "non-finite search direction"
            break
        alpha = step_length(dx, dz, dtau, dkappa, opts.step_fraction)
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

        rp, rd, rg = residuals(x, y, z, tau, kappa)
        mu = (x @ z + tau * kappa) / (n + 1)
        rho_p = np.linalg.norm(rp) / n_rp0
        rho_d = np.linalg.norm(rd) / n_rd0
        rho_g = abs(rg) / n_rg0
        rho_a = abs(c @ x - b @ y) / (tau + abs(b @ y))
        rho_mu = mu / mu0
        history.append({"iter": it, "rho_p": rho_p, "rho_d": rho_d, "rho_gap": rho_a,
                        "rho_mu": rho_mu, "alpha": alpha, "tau": tau, "kappa": kappa,
                        "objective": float(c @ x / tau)})
        if rho_p <= opts.tol and rho_d <= opts.tol and rho_a <= opts.tol:
            status, message = OPTIMAL, "converged"
            break
        inf1 = rho_p < opts.tol and rho_d < opts.tol and rho_g < opts.tol and tau < opts.tol * max(1.0, kappa)
        inf2 = rho_mu < opts.tol and tau < opts.tol * min(1.0, kappa)
        if inf1 or inf2:
            if b @ y > 0:
                status, message = INFEASIBLE, "primal infeasible (dual ray found)"
            else:
                status, message = UNBOUNDED, "primal unbounded (primal ray found)"
            break
    return x, y, z, tau, kappa, status, message, it, history


def _crossover(A: sp.csr_matrix, b, c, x, z, tol):
    """Try to turn an interior optimum into a vertex with the same objective."""
    basic = np.flatnonzero(x > z)
    m = A.shape[0]
    if basic.size != m:
        return None
    try:
        lu = spla.splu(sp.csc_matrix(A[:, basic]))
    except RuntimeError:
        return None
    xb = lu.solve(b)
    y = lu.solve(c[basic], trans="T")
    zv = c - A.T @ y
    scale_x = max(1.0, float(np.max(np.abs(x))))
    scale_z = max(1.0, float(np.max(np.abs(c))))
    if not (np.all(np.isfinite(xb)) and np.all(np.isfinite(y))):
        return None
    if xb.min() < -tol * scale_x or zv.min() < -tol * scale_z:
        return None
    xv = np.zeros_like(x)
    xv[basic] = np.maximum(xb, 0.0)
    zv[basic] = 0.0
    return xv, y, np.maximum(zv, 0.0)


def solve_lp(lp: LinearProgram, options: SolverOptions | None = None) -> LPResult:
    """Solve ``lp``; never returns silently on failure (see ``status``).

    ``y_eq``/``y_ub`` are multipliers in the sense of the stated objective,
    so that at an optimum ``objective == b_eq'y_eq + b_ub'y_ub``.
    """
    opts = options or SolverOptions()
    A, b, c, pos, fr = _to_standard(lp)
    m_eq = lp.A_eq.shape[0]
    sign = -1.0 if lp.maximize else 1.0

    def pack(status, xs, ys, iterations, message, history, certificate=None, vertex=False):
        x = _from_standard(lp, xs, pos, fr)
        y = sign * ys
        return LPResult(status, x, float(lp.c @ x), float(b @ y), y[:m_eq], y[m_eq:],
                        iterations, message, history, certificate, vertex)

    # empty rows: either redundant or a direct infeasibility proof
    row_nnz = np.diff(A.indptr)
    empty = row_nnz == 0
    if np.any(empty & (b != 0)):
        i = int(np.flatnonzero(empty & (b != 0))[0])
        cert = np.zeros(b.size)
        cert[i] = np.sign(b[i])
        return pack(INFEASIBLE, np.zeros(A.shape[1]), np.zeros(b.size), 0,
                    f"row {i} has no nonzeros but right-hand side {float(b[i])!r}", [], cert)
    keep = np.flatnonzero(~empty)
    A_red, b_red = A[keep], b[keep]

    if A.shape[1] == 0:
        return pack(OPTIMAL, np.zeros(0), np.zeros(b.size), 0, "no variables", [])

    x, y, z, tau, kappa, status, message, iters, history = _hsd(A_red, b_red, c, opts)
    y_full = np.zeros(b.size)
    if status == INFEASIBLE:
        y_full[keep] = y
        return pack(status, x / max(tau, 1e-300), y_full, iters, message, history, y_full.copy())
    if status == UNBOUNDED:
        return pack(status, x, y_full, iters, message, history, x.copy())

    xs, ys, zs = x / tau, y / tau, z / tau
    vertex = False
    if opts.crossover and status == OPTIMAL:
        res = _crossover(A_red, b_red, c, xs, zs, opts.crossover_tol)
        if res is not None:
            xv, yv, _ = res
            gap = abs(c @ xv - c @ xs)
            if gap <= 1e-6 * (1.0 + abs(c @ xs)):
                xs, ys, vertex = xv, yv, True
    y_full[keep] = ys
    log.debug("LP %s: %s after %d iterations (vertex=%s)", lp.name, status, iters, vertex)
    return pack(status, xs, y_full, iters, message, history, None, vertex)


# --- MPS interchange -------------------------------------------------------

def write_mps(lp: LinearProgram, path) -> None:
    """Write ``lp`` in free MPS format (1-based row/column names R*/C*)."""
    lines = [f"NAME {lp.name}"]
    if lp.maximize:
        lines += ["OBJSENSE", "    MAX"]
    lines.append("ROWS")
    lines.append(" N OBJ")
    m_eq, m_ub = lp.A_eq.shape[0], lp.A_ub.shape[0]
    lines += [f" E E{i + 1}" for i in range(m_eq)]
    lines += [f" L U{i + 1}" for i in range(m_ub)]
    lines.append("COLUMNS")
    eq = lp.A_eq.tocsc()
    ub = lp.A_ub.tocsc()
    for j in range(lp.n):
        name = f"C{j + 1}"
        if lp.c[j] != 0:
            lines.append(f"    {name} OBJ {float(lp.c[j])!r}")
        for k in range(eq.indptr[j], eq.indptr[j + 1]):
            lines.append(f"    {name} E{eq.indices[k] + 1} {float(eq.data[k])!r}")
        for k in range(ub.indptr[j], ub.indptr[j + 1]):
            lines.append(f"    {name} U{ub.indices[k] + 1} {float(ub.data[k])!r}")
    lines.append("RHS")
    for i, v in enumerate(lp.b_eq):
        if v != 0:
            lines.append(f"    RHS E{i + 1} {float(v)!r}")
    for i, v in enumerate(lp.b_ub):
        if v != 0:
            lines.append(f"    RHS U{i + 1} {float(v)!r}")
    lines.append("BOUNDS")
    for j in np.flatnonzero(lp.free):
        lines.append(f" FR BND C{j + 1}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mps(path) -> LinearProgram:
    """Read a file produced by :func:`write_mps`."""
    section = None
    name = "lp"
    maximize = False
    rows: dict[str, tuple[str, int]] = {}
    counts = {"E": 0, "L": 0}
    entries = {"E": [], "L": []}
    obj: dict[int, float] = {}
    rhs = {"E": {}, "L": {}}
    free = set()
    n = 0
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("*"):
                continue
            if not raw[0].isspace():
                head = line.split()
                section = head[0]
                if section == "NAME" and len(head) > 1:
                    name = head[1]
                if section == "OBJSENSE" and len(head) > 1:
                    maximize = head[1].upper() == "MAX"
                continue
            tok = line.split()
            if section == "OBJSENSE":
                maximize = tok[0].upper() == "MAX"
            elif section == "ROWS":
                kind, rname = tok
                if kind == "N":
                    rows[rname] = ("N", 0)
                else:
                    rows[rname] = (kind, counts[kind])
                    counts[kind] += 1
            elif section == "COLUMNS":
                j = int(tok[0][1:]) - 1
                n = max(n, j + 1)
                for rname, val in zip(tok[1::2], tok[2::2]):
                    kind, i = rows[rname]
                    if kind == "N":
                        obj[j] = float(val)
                    else:
                        entries[kind].append((i, j, float(val)))
            elif section == "RHS":
                for rname, val in zip(tok[1::2], tok[2::2]):
                    kind, i = rows[rname]
                    rhs[kind][i] = float(val)
            elif section == "BOUNDS":
                if tok[0] == "FR":
                    free.add(int(tok[2][1:]) - 1)
                    n = max(n, int(tok[2][1:]))

    def matrix(kind):
        m = counts[kind]
        if entries[kind]:
            i, j, v = zip(*entries[kind])
            mat = sp.csr_matrix((v, (i, j)), shape=(m, n))
        else:
            mat = sp.csr_matrix((m, n))
        b = np.zeros(m)
        for k, val in rhs[kind].items():
            b[k] = val
        return mat, b

    A_eq, b_eq = matrix("E")
    A_ub, b_ub = matrix("L")
    c = np.zeros(n)
    for j, v in obj.items():
        c[j] = v
    fmask = np.zeros(n, dtype=bool)
    fmask[list(free)] = True
    return LinearProgram(c, A_eq, b_eq, A_ub, b_ub, fmask, maximize, name)
