"""Backward tree growing (layered reachability) and its transience certificate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretization import TransitionFamily
from .errors import PreconditionError
from .spectral import spectral_radius

POSITIVE_TOL = 1e-12
STABILIZABLE = "stabilizable"
PARTIAL = "partially_stabilizable"


@dataclass(frozen=True)
class FeasibilityResult:
    status: str
    layers: tuple[tuple[int, ...], ...]
    assignment: dict[int, int]
    unstabilizable: tuple[int, ...]

    @property
    def L_max(self) -> int:
        return len(self.layers) - 1

    def actions(self, n_cells: int) -> np.ndarray:
        """Assignment as an array over cells ``0 .. n_cells-1``; ``-1`` if unassigned."""
        out = np.full(n_cells, -1, dtype=np.int64)
        for i, a in self.assignment.items():
            out[i] = a
        return out

    def report(self) -> str:
        lines = [f"status: {self.status}", f"layers: {len(self.layers)} (L_max = {self.L_max})"]
        for k, layer in enumerate(self.layers):
            cells = " ".join(str(i + 1) for i in layer)
            lines.append(f"layer {k} [{len(layer)} cells]: {cells}")
        lines.append("assignment (cell action):")
        for i in sorted(self.assignment):
            lines.append(f"{i + 1} {self.assignment[i] + 1}")
        lines.append(f"unstabilizable [{len(self.unstabilizable)} cells]: "
                     + " ".join(str(i + 1) for i in self.unstabilizable))
        return "\n".join(lines) + "\n"


def grow_tree(family: TransitionFamily, positive_tol: float = POSITIVE_TOL) -> FeasibilityResult:
    """Layer the cells by how many controlled steps they need to reach the attractor.

    Layer 0 is the attractor macro-cell.  A cell joins layer L+1 when some
    action moves it into layer L with positive probability; the smallest such
    action index is assigned.  Stops when every cell is layered or when a
    layer comes out empty (the leftover cells cannot be stabilized with this
    control set).
    """
    n = family.N
    # reach[a] is a boolean (N x N) pattern of strictly positive entries
    reach = [sp.csr_matrix(m > positive_tol, dtype=np.float64) for m in family.full]
    layered = np.zeros(n, dtype=bool)
    layered[n - 1] = True
    layers = [(n - 1,)]
    assignment: dict[int, int] = {}
    while not layered.all():
        prev = np.zeros(n)
        prev[list(layers[-1])] = 1.0
        todo = ~layered
        picked = np.full(n, -1, dtype=np.int64)
        for a, pattern in enumerate(reach):
            hits = (pattern @ prev) > 0
            fresh = todo & hits & (picked < 0)
            picked[fresh] = a
        new_layer = np.flatnonzero(picked >= 0)
        if new_layer.size == 0:
            break
        for i in new_layer:
            assignment[int(i)] = int(picked[i])
        layered[new_layer] = True
        layers.append(tuple(int(i) for i in new_layer))
    leftover = tuple(int(i) for i in np.flatnonzero(~layered))
    status = STABILIZABLE if not leftover else PARTIAL
    return FeasibilityResult(status, tuple(layers), assignment, leftover)


def closed_loop_sub(family: TransitionFamily, actions: np.ndarray) -> sp.csr_matrix:
    """Row ``j`` of the result is row ``j`` of ``sub[actions[j]]``; rows with action ``-1`` are zero."""
    n1 = family.N - 1
    actions = np.asarray(actions)
    blocks = []
    for a, mat in enumerate(family.sub):
        rows = (actions == a).astype(np.float64)
        blocks.append(sp.diags(rows) @ mat)
    out = sp.csr_matrix(sum(blocks)) if blocks else sp.csr_matrix((n1, n1))
    out.eliminate_zeros()
    out.sort_indices()
    return out


@dataclass(frozen=True)
class TransienceReport:
    L_max: int
    horizon: int
    norms: tuple[float, ...]
    strictly_decreasing: bool
    mass_decreases: bool
    spectral_radius: float
    spectral_radius_bound: float
    spectral_converged: bool

    @property
    def final_norm(self) -> float:
        return self.norms[-1] if self.norms else float("nan")

    @property
    def transient(self) -> bool:
        return self.strictly_decreasing and self.mass_decreases and self.spectral_radius_bound < 1.0


def transience_certificate(family: TransitionFamily, result: FeasibilityResult,
                           horizon: int | None = None) -> TransienceReport:
    """Check that the tree-growing controls make the sub-Markov chain transient.

    Reports ``||(P1)^(k L_max)||_inf`` for ``k = 1 .. horizon``.  The sequence
    counts as strictly decreasing if each term is below its predecessor until
    it reaches exactly zero, after which it stays zero.
    """
    if result.status != STABILIZABLE:
        raise PreconditionError(
            f"transience certificate needs a stabilizable result, got {result.status} "
            f"with {len(result.unstabilizable)} unstabilizable cells"
        )
    n1 = family.N - 1
    L = result.L_max
    if horizon is None:
        horizon = math.ceil(200 / L)
    P = closed_loop_sub(family, result.actions(n1))
    # for a nonnegative matrix the inf-norm of P^k is max(P^k 1)
    v = np.ones(n1)
    norms = []
    for _ in range(horizon):
        for _ in range(L):
            v = P @ v
        norms.append(float(v.max()) if n1 else 0.0)
    strictly = True
    prev = 1.0  # ||P^0||_inf
    for val in norms:
        if prev == 0.0:
            strictly &= val == 0.0
        else:
            strictly &= val < prev
        prev = val
    mu0 = np.full(n1, 1.0 / n1)
    mass = mu0.copy()
    for _ in range(L):
        mass = P.T @ mass
    rho = spectral_radius(P)
    return TransienceReport(L, horizon, tuple(norms), bool(strictly),
                            bool(mass.sum() < mu0.sum()), rho.estimate, rho.upper_bound,
                            rho.converged)
