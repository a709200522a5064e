"""Box partitions, control quantization and Ulam transition matrices.

Cell indices are 0-based.  Raw cells are numbered in C (row-major) order
over ``cells_per_dim``.  After lumping, the non-attractor cells keep their
raw order as indices ``0 .. N-2`` and every attractor cell maps to the
absorbing macro-cell ``N - 1``.  The text exports use 1-based indices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .systems import ExplicitSystem, StateBox, SystemDef

STRATIFIED = "stratified_grid"
RANDOM = "seeded_random"
EXPLICIT = "explicit"
SAMPLING_MODES = (STRATIFIED, RANDOM)
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Partition:
    box: StateBox
    cells_per_dim: tuple[int, ...]
    attractor_cells: tuple[int, ...]
    raw_to_lumped: np.ndarray
    lumped_to_raw: np.ndarray

    @property
    def N(self) -> int:
        return self.lumped_to_raw.size + 1

    @property
    def attractor(self) -> int:
        return self.N - 1

    @property
    def n_raw(self) -> int:
        return int(np.prod(self.cells_per_dim))

    @property
    def widths(self) -> np.ndarray:
        return self.box.lengths / np.asarray(self.cells_per_dim, dtype=np.float64)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    def raw_cells_of(self, points: np.ndarray) -> np.ndarray:
        """Raw (unlumped) cell index of each row of ``points``."""
        pts = self.box.fold(np.atleast_2d(np.asarray(points, dtype=np.float64)))
        self.box.check(pts)
        n = np.asarray(self.cells_per_dim)
        idx = np.floor((pts - self.box.lower) * n / self.box.lengths).astype(np.int64)
        # x just below `upper` can round up to n
        np.clip(idx, 0, n - 1, out=idx)
        return np.ravel_multi_index(tuple(idx.T), self.cells_per_dim)

    def cells_of(self, points: np.ndarray) -> np.ndarray:
        return self.raw_to_lumped[self.raw_cells_of(points)]

    def raw_centers(self, raw: np.ndarray | None = None) -> np.ndarray:
        raw = np.arange(self.n_raw) if raw is None else np.asarray(raw)
        multi = np.stack(np.unravel_index(raw, self.cells_per_dim), axis=1)
        return self.box.lower + (multi + 0.5) * self.widths

    def centers(self) -> np.ndarray:
        """Centers of the non-attractor cells, shape ``(N - 1, q)``."""
        return self.raw_centers(self.lumped_to_raw)


def build_partition(box: StateBox, cells_per_dim: Sequence[int],
                    attractor_points: Sequence[Sequence[float]]) -> Partition:
    """Uniform grid partition of ``box`` with the attractor cells lumped into one."""
    cells = tuple(int(c) for c in np.atleast_1d(cells_per_dim))
    if len(cells) != box.dim:
        raise ValidationError(f"need {box.dim} cell counts, got {len(cells)}")
    if any(c < 1 for c in cells):
        raise ValidationError("cells_per_dim entries must be >= 1")
    pts = np.atleast_2d(np.asarray(attractor_points, dtype=np.float64))
    if pts.size == 0:
        raise ValidationError("at least one attractor point is required")
    if pts.shape[1] != box.dim:
        raise ValidationError(f"attractor points must have {box.dim} coordinates")

    n_raw = int(np.prod(cells))
    probe = Partition(box, cells, (), np.zeros(n_raw, dtype=np.int64), np.arange(n_raw))
    attractor = np.unique(probe.raw_cells_of(pts))
    if attractor.size == n_raw:
        raise ValidationError("every cell is an attractor cell; nothing to stabilize")
    is_attr = np.zeros(n_raw, dtype=bool)
    is_attr[attractor] = True
    lumped_to_raw = np.flatnonzero(~is_attr)
    raw_to_lumped = np.full(n_raw, lumped_to_raw.size, dtype=np.int64)
    raw_to_lumped[lumped_to_raw] = np.arange(lumped_to_raw.size)
    raw_to_lumped.setflags(write=False)
    lumped_to_raw.setflags(write=False)
    return Partition(box, cells, tuple(int(a) for a in attractor), raw_to_lumped, lumped_to_raw)


def cell_of(partition: Partition, x) -> int:
    """Lumped cell index of a single state (attractor cells give ``N - 1``)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return int(partition.cells_of(x[None, :])[0])


@dataclass(frozen=True)
class ControlGrid:
    """Ordered finite control set; row ``a`` is the control for action ``a``."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValidationError("control grid needs at least one value")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("control values must be finite")
        if np.unique(vals, axis=0).shape[0] != vals.shape[0]:
            raise ValidationError("control values must be distinct")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_range(cls, lo: float, step: float, hi: float, decimals: int = 12) -> "ControlGrid":
        """Inclusive ``lo:step:hi`` range, rounded to suppress float drift."""
        if step == 0 or (hi - lo) / step < 0:
            raise ValidationError(f"bad range {lo}:{step}:{hi}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        vals = np.round(lo + step * np.arange(count), decimals)
        return cls(vals)

    @classmethod
    def parse(cls, text: str) -> "ControlGrid":
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"range must look like lo:step:hi, got {text!r}")
        try:
            lo, step, hi = (float(p) for p in parts)
        except ValueError as exc:
            raise ValidationError(f"bad range {text!r}") from exc
        return cls.from_range(lo, step, hi)


@dataclass(frozen=True)
class TransitionFamily:
    """Per-action Ulam matrices and their restrictions to the attractor complement."""

    full: tuple[sp.csr_matrix, ...]
    sub: tuple[sp.csr_matrix, ...]
    samples_per_cell: int
    sampling_mode: str

    @property
    def N(self) -> int:
        return self.full[0].shape[0]

    @property
    def M(self) -> int:
        return len(self.full)

    @classmethod
    def from_full(cls, matrices, samples_per_cell: int = 0,
                  sampling_mode: str = EXPLICIT) -> "TransitionFamily":
        """Force the last row absorbing and cut out the sub-Markov blocks."""
        full = []
        for mat in matrices:
            mat = sp.lil_matrix(sp.csr_matrix(mat, dtype=np.float64))
            n = mat.shape[0]
            mat[n - 1, :] = 0.0
            mat[n - 1, n - 1] = 1.0
            csr = sp.csr_matrix(mat)
            csr.eliminate_zeros()
            csr.sort_indices()
            full.append(csr)
        shapes = {m.shape for m in full}
        if len(shapes) != 1 or full[0].shape[0] != full[0].shape[1]:
            raise ValidationError("transition matrices must be square and of one size")
        n = full[0].shape[0]
        sub = tuple(sp.csr_matrix(m[: n - 1, : n - 1]) for m in full)
        return cls(tuple(full), sub, int(samples_per_cell), sampling_mode)

    def validate(self) -> None:
        for a, mat in enumerate(self.full):
            sums = np.asarray(mat.sum(axis=1)).ravel()
            bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
            if bad.size:
                raise ValidationError(f"action {a}: row {bad[0]} sums to {float(sums[bad[0]])!r}")
            if mat.nnz and (mat.data.min() < 0 or mat.data.max() > 1):
                raise ValidationError(f"action {a}: entries outside [0, 1]")


def family_from_explicit(system: ExplicitSystem) -> TransitionFamily:
    return TransitionFamily.from_full(system.matrices)


def sample_offsets(q: int, n_cells: int, samples_per_cell: int, mode: str = STRATIFIED,
                   seed: int | None = 0) -> np.ndarray:
    """Sample positions inside the unit cell, shape ``(n_cells, s, q)``.

    Stratified mode uses the centres of a k^q sub-grid, k the smallest
    integer with k^q >= s, and keeps the first s in lexicographic order.
    """
    s = int(samples_per_cell)
    if s < 1:
        raise ValidationError("samples_per_cell must be >= 1")
    if mode == STRATIFIED:
        k = 1
        while k ** q < s:
            k += 1
        grid = (np.indices((k,) * q).reshape(q, -1).T + 0.5) / k
        return np.broadcast_to(grid[:s], (n_cells, s, q))
    if mode == RANDOM:
        rng = np.random.default_rng(seed)
        return rng.random((n_cells, s, q))
    raise ValidationError(f"unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")


def _transition_matrix(system: SystemDef, partition: Partition, points: np.ndarray,
                       u: np.ndarray, s: int) -> sp.csr_matrix:
    n = partition.N
    images = system.step(points, u)
    dest = partition.cells_of(images)
    rows = np.repeat(np.arange(n - 1), s)
    counts = sp.coo_matrix((np.ones(rows.size), (rows, dest)), shape=(n, n)).tocsr()
    counts.sum_duplicates()
    counts.data = counts.data / s
    # forced absorbing attractor row
    counts = counts + sp.csr_matrix(([1.0], ([n - 1], [n - 1])), shape=(n, n))
    counts.sort_indices()
    return counts


def build_transition_family(system: SystemDef, partition: Partition, grid: ControlGrid,
                            samples_per_cell: int = 10, mode: str = STRATIFIED,
                            seed: int | None = 0, workers: int = 1) -> TransitionFamily:
    """Ulam approximation of the P-F operator for every fixed control.

    Entry ``(i, j)`` of action ``a`` is the fraction of the sample points of
    cell ``i`` that ``T(., u^a)`` sends into cell ``j``.  The same sample
    points are used for all actions.  The result does not depend on
    ``workers``.
    """
    if grid.dim != system.control_dimension:
        raise ValidationError(
            f"control grid has dimension {grid.dim}, system expects {system.control_dimension}"
        )
    q = system.dimension
    s = int(samples_per_cell)
    offsets = sample_offsets(q, partition.N - 1, s, mode, seed)
    multi = np.stack(np.unravel_index(partition.lumped_to_raw, partition.cells_per_dim), axis=1)
    points = partition.box.lower + (multi[:, None, :] + offsets) * partition.widths
    points = points.reshape(-1, q)

    def build(a: int) -> sp.csr_matrix:
        return _transition_matrix(system, partition, points, grid.values[a], s)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            full = list(pool.map(build, range(grid.M)))
    else:
        full = [build(a) for a in range(grid.M)]
    n = partition.N
    sub = tuple(sp.csr_matrix(m[: n - 1, : n - 1]) for m in full)
    return TransitionFamily(tuple(full), sub, s, mode)


def lebesgue_vector(partition: Partition, support=None) -> np.ndarray:
    """Cell volumes of the non-attractor cells, optionally restricted to ``support``.

    ``support`` is a boolean mask of length ``N - 1`` (or a list of kept cell
    indices); cells outside it get weight zero.
    """
    m = np.full(partition.N - 1, partition.cell_volume)
    if support is not None:
        m = restrict_support(m, support)
    return m


def restrict_support(m: np.ndarray, support) -> np.ndarray:
    support = np.asarray(support)
    keep = np.zeros(m.size, dtype=bool)
    if support.dtype == bool:
        if support.shape != m.shape:
            raise ValidationError("support mask has the wrong length")
        keep = support
    else:
        keep[support.astype(np.int64)] = True
    out = m.copy()
    out[~keep] = 0.0
    return out


def write_triplets(family: TransitionFamily, path) -> None:
    """Write the full matrices as ``N M nnz`` followed by ``a i j value`` lines (1-based)."""
    nnz = sum(m.nnz for m in family.full)
    lines = [f"{family.N} {family.M} {nnz}"]
    for a, mat in enumerate(family.full):
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            lines.append(f"{a + 1} {coo.row[k] + 1} {coo.col[k] + 1} {float(coo.data[k])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_triplets(path) -> list[sp.csr_matrix]:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValidationError(f"{path}: bad header {header!r}")
        n, n_act, nnz = (int(h) for h in header)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 4))
    if data.shape[0] != nnz:
        raise ValidationError(f"{path}: header says {nnz} entries, found {data.shape[0]}")
    mats = []
    for a in range(n_act):
        rows = data[data[:, 0] == a + 1]
        mat = sp.csr_matrix((rows[:, 3], (rows[:, 1].astype(int) - 1, rows[:, 2].astype(int) - 1)),
                            shape=(n, n))
        mat.sort_indices()
        mats.append(mat)
    return mats
