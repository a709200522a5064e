"""Controlled discrete-time systems x' = T(x, u).

Maps are written to work on batches: ``map(x, u)`` receives states of
shape ``(n, q)`` and a control of shape ``(d,)`` or ``(n, d)`` and returns
an array of shape ``(n, q)``.  Folding onto wrapped (periodic) coordinates
is done by :class:`SystemDef`, not by the raw map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ValidationError

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box ``[lower, upper)`` with optional periodic coordinates."""

    lower: np.ndarray
    upper: np.ndarray
    wrap: tuple[bool, ...]

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        wrap = tuple(bool(w) for w in np.broadcast_to(self.wrap, lower.shape))
        if lower.ndim != 1 or lower.size < 1:
            raise ValidationError("state box needs at least one dimension")
        if lower.shape != upper.shape:
            raise ValidationError("lower and upper bounds differ in length")
        if not np.all(np.isfinite(lower)) or not np.all(np.isfinite(upper)):
            raise ValidationError("state box bounds must be finite")
        if np.any(lower >= upper):
            bad = int(np.argmax(lower >= upper))
            raise ValidationError(f"empty box along dimension {bad}: {lower[bad]} >= {upper[bad]}")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "wrap", wrap)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @classmethod
    def unit(cls, dim: int = 1, wrap: bool = True) -> "StateBox":
        return cls(np.zeros(dim), np.ones(dim), (wrap,) * dim)

    def fold(self, x: np.ndarray) -> np.ndarray:
        """Fold wrapped coordinates into ``[lower, upper)``; others pass through."""
        x = np.array(x, dtype=np.float64, copy=True)
        for d, w in enumerate(self.wrap):
            if not w:
                continue
            lo, length = self.lower[d], self.upper[d] - self.lower[d]
            v = np.mod(x[..., d] - lo, length)
            # np.mod can round a tiny negative up to exactly `length`
            v[v >= length] = 0.0
            x[..., d] = lo + v
        return x

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.lower) & (x < self.upper), axis=-1)

    def check(self, x: np.ndarray) -> None:
        """Raise :class:`DomainError` if a non-wrapped coordinate leaves the box."""
        x = np.asarray(x, dtype=np.float64)
        for d, w in enumerate(self.wrap):
            if w:
                continue
            col = x[..., d]
            bad = (col < self.lower[d]) | (col >= self.upper[d]) | ~np.isfinite(col)
            if np.any(bad):
                val = np.asarray(col)[bad].flat[0]
                raise DomainError(
                    f"coordinate {d} = {val!r} outside [{self.lower[d]}, {self.upper[d]})"
                )


MapFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SystemDef:
    """A deterministic controlled map on a :class:`StateBox`."""

    name: str
    dimension: int
    map: MapFn
    state_box: StateBox
    control_dimension: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension != self.state_box.dim:
            raise ValidationError(
                f"system dimension {self.dimension} does not match box dimension {self.state_box.dim}"
            )
        if self.control_dimension < 1:
            raise ValidationError("control dimension must be at least 1")

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Batch version of :func:`evaluate`: ``x`` has shape ``(n, q)``."""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        out = np.asarray(self.map(x, u), dtype=np.float64)
        if out.shape != x.shape:
            raise ValidationError(f"map returned shape {out.shape}, expected {x.shape}")
        return self.state_box.fold(out)


def evaluate(system: SystemDef, x, u) -> np.ndarray:
    """Return ``T(x, u)`` for a single state, folded onto wrapped coordinates.

    Raises
    ------
    DomainError
        If ``x`` lies outside the box along a non-wrapped coordinate.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if x.shape != (system.dimension,):
        raise ValidationError(f"state must have {system.dimension} entries, got {x.shape}")
    if u.shape != (system.control_dimension,):
        raise ValidationError(f"control must have {system.control_dimension} entries, got {u.shape}")
    system.state_box.check(x)
    return system.step(x[None, :], u)[0]


def standard_map(K: float = 0.25) -> SystemDef:
    """Controlled standard (Chirikov) map on the unit torus.

    x' = x + y + K u sin(2 pi x)  (mod 1)
    y' =     y + K u sin(2 pi x)  (mod 1)
    """
    K = float(K)
    if not np.isfinite(K):
        raise ValidationError("K must be finite")

    def _map(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)[..., 0]
        kick = K * u * np.sin(2.0 * np.pi * x[:, 0])
        y = x[:, 1] + kick
        return np.stack([x[:, 0] + y, y], axis=1)

    return SystemDef("standard_map", 2, _map, StateBox.unit(2, wrap=True), 1, {"K": K})


def identity_system(box: StateBox | None = None, control_dimension: int = 1) -> SystemDef:
    """T(x, u) = x for every control."""
    box = box if box is not None else StateBox.unit(1)
    return SystemDef("identity", box.dim, lambda x, u: x.copy(), box, control_dimension)


def shift_system(shift: Sequence[float] | None = None, box: StateBox | None = None,
                 control_gain: float = 0.0) -> SystemDef:
    """T(x, u) = x + shift + control_gain * u on a (normally wrapped) box.

    With ``control_gain = 1`` and zero shift this is the controlled
    translation x + u; with zero gain the control is ignored.
    """
    box = box if box is not None else StateBox.unit(1)
    shift_vec = np.zeros(box.dim) if shift is None else np.asarray(shift, dtype=np.float64)
    if shift_vec.shape != (box.dim,):
        raise ValidationError("shift must have one entry per state dimension")
    gain = float(control_gain)

    def _map(x, u):
        out = x + shift_vec
        if gain:
            out = out + gain * np.broadcast_to(u, x.shape)
        return out

    return SystemDef("shift", box.dim, _map, box, box.dim if gain else 1,
                     {"shift": shift_vec.tolist(), "control_gain": gain})


@dataclass(frozen=True)
class ExplicitSystem:
    """A system given directly by its per-action row-stochastic matrices.

    There is no geometry.  The last index ``N - 1`` plays the role of the
    attractor macro-cell.
    """

    matrices: tuple[np.ndarray, ...]
    labels: tuple[str, ...]

    @property
    def n_cells(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def n_actions(self) -> int:
        return len(self.matrices)


def explicit_matrix_system(matrices, labels=None) -> ExplicitSystem:
    """Validate and wrap a list of square row-stochastic matrices."""
    if len(matrices) == 0:
        raise ValidationError("at least one matrix is required")
    mats = []
    for a, mat in enumerate(matrices):
        mat = np.array(mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValidationError(f"matrix {a} is not square: shape {mat.shape}")
        if mats and mat.shape != mats[0].shape:
            raise ValidationError(f"matrix {a} has shape {mat.shape}, expected {mats[0].shape}")
        if not np.all(np.isfinite(mat)) or np.any(mat < 0):
            i, j = np.argwhere(~(mat >= 0))[0]
            raise ValidationError(f"matrix {a} has a negative or non-finite entry at ({i}, {j})")
        sums = mat.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            rows = ", ".join(f"row {i} sums to {float(sums[i])!r}" for i in bad[:5])
            raise ValidationError(f"matrix {a} is not row-stochastic: {rows}")
        mat.setflags(write=False)
        mats.append(mat)
    if mats[0].shape[0] < 2:
        raise ValidationError("need at least one cell besides the attractor")
    if labels is None:
        labels = [str(a + 1) for a in range(len(mats))]
    if len(labels) != len(mats):
        raise ValidationError("one label per matrix is required")
    return ExplicitSystem(tuple(mats), tuple(str(s) for s in labels))
