"""Closed-loop rollouts of the true map under a cell-indexed policy."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .discretization import ControlGrid, Partition
from .errors import ValidationError
from .synthesis import fit_geometric
from .systems import SystemDef

ACTIVE, ABSORBED, LOST = 0, 1, 2
STATUS_NAMES = {ACTIVE: "active", ABSORBED: "absorbed", LOST: "lost"}


@dataclass(frozen=True)
class RolloutConfig:
    initial_conditions: str = "cell_centers"  # or "seeded_uniform"
    count: int = 0  # number of seeded uniform initial states
    horizon: int = 500
    epsilon_radius: float = 0.0
    seed: int = 0
    record_trajectories: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.epsilon_radius < 0:
            raise ValidationError("epsilon_radius must be >= 0")
        if self.initial_conditions not in ("cell_centers", "seeded_uniform"):
            raise ValidationError(f"unknown initial_conditions {self.initial_conditions!r}")
        if self.initial_conditions == "seeded_uniform" and self.count < 1:
            raise ValidationError("seeded_uniform initial conditions need count >= 1")


@dataclass
class DecayReport:
    survival_counts: np.ndarray  # entry n-1: controlled trajectories outside U(eps) after n steps
    fitted_beta: float
    fitted_M: float
    fraction_stabilized: float
    n_trajectories: int
    n_absorbed: int
    n_lost: int
    absorption_steps: np.ndarray = field(repr=False)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "surviving"])
            for n, s in enumerate(self.survival_counts, start=1):
                w.writerow([n, int(s)])

    def summary(self) -> str:
        rows = [
            ("trajectories", self.n_trajectories),
            ("absorbed", self.n_absorbed),
            ("lost", self.n_lost),
            ("fraction_stabilized", repr(self.fraction_stabilized)),
            ("fitted_beta", repr(self.fitted_beta)),
            ("fitted_M", repr(self.fitted_M)),
            ("horizon", len(self.survival_counts)),
        ]
        return "".join(f"{k}: {v}\n" for k, v in rows)


def initial_states(partition: Partition, config: RolloutConfig) -> np.ndarray:
    if config.initial_conditions == "cell_centers":
        return partition.centers()
    rng = np.random.default_rng(config.seed)
    box = partition.box
    return box.lower + rng.random((config.count, box.dim)) * box.lengths


def _in_target(partition: Partition, x: np.ndarray, cells: np.ndarray, eps: float) -> np.ndarray:
    """Membership in U(eps): attractor cells, dilated by ``eps`` in the sup-norm."""
    hit = cells == partition.attractor
    if eps <= 0 or hit.all():
        return hit
    box = partition.box
    centers = partition.raw_centers(np.asarray(partition.attractor_cells))
    half = partition.widths / 2 + eps
    for cen in centers:
        diff = np.abs(x - cen)
        for d, w in enumerate(box.wrap):
            if w:
                diff[:, d] = np.minimum(diff[:, d], box.lengths[d] - diff[:, d])
        hit |= np.all(diff < half, axis=1)
    return hit


def rollout(system: SystemDef, partition: Partition, action_of: np.ndarray, grid: ControlGrid,
            config: RolloutConfig | None = None, x0: np.ndarray | None = None):
    """Simulate every initial state for ``config.horizon`` steps of the true map.

    At each step the current cell selects ``grid.values[action_of[cell]]``.
    A trajectory is absorbed on entering U(eps) and lost on reaching a
    non-attractor cell without an action.  Returns the :class:`DecayReport`
    and, when ``config.record_trajectories`` is set, the list of records
    ``(traj_id, step, x, cell, action)``; otherwise ``None``.
    """
    cfg = config or RolloutConfig()
    x = initial_states(partition, cfg) if x0 is None else np.atleast_2d(np.asarray(x0, float))
    action_of = np.asarray(action_of)
    n_traj = x.shape[0]
    status = np.full(n_traj, ACTIVE, dtype=np.int8)
    absorbed_at = np.full(n_traj, -1, dtype=np.int64)
    records = [] if cfg.record_trajectories else None
    eps = cfg.epsilon_radius

    def classify(step: int):
        active = np.flatnonzero(status == ACTIVE)
        cells = partition.cells_of(x[active])
        target = _in_target(partition, x[active], cells, eps)
        status[active[target]] = ABSORBED
        absorbed_at[active[target]] = step
        rest = ~target
        acts = np.full(active.size, -1, dtype=np.int64)
        acts[rest] = action_of[cells[rest]]
        status[active[rest & (acts < 0)]] = LOST
        return active, cells, acts

    active, cells, acts = classify(0)
    survival = np.zeros(cfg.horizon, dtype=np.int64)
    for n in range(1, cfg.horizon + 1):
        moving = acts >= 0
        if records is not None:
            for k, i in enumerate(active):
                records.append((int(i), n - 1, x[i].copy(), int(cells[k]), int(acts[k])))
        idx = active[moving]
        for a in np.unique(acts[moving]):
            sel = idx[acts[moving] == a]
            x[sel] = system.step(x[sel], grid.values[a])
        active, cells, acts = classify(n)
        survival[n - 1] = int(np.sum(status == ACTIVE))
    if records is not None:
        for k, i in enumerate(active):
            records.append((int(i), cfg.horizon, x[i].copy(), int(cells[k]), int(acts[k])))

    beta, M0 = fit_geometric(survival)
    n_abs = int(np.sum(status == ABSORBED))
    report = DecayReport(survival, beta, M0, n_abs / n_traj if n_traj else 1.0, n_traj, n_abs,
                         int(np.sum(status == LOST)), absorbed_at)
    return report, records


def write_trajectories(records, path) -> None:
    """CSV with ``traj_id, step, x..., cell, action`` (cell and action 1-based, 0 = none)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not records:
            w.writerow(["traj_id", "step", "cell", "action"])
            return
        q = records[0][2].size
        w.writerow(["traj_id", "step"] + [f"x{d + 1}" for d in range(q)] + ["cell", "action"])
        for tid, step, x, cell, act in records:
            w.writerow([tid, step] + [repr(float(v)) for v in x] + [cell + 1, act + 1])
