"""Run configuration: JSON loading, validation and model construction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .discretization import (SAMPLING_MODES, STRATIFIED, ControlGrid, Partition,
                             build_partition)
from .errors import ConfigError, LyapctlError
from .lp_core import Tolerances
from .simulate import RolloutConfig
from .systems import (ExplicitSystem, StateBox, SystemDef, explicit_matrix_system, identity_system,
                      shift_system, standard_map)

log = logging.getLogger(__name__)

SYSTEM_NAMES = ("standard_map", "identity", "shift", "explicit")
REQUIRED_BLOCKS = ("system", "lp")
ATTRACTOR_COST_WARN = 1e-9


@dataclass(frozen=True)
class CostSpec:
    kind: str  # "quadratic" or "tabulated"
    state_weights: tuple[float, ...] = ()
    control_weights: tuple[float, ...] = ()
    table: np.ndarray | None = None  # shape (M, N-1) when tabulated


@dataclass(frozen=True)
class RunConfig:
    system: dict
    partition: dict
    control: ControlGrid
    samples_per_cell: int
    sampling_mode: str
    sampling_seed: int
    workers: int
    gamma: float
    cost: CostSpec
    m_spec: object
    tolerances: Tolerances
    feasibility_phase: str  # "auto", "always" or "never"
    simulate: RolloutConfig | None
    output_dir: Path
    formats: tuple[str, ...] = ()
    source: dict = field(default_factory=dict, repr=False)

    @property
    def is_explicit(self) -> bool:
        return self.system["name"] == "explicit"


def _block(data: dict, name: str, required: bool = True) -> dict:
    if name not in data:
        if required:
            raise ConfigError(f"missing config block {name!r}")
        return {}
    blk = data[name]
    if not isinstance(blk, dict):
        raise ConfigError(f"config block {name!r} must be an object")
    return blk


def _float(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a number, got {value!r}") from exc
    if not np.isfinite(out):
        raise ConfigError(f"{what} must be finite")
    return out


def _int(value, what: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{what} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{what} must be >= {minimum}, got {value}")
    return value


def _parse_grid(ctrl: dict) -> ControlGrid:
    grid = ctrl.get("grid")
    if grid is None:
        raise ConfigError("control block needs a 'grid' entry")
    try:
        if isinstance(grid, str):
            return ControlGrid.parse(grid)
        if isinstance(grid, dict):
            return ControlGrid.from_range(_float(grid["lo"], "grid.lo"), _float(grid["step"], "grid.step"),
                                          _float(grid["hi"], "grid.hi"))
        values = np.asarray(grid, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        return ControlGrid(values)
    except ConfigError:
        raise
    except (LyapctlError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad control grid: {exc}") from exc


def _parse_cost(lp: dict, grid: ControlGrid) -> CostSpec:
    cost = lp.get("cost", {"type": "quadratic"})
    if not isinstance(cost, dict):
        raise ConfigError("lp.cost must be an object")
    kind = cost.get("type", "quadratic")
    if kind == "quadratic":
        sw = tuple(_float(w, "state weight") for w in cost.get("state_weights", ()))
        cw = tuple(_float(w, "control weight") for w in cost.get("control_weights", (1.0,) * grid.dim))
        if any(w < 0 for w in sw + cw):
            raise ConfigError("quadratic cost weights must be nonnegative")
        if len(cw) != grid.dim:
            raise ConfigError(f"need {grid.dim} control weights, got {len(cw)}")
        return CostSpec("quadratic", sw, cw)
    if kind == "tabulated":
        try:
            table = np.atleast_2d(np.asarray(cost["values"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"tabulated cost needs a numeric 'values' table: {exc}") from exc
        if not np.all(np.isfinite(table)):
            raise ConfigError("tabulated cost contains non-finite values")
        if np.any(table < 0):
            raise ConfigError("cost values must be nonnegative")
        return CostSpec("tabulated", table=table)
    raise ConfigError(f"unknown cost type {kind!r}; expected 'quadratic' or 'tabulated'")


def _parse_simulate(blk: dict, seed_override: int | None) -> RolloutConfig | None:
    if blk.get("enabled", True) is False:
        return None
    ic = blk.get("initial_conditions", "cell_centers")
    try:
        return RolloutConfig(
            initial_conditions=ic,
            count=_int(blk.get("count", 0), "simulate.count", 0),
            horizon=_int(blk.get("horizon", 500), "simulate.horizon"),
            epsilon_radius=_float(blk.get("epsilon_radius", 0.0), "simulate.epsilon_radius"),
            seed=seed_override if seed_override is not None else _int(blk.get("seed", 0), "simulate.seed"),
            record_trajectories=bool(blk.get("record_trajectories", False)),
        )
    except LyapctlError as exc:
        raise ConfigError(f"simulate block: {exc}") from exc


def parse_config(data: dict, *, seed: int | None = None, out_dir=None,
                 base_dir: Path | None = None) -> RunConfig:
    """Validate a decoded config document.

    ``seed`` overrides both the sampling and the rollout seed; ``out_dir``
    overrides ``output.directory``.  Relative output paths resolve against
    ``base_dir`` (default: the current directory).
    """
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    for name in REQUIRED_BLOCKS:
        _block(data, name)
    system = dict(_block(data, "system"))
    name = system.get("name")
    if name not in SYSTEM_NAMES:
        raise ConfigError(f"unknown system {name!r}; expected one of {SYSTEM_NAMES}")
    partition = dict(_block(data, "partition", required=name != "explicit"))
    if name == "explicit" and "control" not in data:
        # actions are just numbered when there is no control geometry
        n_act = len(system.get("matrices") or [])
        grid = ControlGrid(np.arange(1, n_act + 1, dtype=np.float64)[:, None]) if n_act else None
        if grid is None:
            raise ConfigError("explicit system needs a nonempty 'matrices' list")
    else:
        grid = _parse_grid(_block(data, "control"))

    disc = _block(data, "discretization", required=False)
    mode = disc.get("mode", STRATIFIED)
    if mode not in SAMPLING_MODES:
        raise ConfigError(f"unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")
    samples = _int(disc.get("samples_per_cell", 10), "samples_per_cell", 1)
    samp_seed = seed if seed is not None else _int(disc.get("seed", 0), "discretization.seed")
    workers = _int(disc.get("workers", 1), "discretization.workers", 1)

    lp = _block(data, "lp")
    if "gamma" not in lp:
        raise ConfigError("lp.gamma is required")
    gamma = _float(lp["gamma"], "lp.gamma")
    if not gamma > 1.0:
        raise ConfigError(f"lp.gamma must be > 1, got {gamma!r}")
    cost = _parse_cost(lp, grid)
    try:
        tols = Tolerances.from_dict(lp.get("tolerances"))
    except (LyapctlError, TypeError, ValueError) as exc:
        raise ConfigError(f"lp.tolerances: {exc}") from exc
    phase = lp.get("feasibility_phase", "auto")
    if phase is True:
        phase = "always"
    elif phase is False:
        phase = "never"
    if phase not in ("auto", "always", "never"):
        raise ConfigError(f"lp.feasibility_phase must be auto/always/never, got {phase!r}")

    sim = _parse_simulate(_block(data, "simulate", required=False), seed)
    out = _block(data, "output", required=False)
    directory = Path(out_dir if out_dir is not None else out.get("directory", "lyapctl_out"))
    if not directory.is_absolute():
        directory = (base_dir or Path.cwd()) / directory
    formats = tuple(out.get("formats", ()))
    unknown = set(formats) - {"mps", "trajectories"}
    if unknown:
        raise ConfigError(f"unknown output formats {sorted(unknown)}")

    cfg = RunConfig(system, partition, grid, samples, mode, samp_seed, workers, gamma, cost,
                    lp.get("m", "lebesgue"), tols, phase, sim, directory, formats, data)
    if cfg.is_explicit and sim is not None and "simulate" in data and data["simulate"].get("enabled", True):
        log.warning("explicit-matrix systems have no state map; rollout is skipped")
    return cfg


def bundled_configs() -> list[str]:
    root = resources.files("lyapctl") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name, **overrides) -> RunConfig:
    """Read a JSON config from a path, or by name from the bundled set."""
    path = Path(path_or_name)
    if path.exists():
        text, base = path.read_text(), path.parent
    else:
        res = resources.files("lyapctl") / "configs" / f"{path.name.removesuffix('.json')}.json"
        if not res.is_file():
            raise ConfigError(f"no config file {str(path_or_name)!r} and no bundled config of that "
                              f"name (bundled: {', '.join(bundled_configs())})")
        text, base = res.read_text(), None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path_or_name}: invalid JSON: {exc}") from exc
    return parse_config(data, base_dir=base if overrides.get("out_dir") is None else None, **overrides)


# model construction

def _box_from(blk: dict, dim: int) -> StateBox | None:
    if "lower" not in blk and "upper" not in blk:
        return None
    lower = blk.get("lower", [0.0] * dim)
    upper = blk.get("upper", [1.0] * dim)
    wrap = blk.get("wrap", [True] * dim)
    return StateBox(tuple(lower), tuple(upper), tuple(bool(w) for w in wrap))


def build_system(cfg: RunConfig) -> SystemDef | ExplicitSystem:
    blk = cfg.system
    try:
        name = blk["name"]
        if name == "standard_map":
            return standard_map(_float(blk.get("K", 0.25), "system.K"))
        if name == "identity":
            dim = _int(blk.get("dimension", 1), "system.dimension", 1)
            return identity_system(_box_from(blk, dim) or StateBox.unit(dim), cfg.control.dim)
        if name == "shift":
            shift = [_float(s, "system.shift") for s in np.atleast_1d(blk.get("shift", [0.25]))]
            box = _box_from(blk, len(shift)) or StateBox.unit(len(shift))
            return shift_system(shift, box, _float(blk.get("control_gain", 0.0), "system.control_gain"))
        return explicit_matrix_system(blk.get("matrices"), blk.get("labels"))
    except ConfigError:
        raise
    except (LyapctlError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"system block: {exc}") from exc


def build_partition_from(cfg: RunConfig, system: SystemDef) -> Partition:
    blk = cfg.partition
    try:
        cells = blk["cells_per_dim"]
        cells = [int(cells)] * system.dimension if np.isscalar(cells) else list(cells)
        return build_partition(system.state_box, cells, blk["attractor_points"])
    except KeyError as exc:
        raise ConfigError(f"partition block is missing {exc}") from exc
    except (LyapctlError, TypeError, ValueError) as exc:
        raise ConfigError(f"partition block: {exc}") from exc


def cost_eval(cost: CostSpec, center, u) -> float:
    """Quadratic cost ``sum_i w_i x_i^2 + sum_k v_k u_k^2`` at one point.

    Missing state weights default to 1.
    """
    x = np.atleast_1d(np.asarray(center, dtype=np.float64))
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if cost.kind != "quadratic":
        raise ConfigError("cost_eval needs a quadratic cost; tabulated costs are looked up")
    sw = np.asarray(cost.state_weights or (1.0,) * x.size)
    cw = np.asarray(cost.control_weights or (1.0,) * u.size)
    if sw.size != x.size or cw.size != u.size:
        raise ConfigError(f"cost weights have sizes {sw.size}/{cw.size}, point has {x.size}/{u.size}")
    value = float(sw @ (x * x) + cw @ (u * u))
    if value < 0:
        raise ConfigError(f"negative cost {value!r} at x={x.tolist()}, u={u.tolist()}")
    return value


def cost_matrix(cost: CostSpec, centers: np.ndarray | None, grid: ControlGrid, n_cells: int,
                attractor_points=None) -> np.ndarray:
    """``G[a, j]``: cost of action ``a`` at the center of cell ``j``."""
    if cost.kind == "tabulated":
        table = cost.table
        if table.shape == (1, grid.M * n_cells):
            table = table.reshape(grid.M, n_cells)
        if table.shape != (grid.M, n_cells):
            raise ConfigError(f"tabulated cost has shape {cost.table.shape}, expected "
                              f"({grid.M}, {n_cells})")
        return table.copy()
    if centers is None:
        raise ConfigError("a quadratic cost needs cell geometry; use a tabulated cost for explicit systems")
    sw = np.asarray(cost.state_weights or (1.0,) * centers.shape[1])
    cw = np.asarray(cost.control_weights)
    if sw.size != centers.shape[1]:
        raise ConfigError(f"need {centers.shape[1]} state weights, got {sw.size}")
    state = (centers * centers) @ sw
    G = state[None, :] + ((grid.values * grid.values) @ cw)[:, None]
    if np.any(G < 0):
        raise ConfigError("cost evaluates negative")
    if attractor_points is not None:
        pts = np.atleast_2d(np.asarray(attractor_points, dtype=np.float64))
        zero = np.zeros(grid.dim)
        worst = min(cost_eval(CostSpec("quadratic", tuple(sw), tuple(cw)), p, zero) for p in pts)
        if worst > ATTRACTOR_COST_WARN:
            log.warning("cost at the attractor with zero control is %r, not 0", worst)
    return G


def measure_vector(cfg: RunConfig, partition: Partition | None, n_cells: int) -> np.ndarray:
    """``m``: cell volumes ("lebesgue"), all ones ("uniform") or an explicit list."""
    spec = cfg.m_spec
    if spec == "lebesgue":
        if partition is None:
            return np.ones(n_cells)
        return np.full(n_cells, partition.cell_volume)
    if spec == "uniform":
        return np.ones(n_cells)
    try:
        m = np.asarray(spec, dtype=np.float64).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"lp.m must be 'lebesgue', 'uniform' or a list: {exc}") from exc
    if m.size != n_cells:
        raise ConfigError(f"lp.m has {m.size} entries, expected {n_cells}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise ConfigError("lp.m must be finite and nonnegative")
    return m


__all__ = ["RunConfig", "CostSpec", "parse_config", "load_config", "build_system",
           "build_partition_from", "cost_eval", "cost_matrix", "measure_vector", "bundled_configs"]
