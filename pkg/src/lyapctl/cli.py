"""Command-line pipeline: discretize, check feasibility, solve, certify, simulate."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .discretization import (Partition, TransitionFamily, build_transition_family,
                             family_from_explicit, write_triplets)
from .errors import ConfigError, LyapctlError
from .feasibility import PARTIAL, FeasibilityResult, grow_tree, transience_certificate
from .lp_core import (OPTIMAL, FeasibilityPhaseReport, LPSolution, StabilizationLP, Tolerances,
                      assemble_primal, feasibility_phase, solve_stabilization)
from .lp_solver import SolverOptions, write_mps
from .simulate import DecayReport, rollout, write_trajectories
from .synthesis import (ControlPolicy, LyapunovMeasure, StabilityCertificate, certify,
                        closed_loop_decay, extract_policy, lyapunov_measure, value_consistency)
from .systems import ExplicitSystem

log = logging.getLogger("lyapctl")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_PARTIAL = 4
EXIT_CERTIFICATE = 5

FILES = {
    "transitions": "transitions.txt",
    "feasibility": "feasibility_report.txt",
    "lp_log": "lp_log.txt",
    "policy": "policy.csv",
    "measure": "lyapunov_measure.csv",
    "certificate": "certificate.txt",
    "decay": "decay_report.txt",
    "decay_csv": "decay_report.csv",
    "trajectories": "trajectories.csv",
    "mps": "lp.mps",
}


class StageError(LyapctlError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.cause = exc


@dataclass
class Model:
    system: object
    partition: Partition | None
    family: TransitionFamily
    centers: np.ndarray | None

    @property
    def n_cells(self) -> int:
        return self.family.N - 1


@dataclass
class PipelineResult:
    exit_code: int
    message: str
    out_dir: Path
    model: Model | None = None
    tree: FeasibilityResult | None = None
    spec: StabilizationLP | None = None
    phase: FeasibilityPhaseReport | None = None
    solution: LPSolution | None = None
    policy: ControlPolicy | None = None
    measure: LyapunovMeasure | None = None
    certificate: StabilityCertificate | None = None
    decay: DecayReport | None = None
    files: dict = field(default_factory=dict)


# stages

def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                out = fn(*args, **kwargs)
            except (ConfigError, StageError):
                raise
            except Exception as exc:  # surface the stage name with the diagnostic
                raise StageError(name, exc) from exc
            log.info("%s done in %.2fs", name, time.perf_counter() - t0)
            return out
        return inner
    return wrap


@_stage("discretize")
def build_model(cfg: RunConfig) -> Model:
    system = cfgmod.build_system(cfg)
    if isinstance(system, ExplicitSystem):
        if cfg.control.M != system.n_actions:
            raise ConfigError(f"control grid has {cfg.control.M} values for {system.n_actions} matrices")
        return Model(system, None, family_from_explicit(system), None)
    partition = cfgmod.build_partition_from(cfg, system)
    if cfg.control.dim != system.control_dimension:
        raise ConfigError(f"control grid dimension {cfg.control.dim} does not match the system's "
                          f"{system.control_dimension}")
    family = build_transition_family(system, partition, cfg.control, cfg.samples_per_cell,
                                     cfg.sampling_mode, cfg.sampling_seed, cfg.workers)
    return Model(system, partition, family, partition.centers())


def build_spec(cfg: RunConfig, model: Model) -> StabilizationLP:
    attractor_pts = None if model.partition is None else cfg.partition.get("attractor_points")
    G = cfgmod.cost_matrix(cfg.cost, model.centers, cfg.control, model.n_cells, attractor_pts)
    m = cfgmod.measure_vector(cfg, model.partition, model.n_cells)
    return StabilizationLP(cfg.gamma, m, G, model.family)


@_stage("feasibility")
def check_feasibility(model: Model) -> FeasibilityResult:
    return grow_tree(model.family)


def _feasibility_text(tree: FeasibilityResult, model: Model, phase: FeasibilityPhaseReport | None) -> str:
    parts = [tree.report()]
    if tree.status != PARTIAL:
        tr = transience_certificate(model.family, tree)
        parts.append(
            "transience check of the layer policy:\n"
            f"horizon_blocks: {tr.horizon}\n"
            f"norms: {' '.join(repr(float(v)) for v in tr.norms)}\n"
            f"strictly_decreasing: {tr.strictly_decreasing}\n"
            f"final_norm: {tr.final_norm!r}\n"
            f"spectral_radius: {tr.spectral_radius!r}\n"
            f"transient: {tr.transient}\n")
    if phase is not None:
        parts.append("l1 feasibility phase:\n"
                     f"objective: {phase.objective!r}\n"
                     f"residual_tolerance: {phase.resid_tol!r}\n"
                     f"{phase.summary()}\n")
    return "\n".join(parts)


@_stage("solve")
def solve(spec: StabilizationLP, tol: Tolerances) -> LPSolution:
    sol = solve_stabilization(spec, tol)
    if sol.status == OPTIMAL and not sol.kkt_residuals.ok:
        log.warning("KKT check failed (%s); re-solving with a tighter tolerance", sol.kkt_residuals)
        tighter = SolverOptions(tol=tol.solver * 1e-2, max_iter=400)
        sol2 = solve_stabilization(spec, tol, tighter)
        sol2.message = f"re-solved with tol {tighter.tol!r}: {sol2.message}"
        sol = sol2
    return sol


def _lp_log_text(spec: StabilizationLP, sol: LPSolution) -> str:
    lines = [
        f"problem: primal, {spec.M * spec.n_cells} variables, {spec.n_cells} equality rows",
        f"gamma: {spec.gamma!r}",
        f"status: {sol.status}",
        f"message: {sol.message}",
        f"iterations: {sol.iterations}",
        f"primal_objective: {sol.primal_objective!r}",
        f"dual_objective: {sol.dual_objective!r}",
        f"duality_gap: {sol.duality_gap!r}",
        f"vertex_solution: {sol.vertex}",
    ]
    if sol.kkt_residuals is not None:
        k = sol.kkt_residuals
        lines += [f"kkt_primal_feasibility: {k.primal_feasibility!r}",
                  f"kkt_stationarity: {k.stationarity!r}",
                  f"kkt_complementarity: {k.complementarity!r}",
                  f"kkt_ok: {k.ok}"]
    lines.append("iter rho_p rho_d rho_gap mu alpha objective")
    for h in sol.history:
        lines.append(f"{h['iter']} {h['rho_p']:.6e} {h['rho_d']:.6e} {h['rho_gap']:.6e} "
                     f"{h['rho_mu']:.6e} {h['alpha']:.6f} {h['objective']!r}")
    return "\n".join(lines) + "\n"


def _coords(model: Model, j: int) -> list[str]:
    return [] if model.centers is None else [repr(float(v)) for v in model.centers[j]]


def _coord_header(model: Model) -> list[str]:
    q = 0 if model.centers is None else model.centers.shape[1]
    return [f"center_{d + 1}" for d in range(q)]


def write_policy_csv(path, model: Model, cfg: RunConfig, policy: ControlPolicy, V, mu) -> None:
    """One row per non-attractor cell; indices 1-based, action 0 when unassigned."""
    ud = cfg.control.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_index"] + _coord_header(model) + ["action_index"]
                   + [f"control_{k + 1}" for k in range(ud)] + ["V", "mu"])
        for j in range(model.n_cells):
            a = int(policy.action_of[j])
            ctrl = [repr(float(v)) for v in cfg.control.values[a]] if a >= 0 else [""] * ud
            w.writerow([j + 1] + _coords(model, j) + [a + 1] + ctrl
                       + [repr(float(V[j])), repr(float(mu[j]))])


def write_measure_csv(path, model: Model, mu) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_index"] + _coord_header(model) + ["mu"])
        for j in range(model.n_cells):
            w.writerow([j + 1] + _coords(model, j) + [repr(float(mu[j]))])


def read_policy_csv(path, n_cells: int) -> np.ndarray:
    """Actions (0-based, -1 unassigned) from a policy CSV written by :func:`write_policy_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != n_cells:
        raise ConfigError(f"{path}: {len(rows)} policy rows for {n_cells} cells")
    actions = np.full(n_cells, -1, dtype=np.int64)
    for r in rows:
        actions[int(r["cell_index"]) - 1] = int(r["action_index"]) - 1
    return actions


def _certificate_text(cert: StabilityCertificate, meas: LyapunovMeasure, spec: StabilizationLP,
                      policy: ControlPolicy, sol: LPSolution) -> str:
    vc = value_consistency(spec, policy, sol.V)
    supp = spec.m > 0
    mu_min = float(meas.mu[supp].min()) if supp.any() else float("nan")
    extra = [
        ("lyapunov_measure_residual", repr(meas.residual)),
        ("mu_min_on_support", repr(mu_min)),
        ("mu_positive_on_support", str(bool(supp.any() and mu_min > 0))),
        ("value_dp_residual", repr(vc.dp_residual)),
        ("value_series_residual", repr(vc.neumann_residual)),
        ("assigned_cells", str(int(policy.assigned.sum()))),
        ("unassigned_cells", str(int((~policy.assigned).sum()))),
    ]
    return cert.report() + "".join(f"{k}: {v}\n" for k, v in extra)


def _write(out: Path, key: str, text: str, files: dict) -> None:
    path = out / FILES[key]
    path.write_text(text)
    files[key] = path


def _prepare_out(out: Path, force: bool) -> None:
    existing = [out / f for f in FILES.values() if (out / f).exists()]
    if existing and not force:
        raise ConfigError(f"output directory {out} already holds results; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    for p in existing:
        p.unlink()


def _simulate(cfg: RunConfig, model: Model, actions: np.ndarray, out: Path, files: dict):
    if cfg.simulate is None or model.partition is None:
        return None
    t0 = time.perf_counter()
    decay, records = rollout(model.system, model.partition, actions, cfg.control, cfg.simulate)
    log.info("simulate done in %.2fs", time.perf_counter() - t0)
    _write(out, "decay", decay.summary(), files)
    decay.to_csv(out / FILES["decay_csv"])
    files["decay_csv"] = out / FILES["decay_csv"]
    if records is not None:
        write_trajectories(records, out / FILES["trajectories"])
        files["trajectories"] = out / FILES["trajectories"]
    return decay


def run_pipeline(cfg: RunConfig, *, force: bool = False, stop_after: str | None = None) -> PipelineResult:
    """Run every stage and write the result files into ``cfg.output_dir``.

    ``stop_after`` may be ``"discretize"`` or ``"solve"``.  Exit codes:
    0 valid certificate, 2 config error, 3 infeasible LP, 4 partial
    stabilizability (masked cells), 5 certificate failure, 1 anything else.
    """
    out = cfg.output_dir
    _prepare_out(out, force)
    res = PipelineResult(EXIT_ERROR, "", out)
    files = res.files

    model = res.model = build_model(cfg)
    write_triplets(model.family, out / FILES["transitions"])
    files["transitions"] = out / FILES["transitions"]
    tree = res.tree = check_feasibility(model)
    partial = tree.status == PARTIAL
    log.info("tree growing: %s, %d layers", tree.status, len(tree.layers))

    spec = build_spec(cfg, model)
    run_phase = cfg.feasibility_phase == "always" or (cfg.feasibility_phase == "auto" and partial)
    if run_phase:
        spec, res.phase = _stage("feasibility_phase")(feasibility_phase)(spec)
        log.info("feasibility phase: %s", res.phase.summary())
        partial = partial or bool(res.phase.masked)
    _write(out, "feasibility", _feasibility_text(tree, model, res.phase), files)
    res.spec = spec
    if stop_after == "discretize":
        res.exit_code = EXIT_PARTIAL if partial else EXIT_OK
        res.message = f"discretized: {tree.status}"
        return res

    if res.phase is not None and res.phase.nothing_stabilizable:
        res.exit_code, res.message = EXIT_INFEASIBLE, "no cell can be stabilized"
        return res
    if "mps" in cfg.formats:
        write_mps(assemble_primal(spec), out / FILES["mps"])
        files["mps"] = out / FILES["mps"]
    sol = res.solution = solve(spec, cfg.tolerances)
    _write(out, "lp_log", _lp_log_text(spec, sol), files)
    if sol.status != OPTIMAL:
        res.exit_code = EXIT_INFEASIBLE
        res.message = f"LP {sol.status}: {sol.message}"
        return res

    policy = res.policy = _stage("synthesize")(extract_policy)(spec, sol, cfg.tolerances.theta_support)
    meas = res.measure = _stage("measure")(lyapunov_measure)(spec, policy)
    cert = res.certificate = _stage("certify")(certify)(spec, policy, sol, cfg.tolerances)
    write_policy_csv(out / FILES["policy"], model, cfg, policy, sol.V, meas.mu)
    write_measure_csv(out / FILES["measure"], model, meas.mu)
    files["policy"], files["measure"] = out / FILES["policy"], out / FILES["measure"]
    _write(out, "certificate", _certificate_text(cert, meas, spec, policy, sol), files)

    if stop_after != "solve":
        if model.partition is None:
            dec = closed_loop_decay(spec, policy, cfg.simulate.horizon if cfg.simulate else 500)
            _write(out, "decay", "source: closed-loop matrix (no state map)\n"
                   f"fitted_beta: {dec.beta!r}\nfitted_M: {dec.M0!r}\n"
                   f"final_mass: {float(dec.mass[-1])!r}\n", files)
        else:
            res.decay = _simulate(cfg, model, policy.action_of, out, files)

    kkt_ok = sol.kkt_residuals is not None and sol.kkt_residuals.ok
    if not cert.valid or not kkt_ok:
        res.exit_code = EXIT_CERTIFICATE
        res.message = f"certificate {cert.status}" + ("" if kkt_ok else ", KKT check failed")
    elif partial:
        res.exit_code = EXIT_PARTIAL
        res.message = "certified on the stabilizable part only"
    else:
        res.exit_code, res.message = EXIT_OK, "certificate valid"
    return res


def simulate_only(cfg: RunConfig, policy_path, *, force: bool = False) -> PipelineResult:
    out = cfg.output_dir
    if (out / FILES["decay"]).exists() and not force:
        raise ConfigError(f"{out / FILES['decay']} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    system = cfgmod.build_system(cfg)
    if isinstance(system, ExplicitSystem):
        raise ConfigError("simulate needs a state map; explicit-matrix systems have none")
    if cfg.simulate is None:
        raise ConfigError("simulate block is disabled")
    partition = cfgmod.build_partition_from(cfg, system)
    actions = read_policy_csv(policy_path, partition.N - 1)
    if actions.max(initial=-1) >= cfg.control.M:
        raise ConfigError("policy refers to actions beyond the control grid")
    res = PipelineResult(EXIT_OK, "simulated", out)
    res.decay = _simulate(cfg, Model(system, partition, None, partition.centers()), actions, out,
                          res.files)
    return res


# command line

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lyapctl", description="Optimal stabilizing controls via "
                                "Lyapunov-measure linear programming.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "full pipeline"), ("discretize", "transition matrices and feasibility"),
                        ("solve", "discretize, solve the LP and certify"),
                        ("simulate", "roll out a saved policy on the true map")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="JSON config file, or the name of a bundled config")
        sp.add_argument("--seed", type=int, default=None, help="override sampling and rollout seeds")
        sp.add_argument("--out-dir", default=None, help="override output.directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing results")
        sp.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
        if name == "simulate":
            sp.add_argument("--policy", required=True, help="policy CSV from a previous run")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config, seed=args.seed, out_dir=args.out_dir)
        if args.command == "simulate":
            res = simulate_only(cfg, args.policy, force=args.force)
        else:
            stop = {"discretize": "discretize", "solve": "solve"}.get(args.command)
            res = run_pipeline(cfg, force=args.force, stop_after=stop)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except LyapctlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{res.message} (exit {res.exit_code}); results in {res.out_dir}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
