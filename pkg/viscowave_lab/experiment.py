"""
Experiment Module

Orchestration behind the command line: builds problem objects from a
validated configuration, runs single simulations, reports, MMS studies and
parameter sweeps, and writes every output directory with its manifest.
"""

import copy
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .analysis import BlowupReport, DecayReport, SearchBox, blowup_report, fit_decay
from .config_loader import ConfigLoader
from .exceptions import ConfigError, PreconditionError
from .functionals import (EXTRA_COLUMNS, RECORD_COLUMNS, FunctionalRecord, energy_balance,
                          lyapunov_equivalence)
from .kernel import KernelCertificate, KernelSpec, certify
from .mesh import ProblemSpec, RadialField, RadialMesh, make_profile
from .solver import (ManufacturedSolution, MmsReport, SolverConfig, Trajectory, TrajectoryStatus,
                     WaveSolver, mms_study)
from .utils import add_file_handler, banner, config_hash, read_csv, write_csv, write_json
from .wellpot import (Classification, OptimizerParams, WellReport, WellSet, classify,
                      minimizer_profile, scale_into, well_depth)

logger = logging.getLogger(__name__)

# Exit-code contract of the command line
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_MMS_ORDER = 3


@dataclass
class RunManifest:
    """Provenance record written once per output directory."""

    config_hash: str
    version: str
    started: str
    finished: str = ""
    outputs: List[str] = field(default_factory=list)
    status: str = "running"
    wall_time: Optional[float] = None

    def write(self, out_dir: Path) -> Path:
        self.finished = _utc_now()
        return write_json(Path(out_dir) / "manifest.json", {
            'config_hash': self.config_hash, 'version': self.version,
            'started': self.started, 'finished': self.finished,
            'outputs': sorted(self.outputs), 'status': self.status,
            'wall_time': self.wall_time,
        })


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def start_manifest(config: Dict) -> RunManifest:
    return RunManifest(config_hash=config_hash(config), version=__version__, started=_utc_now())


# ========== Problem construction ==========

@dataclass
class Problem:
    """Objects built from one validated configuration."""

    config: Dict
    spec: ProblemSpec
    mesh: RadialMesh
    kernel: KernelSpec
    _well: Optional[WellReport] = None

    @classmethod
    def from_config(cls, config: Dict) -> "Problem":
        spec = ProblemSpec.from_config(config['problem'])
        mesh = RadialMesh(spec, int(config['mesh']['N']))
        kernel = KernelSpec.from_config(config['kernel'])
        return cls(config=config, spec=spec, mesh=mesh, kernel=kernel)

    def certificate(self) -> KernelCertificate:
        return certify(self.kernel)

    @property
    def well(self) -> WellReport:
        """Well depth on the simulation mesh, computed once."""
        if self._well is None:
            params = OptimizerParams.from_config(self.config['well'], seed=int(self.config['seed']))
            self._well = well_depth(self.mesh, self.kernel, params)
        return self._well

    def solver_config(self, **changes) -> SolverConfig:
        config = SolverConfig.from_config(self.config['solver'], self.mesh.h)
        snapshot_times = tuple(float(t) for t in self.config['output']['snapshot_times'] or ())
        return config.with_updates(snapshot_times=snapshot_times, **changes)

    def search_box(self) -> SearchBox:
        return SearchBox.from_config(self.config['analysis'].get('eta_mu_search'))


@dataclass(frozen=True)
class InitialData:
    """Initial fields and how they were obtained."""

    u0: RadialField
    v0: RadialField
    amplitude: float
    classification: Classification


def _profile(problem: Problem, name: str) -> RadialField:
    if name == "ground_state":
        return minimizer_profile(problem.well)
    return make_profile(problem.mesh, name, float(problem.config['initial']['width']))


def build_initial_data(problem: Problem) -> InitialData:
    """
    Build (u⁰, u¹) from the 'initial' section.

    An explicit amplitude scales the profile directly; otherwise the profile
    is scaled into the requested set with scale_into. The velocity is a
    named profile times its amplitude, or 'displacement' (u¹ = amplitude·u⁰).
    """
    config = problem.config['initial']
    mesh = problem.mesh
    shape = _profile(problem, config['profile'])
    velocity = config['velocity']
    velocity_amplitude = float(velocity.get('amplitude', 0.0))

    def velocity_for(u0: RadialField) -> RadialField:
        if velocity['profile'] == "displacement":
            return velocity_amplitude * u0
        if velocity['profile'] == "zero" or velocity_amplitude == 0.0:
            return mesh.zeros()
        return velocity_amplitude * _profile(problem, velocity['profile'])

    if config.get('amplitude') is not None:
        amplitude = float(config['amplitude'])
        u0 = amplitude * shape
        v0 = velocity_for(u0)
        classification = classify(mesh, u0, v0, problem.kernel, problem.well)
    else:
        auto = config['auto_scale']
        target = WellSet(auto['target'])
        if velocity['profile'] == "displacement":
            raise ConfigError("auto_scale cannot be combined with a displacement-proportional velocity")
        v0 = velocity_for(shape)
        amplitude, classification = scale_into(target, shape, mesh, problem.kernel, problem.well,
                                               float(auto.get('margin', 0.5)), v0)
        u0 = amplitude * shape

    logger.info(f"Initial data: profile={config['profile']}, amplitude={amplitude:.8g}, "
                f"set={classification.set.value}, E0={classification.E0:.6g}, theta={classification.theta:.4g}")
    return InitialData(u0=u0, v0=v0, amplitude=amplitude, classification=classification)


# ========== Single run ==========

def write_records(path: Path, records: Sequence[FunctionalRecord]) -> Path:
    return write_csv(path, RECORD_COLUMNS + EXTRA_COLUMNS, (r.row() for r in records))


def read_records(path: Path) -> List[FunctionalRecord]:
    columns = read_csv(path)
    count = len(columns['t'])
    return [FunctionalRecord.from_row({name: values[i] for name, values in columns.items()})
            for i in range(count)]


@dataclass
class RunResult:
    """Outcome of one simulate invocation."""

    status: TrajectoryStatus
    summary: Dict[str, Any]
    exit_code: int
    trajectory: Optional[Trajectory] = None


def _reports(problem: Problem, trajectory: Trajectory, initial: InitialData,
             out_dir: Path, manifest: RunManifest) -> Dict[str, Any]:
    """Decay or blow-up report for a finished trajectory, written next to the records."""
    out: Dict[str, Any] = {}
    if trajectory.status is TrajectoryStatus.COMPLETED:
        t1 = float(problem.config['analysis']['t1'])
        if trajectory.records and trajectory.records[-1].t > t1:
            report = fit_decay(trajectory, problem.kernel, t1)
            _write_decay(report, out_dir, manifest)
            out['decay'] = report.summary()
    elif trajectory.status is TrajectoryStatus.BLEWUP:
        report = blowup_report(trajectory, problem.mesh, problem.kernel, problem.well,
                               initial.u0, initial.v0, problem.search_box())
        _write_blowup(report, out_dir, manifest)
        out['blowup'] = report.summary()
    return out


def _write_decay(report: DecayReport, out_dir: Path, manifest: RunManifest):
    write_json(out_dir / "decay_report.json", report.summary())
    write_csv(out_dir / "decay_series.csv", ("t", "E", "envelope", "ratio"), report.series())
    manifest.outputs += ["decay_report.json", "decay_series.csv"]


def _write_blowup(report: BlowupReport, out_dir: Path, manifest: RunManifest):
    write_json(out_dir / "blowup_report.json", report.summary())
    if report.convexity is not None:
        write_csv(out_dir / "blowup_series.csv", ("t", "G", "Gp", "convexity_combination"),
                  report.convexity.series())
        manifest.outputs.append("blowup_series.csv")
    manifest.outputs.append("blowup_report.json")


def run_simulation(config: Dict, out_dir: Path, log_to_file: bool = True) -> RunResult:
    """
    certify → well depth → initial data → run → reports, written to out_dir.

    Args:
        config: Validated configuration
        out_dir: Output directory (created)
        log_to_file: Attach a run.log handler for the duration of the run

    Returns:
        RunResult with the exit code of the contract
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(config)
    handler = add_file_handler(str(out_dir / "run.log"), config['logging']['level']) if log_to_file else None
    if handler is not None:
        manifest.outputs.append("run.log")

    try:
        for line in banner("Viscoelastic wave run"):
            logger.info(line)
        problem = Problem.from_config(config)
        certificate = problem.certificate()
        initial = build_initial_data(problem)
        solver_config = problem.solver_config()

        write_json(out_dir / "config.json", config)
        write_csv(out_dir / "initial.csv", ("r", "u0", "v0"),
                  zip(problem.mesh.nodes, initial.u0, initial.v0))
        manifest.outputs += ["config.json", "initial.csv"]

        trajectory = WaveSolver(problem.mesh, problem.kernel, solver_config).run(initial.u0, initial.v0)
        write_records(out_dir / "records.csv", trajectory.records)
        manifest.outputs.append("records.csv")
        for snap in trajectory.snapshots:
            name = f"snapshot_t{snap.t:.6g}.csv"
            write_csv(out_dir / name, ("r", "u", "u_t"), zip(problem.mesh.nodes, snap.u, snap.u_t))
            manifest.outputs.append(name)

        balance = energy_balance(trajectory.records)
        eps1 = float(config['analysis']['eps1'])
        eps2 = float(config['analysis']['eps2'])
        c1, c2 = lyapunov_equivalence(trajectory.records, eps1, eps2)
        summary: Dict[str, Any] = {
            'run': trajectory.summary(),
            'certificate': {
                'ell': certificate.ell, 'q': certificate.q, 'xi0': certificate.xi0,
                'shape_ok': certificate.shape_ok, 'decay_ok': certificate.decay_ok,
                'q_warning': certificate.q_warning,
                'sample_grid_max_violation': certificate.sample_grid_max_violation,
            },
            'initial': {'amplitude': initial.amplitude, **initial.classification.summary()},
            'well': problem.well.summary(),
            'balance': {
                'max_defect': balance.max_defect,
                'monotone_ok': balance.monotone_ok,
                'damping_balance_ok': balance.damping_balance_ok,
                'negative_energy_count': balance.negative_energy_count,
            },
            'lyapunov_equivalence': {'eps1': eps1, 'eps2': eps2, 'c1': c1, 'c2': c2},
        }
        if not trajectory.status.failed:
            summary.update(_reports(problem, trajectory, initial, out_dir, manifest))

        write_json(out_dir / "summary.json", summary)
        manifest.outputs.append("summary.json")
        manifest.status = trajectory.status.value
        manifest.wall_time = trajectory.wall_time
        exit_code = EXIT_NUMERICAL if trajectory.status.failed else EXIT_OK

        for line in banner(f"Run finished: {trajectory.status.value}"):
            logger.info(line)
        return RunResult(trajectory.status, summary, exit_code, trajectory)
    except Exception:
        manifest.status = "error"
        raise
    finally:
        manifest.write(out_dir)
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


# ========== Commands on existing inputs ==========

def well_depth_report(config: Dict, out_dir: Path, dump_minimizer: bool = False) -> WellReport:
    """Compute and write the well report (and optionally the minimizer field)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(config)
    try:
        problem = Problem.from_config(config)
        well = problem.well
        write_json(out_dir / "well.json", well.summary())
        manifest.outputs.append("well.json")
        if dump_minimizer or config['output']['dump_minimizer']:
            write_csv(out_dir / "minimizer.csv", ("r", "value"), zip(problem.mesh.nodes, well.minimizer_field))
            manifest.outputs.append("minimizer.csv")
        manifest.status = "completed" if well.converged else "not_converged"
        return well
    except Exception:
        manifest.status = "error"
        raise
    finally:
        manifest.write(out_dir)


def classify_report(config: Dict, out_dir: Path) -> Classification:
    """Classify the configured initial data and write classification.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(config)
    try:
        problem = Problem.from_config(config)
        initial = build_initial_data(problem)
        payload = {'amplitude': initial.amplitude, **initial.classification.summary(),
                   'd': problem.well.d, 'small_energy_threshold': problem.well.small_energy_threshold}
        write_json(out_dir / "classification.json", payload)
        manifest.outputs.append("classification.json")
        manifest.status = "completed"
        return initial.classification
    except Exception:
        manifest.status = "error"
        raise
    finally:
        manifest.write(out_dir)


def load_run(run_dir: Path) -> Tuple[Dict, List[FunctionalRecord], Dict]:
    """Read config, records and summary back from a run directory."""
    run_dir = Path(run_dir)
    for name in ("config.json", "records.csv", "summary.json"):
        if not (run_dir / name).exists():
            raise PreconditionError(f"{run_dir} is not a run directory: missing {name}")
    config = ConfigLoader.build_config(ConfigLoader.load_json(str(run_dir / "config.json")))
    summary = ConfigLoader.load_json(str(run_dir / "summary.json"))
    return config, read_records(run_dir / "records.csv"), summary


def decay_report_from_dir(run_dir: Path) -> DecayReport:
    """Refit the decay envelope of a completed run directory."""
    run_dir = Path(run_dir)
    config, records, summary = load_run(run_dir)
    if summary['run']['status'] != TrajectoryStatus.COMPLETED.value:
        raise PreconditionError(f"decay-report needs a completed run, got {summary['run']['status']}")
    kernel = KernelSpec.from_config(config['kernel'])
    report = fit_decay(records, kernel, float(config['analysis']['t1']))
    manifest = RunManifest(config_hash(config), __version__, _utc_now())
    _write_decay(report, run_dir, manifest)
    return report


def blowup_report_from_dir(run_dir: Path) -> BlowupReport:
    """Recompute the blow-up report of a run directory that crossed the threshold."""
    run_dir = Path(run_dir)
    config, records, summary = load_run(run_dir)
    run = summary['run']
    if run['status'] != TrajectoryStatus.BLEWUP.value:
        raise PreconditionError(f"blowup-report needs a blown-up run, got {run['status']}")
    problem = Problem.from_config(config)
    initial = read_csv(run_dir / "initial.csv")
    trajectory = Trajectory(status=TrajectoryStatus.BLEWUP, history=None, records=records,
                            T_obs=float(run['T_obs']), steps=int(run['steps']))
    report = blowup_report(trajectory, problem.mesh, problem.kernel, problem.well,
                           initial['u0'], initial['v0'], problem.search_box())
    manifest = RunManifest(config_hash(config), __version__, _utc_now())
    _write_blowup(report, run_dir, manifest)
    return report


def mms_report(config: Dict, out_dir: Path) -> MmsReport:
    """Two-level manufactured-solution study from the 'mms' section."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(config)
    try:
        mms = config['mms']
        spec = ProblemSpec.from_config(config['problem'])
        kernel = KernelSpec.from_config(config['kernel'])
        N = int(mms['N'])
        h = spec.R / N
        solver = config['solver']
        solver_config = SolverConfig(
            dt0=float(mms['dt_over_h']) * h,
            T_end=float(mms['T_end']),
            cfl_safety=float(solver['cfl_safety']),
            U_max=float(solver['U_max']),
            first_order_start=bool(solver['first_order_start']),
        )
        exact = ManufacturedSolution(spec.R, spec.n, float(mms['omega']), float(mms['amplitude']))
        report = mms_study(exact, spec, kernel, N, solver_config, float(mms['required_order']))
        write_json(out_dir / "mms.json", report.summary())
        manifest.outputs.append("mms.json")
        manifest.status = "passed" if report.passed else "order_failure"
        return report
    except Exception:
        manifest.status = "error"
        raise
    finally:
        manifest.write(out_dir)


# ========== Sweeps ==========

def _set_key(config: Dict, dotted: str, value: Any):
    node = config
    parts = dotted.split('.')
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"Sweep key {dotted} does not name a configuration value")
        node = node[part]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"Sweep key {dotted} does not name a scalar configuration value")
    node[parts[-1]] = value


def expand_grid(config: Dict) -> List[Tuple[Dict[str, Any], Dict]]:
    """
    All combinations of the sweep grid as (parameters, config) pairs.

    Raises:
        ConfigError: empty grid or a key that is not a scalar setting
    """
    grid = config['sweep']['grid'] or {}
    if not grid or any(not values for values in grid.values()):
        raise ConfigError("sweep.grid is empty")
    keys = sorted(grid)
    combos = []
    for values in itertools.product(*(grid[k] for k in keys)):
        params = dict(zip(keys, values))
        run_config = copy.deepcopy(config)
        run_config['sweep']['grid'] = {}
        for key, value in params.items():
            _set_key(run_config, key, value)
        ConfigLoader.validate(run_config)
        combos.append((params, run_config))
    return combos


def _sweep_worker(task: Tuple[int, Dict[str, Any], Dict, str]) -> Dict[str, Any]:
    """Run one sweep member; failures are recorded, never raised."""
    index, params, run_config, out_dir = task
    row: Dict[str, Any] = {'index': index, **params}
    try:
        result = run_simulation(run_config, Path(out_dir), log_to_file=False)
        row.update({
            'status': result.status.value,
            'T_obs': result.summary['run']['T_obs'],
            'fitted_slope': result.summary.get('decay', {}).get('fitted_slope'),
            'set': result.summary['initial']['set'],
            'E0': result.summary['initial']['E0'],
        })
    except Exception as e:
        logger.error(f"Sweep run {index} failed: {e}", exc_info=True)
        row.update({'status': 'error', 'T_obs': None, 'fitted_slope': None, 'set': None, 'E0': None})
    return row


def _run_dir_name(index: int, params: Dict[str, Any]) -> str:
    label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in params.items())
    return f"run_{index:03d}_{label}"


def run_sweep(config: Dict, out_dir: Path, threads: int = 1) -> Tuple[List[Dict[str, Any]], int]:
    """
    Run every grid combination, each into its own sub-directory.

    Args:
        config: Validated configuration with a non-empty sweep.grid
        out_dir: Parent output directory
        threads: Worker processes; 1 runs in-process

    Returns:
        (aggregate rows, exit code): 0 if at least one run succeeded, 2 otherwise
    """
    out_dir = Path(out_dir)
    combos = expand_grid(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = start_manifest(config)
    tasks = [(i, params, run_config, str(out_dir / _run_dir_name(i, params)))
             for i, (params, run_config) in enumerate(combos)]
    logger.info(f"Sweep over {len(tasks)} combinations with {threads} worker(s)")

    try:
        if threads <= 1:
            rows = [_sweep_worker(task) for task in tasks]
        else:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(_sweep_worker, tasks))

        keys = sorted(config['sweep']['grid'])
        header = ['index'] + keys + ['status', 'T_obs', 'fitted_slope', 'set', 'E0']
        write_csv(out_dir / "aggregate.csv", header,
                  ([_csv_value(row.get(h)) for h in header] for row in rows))
        manifest.outputs.append("aggregate.csv")
        succeeded = sum(1 for row in rows if row['status'] in ('completed', 'blewup'))
        manifest.status = f"{succeeded}/{len(rows)} succeeded"
        return rows, EXIT_OK if succeeded else EXIT_NUMERICAL
    except Exception:
        manifest.status = "error"
        raise
    finally:
        manifest.write(out_dir)


def _csv_value(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return value
