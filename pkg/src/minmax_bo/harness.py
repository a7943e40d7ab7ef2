"""Seeded optimization trials, experiment orchestration and CSV output.

Trial ``k`` of an experiment runs with seed ``master_seed + k``.  Every
random draw inside a trial comes from a generator keyed by
``(seed, iteration)``, so traces are bit-reproducible regardless of how
trials are scheduled across processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import gp as gpm
from .baselines import BetaSchedule, WabersichState, thompson_step, wabersich_step
from .entropy_search import EsConfig, PoptLog, es_scores, select_representative_points
from .ep import EpSettings
from .knowledge_gradient import kg_scores, posterior_mean_minmax
from .minmax import grid_locations
from .problems import PROBLEM_NAMES, evaluate_scaled, make_problem, residual

log = logging.getLogger(__name__)

ACQUISITIONS = ("entropy_search", "knowledge_gradient", "thompson", "wabersich")
TRACE_HEADER = ("iteration", "theta", "slice", "observation", "est_theta", "est_slice", "residual")
AGGREGATE_HEADER = ("iteration", "mean_residual", "std_residual")


@dataclass(frozen=True)
class TrialConfig:
    problem: str
    acquisition: str
    iterations: int = 40
    init_count: int = 5
    seed: int = 0
    acquisition_resolution: int = 100
    reporting_resolution: int = 512
    # entropy search
    representative_count: int = 20
    argmax_samples: int = 10
    quadrature_nodes: int = 9
    ep_damping: float = 0.5
    ep_tol: float = 1e-6
    ep_max_sweeps: int = 100
    ep_retry_damping: float = 0.0
    prune_margin: float = 40.0
    es_grid_stride: int = 1
    # knowledge gradient
    fantasy_count: int = 32
    # nested GP-UCB
    beta_0: float = 4.0
    beta_min: float = 0.04

    def __post_init__(self):
        if self.problem not in PROBLEM_NAMES:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEM_NAMES)}")
        if self.acquisition not in ACQUISITIONS:
            raise ValueError(
                f"unknown acquisition {self.acquisition!r}; choose from {', '.join(ACQUISITIONS)}"
            )
        if self.iterations < 1 or self.init_count < 1:
            raise ValueError("iterations and init_count must be at least 1")
        if self.acquisition_resolution < 2 or self.reporting_resolution < 2:
            raise ValueError("grid resolutions must be at least 2")
        if self.es_grid_stride < 1:
            raise ValueError("es_grid_stride must be at least 1")
        # fail early on invalid sub-configurations
        self.es_config()
        BetaSchedule(self.beta_0, self.beta_min)

    def es_config(self) -> EsConfig:
        return EsConfig(
            representative_count=self.representative_count,
            argmax_samples=self.argmax_samples,
            quadrature_nodes=self.quadrature_nodes,
            ep=EpSettings(self.ep_damping, self.ep_tol, self.ep_max_sweeps, self.ep_retry_damping),
            prune_margin=self.prune_margin,
        )

    def experiment_hash(self) -> str:
        """Hash of every setting except the seed."""
        payload = {k: v for k, v in asdict(self).items() if k != "seed"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    theta: float
    slice: int
    observation: float
    est_theta: float
    est_slice: int
    residual: float


@dataclass
class TrialTrace:
    records: list[TraceRecord]
    seed: int
    config_hash: str
    metadata: dict = field(default_factory=dict)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])


class TrialError(RuntimeError):
    pass


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


class _Counter:
    """Counts black-box evaluations."""

    def __init__(self, problem):
        self.problem = problem
        self.calls = 0

    def __call__(self, theta, idx):
        self.calls += 1
        return evaluate_scaled(self.problem, theta, idx)


def initial_design(problem, count: int, seed: int):
    rng = _rng(seed, 0)
    thetas = rng.uniform(size=count)
    slices = rng.integers(0, problem.n_slices, size=count)
    return thetas, slices


class _Selector:
    """Chooses the next location for one acquisition."""

    def __init__(self, config: TrialConfig, problem):
        self.config = config
        self.problem = problem
        self.slices = problem.slice_positions
        self.grid = np.linspace(0.0, 1.0, config.acquisition_resolution)
        self.wabersich = WabersichState(0, config.iterations)
        self.schedule = BetaSchedule(config.beta_0, config.beta_min)
        self.es = config.es_config()
        self.repset = (
            select_representative_points(config.representative_count, self.slices)
            if config.acquisition == "entropy_search"
            else None
        )
        self.audit = PoptLog(keep_distributions=False)

    def __call__(self, gp, rng: np.random.Generator) -> tuple[float, int]:
        kind = self.config.acquisition
        if kind == "thompson":
            return thompson_step(gp, self.grid, self.slices, rng)
        if kind == "wabersich":
            location, self.wabersich = wabersich_step(
                gp, self.grid, self.slices, self.wabersich, self.schedule
            )
            return location
        if kind == "knowledge_gradient":
            normals = rng.standard_normal(self.config.fantasy_count)
            return self._best(gp, self.grid, lambda c: kg_scores(gp, c, self.grid, self.slices, normals))
        normals = rng.standard_normal((self.es.argmax_samples, self.repset.size * self.repset.n_slices))
        stride = self.config.es_grid_stride
        thetas = self.grid[int(rng.integers(stride)) :: stride]
        return self._best(
            gp, thetas, lambda c: es_scores(gp, c, self.repset, normals, self.es, self.audit)
        )

    def _best(self, gp, thetas, score):
        locations = grid_locations(thetas, self.slices)
        k = int(np.argmax(score(locations)))
        return float(locations[k, 0]), k % len(self.slices)


def run_trial(config: TrialConfig) -> TrialTrace:
    problem = make_problem(config.problem)
    evaluate = _Counter(problem)
    thetas, slices = initial_design(problem, config.init_count, config.seed)
    X = [[t, problem.slice_positions[s]] for t, s in zip(thetas, slices)]
    y = [evaluate(t, int(s)) for t, s in zip(thetas, slices)]
    gp = gpm.fit(X, y, problem.gp_params)
    select = _Selector(config, problem)
    report = np.linspace(0.0, 1.0, config.reporting_resolution)
    records = []
    for it in range(1, config.iterations + 1):
        try:
            theta, idx = select(gp, _rng(config.seed, it))
            obs = evaluate(theta, idx)
            X.append([theta, problem.slice_positions[idx]])
            y.append(obs)
            gp = gpm.fit(X, y, problem.gp_params)
            i, j, _ = posterior_mean_minmax(gp, report, problem.slice_positions)
        except Exception as exc:
            raise TrialError(
                f"{config.problem}/{config.acquisition} failed at iteration {it} "
                f"(seed {config.seed}): {exc}"
            ) from exc
        est = float(report[i])
        records.append(TraceRecord(it, theta, idx, obs, est, j, residual(problem, (est, j))))
    ep = select.audit.ep
    meta = {
        "problem": config.problem,
        "acquisition": config.acquisition,
        "evaluations": evaluate.calls,
        "ep_runs": ep.runs,
        "ep_unconverged": ep.unconverged,
        "ep_skipped_updates": ep.skipped_updates,
    }
    return TrialTrace(records, config.seed, config.experiment_hash(), meta)


# --- CSV --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


@dataclass(frozen=True)
class Aggregate:
    iterations: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def aggregate(traces) -> Aggregate:
    """Per-iteration mean and population standard deviation of the residuals."""
    traces = list(traces)
    if not traces:
        raise ValueError("nothing to aggregate")
    lengths = {len(t.records) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have different lengths {sorted(lengths)}")
    table = np.stack([t.residuals for t in traces])
    iterations = np.array([r.iteration for r in traces[0].records])
    return Aggregate(iterations, table.mean(axis=0), table.std(axis=0))


def emit_csv(data, path) -> Path:
    """Write an :class:`Aggregate`, a :class:`TrialTrace` or a sequence of traces as CSV."""
    path = Path(path)
    if isinstance(data, Aggregate):
        header = AGGREGATE_HEADER
        rows = zip(data.iterations, data.mean, data.std)
    else:
        traces = [data] if isinstance(data, TrialTrace) else list(data)
        header = TRACE_HEADER
        rows = (
            (r.iteration, r.theta, r.slice, r.observation, r.est_theta, r.est_slice, r.residual)
            for t in traces
            for r in t.records
        )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
    return path


def read_trace_csv(path, seed: int = 0, config_hash: str = "") -> TrialTrace:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: not a trace file (header {header})")
        records = [
            TraceRecord(int(r[0]), float(r[1]), int(r[2]), float(r[3]), float(r[4]), int(r[5]), float(r[6]))
            for r in reader
        ]
    return TrialTrace(records, seed, config_hash)


def read_aggregate_csv(path) -> Aggregate:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Aggregate(data[:, 0].astype(int), data[:, 1], data[:, 2])


# --- experiments ------------------------------------------------------------


@dataclass
class ExperimentResult:
    directory: Path
    traces: list[TrialTrace]
    failures: dict[int, str]

    @property
    def complete(self) -> bool:
        return not self.failures


def experiment_dir(root, config: TrialConfig) -> Path:
    return Path(root) / f"{config.problem}_{config.acquisition}_{config.experiment_hash()}"


def _trial_paths(directory: Path, seed: int):
    return directory / f"trial_{seed:06d}.csv", directory / f"trial_{seed:06d}.json"


def _load_cached(directory: Path, config: TrialConfig) -> TrialTrace | None:
    csv_path, meta_path = _trial_paths(directory, config.seed)
    if not (csv_path.exists() and meta_path.exists()):
        return None
    meta = json.loads(meta_path.read_text())
    if meta.get("config_hash") != config.experiment_hash():
        return None
    trace = read_trace_csv(csv_path, config.seed, config.experiment_hash())
    if len(trace.records) != config.iterations:
        return None
    trace.metadata = meta
    return trace


def _run_and_store(config: TrialConfig, directory: Path):
    start = time.perf_counter()
    trace = run_trial(config)
    trace.metadata["seconds"] = round(time.perf_counter() - start, 3)
    csv_path, meta_path = _trial_paths(directory, config.seed)
    emit_csv(trace, csv_path)
    meta = dict(trace.metadata, seed=config.seed, config_hash=trace.config_hash)
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    # aggregate the stored (rounded) values so resumed and fresh runs agree
    stored = read_trace_csv(csv_path, config.seed, trace.config_hash)
    stored.metadata = meta
    return stored


def _progress(msg: str, quiet: bool):
    if not quiet:
        print(msg, file=sys.stderr, flush=True)


def run_experiment(
    config: TrialConfig,
    trial_count: int,
    out_dir,
    master_seed: int = 0,
    parallelism: int = 1,
    quiet: bool = False,
) -> ExperimentResult:
    """Run (or resume) ``trial_count`` seeded trials of one configuration.

    Completed traces are stored one file per trial as they finish and reused
    on later calls with the same configuration.  Failed trials are recorded in
    the manifest and do not stop the others.  ``manifest.json`` and
    ``aggregate.csv`` describe the seeds of this call only, so runs with
    different trial counts should use different ``out_dir``.
    """
    if trial_count < 1:
        raise ValueError("trial_count must be at least 1")
    directory = experiment_dir(out_dir, config)
    directory.mkdir(parents=True, exist_ok=True)
    configs = [replace(config, seed=master_seed + k) for k in range(trial_count)]
    traces: dict[int, TrialTrace] = {}
    failures: dict[int, str] = {}
    todo = []
    for c in configs:
        cached = _load_cached(directory, c)
        if cached is not None:
            traces[c.seed] = cached
        else:
            todo.append(c)
    label = f"{config.problem}/{config.acquisition}"
    if len(traces):
        _progress(f"{label}: {len(traces)} cached trials", quiet)

    def done(seed, trace=None, error=None):
        if error is None:
            traces[seed] = trace
            _progress(f"{label}: seed {seed} done ({trace.metadata['seconds']:.1f}s)", quiet)
        else:
            failures[seed] = error
            _progress(f"{label}: seed {seed} FAILED: {error}", quiet)

    if parallelism > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {pool.submit(_run_and_store, c, directory): c.seed for c in todo}
            for fut in as_completed(futures):
                try:
                    done(futures[fut], fut.result())
                except Exception as exc:  # recorded, not fatal
                    done(futures[fut], error=str(exc))
    else:
        for c in todo:
            try:
                done(c.seed, _run_and_store(c, directory))
            except Exception as exc:  # recorded, not fatal
                done(c.seed, error=str(exc))

    ordered = [traces[c.seed] for c in configs if c.seed in traces]
    manifest = {
        "config": {k: v for k, v in asdict(config).items() if k != "seed"},
        "config_hash": config.experiment_hash(),
        "master_seed": master_seed,
        "seeds": [c.seed for c in configs],
        "completed": sorted(traces),
        "failures": {str(k): v for k, v in sorted(failures.items())},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if ordered:
        emit_csv(aggregate(ordered), directory / "aggregate.csv")
    return ExperimentResult(directory, ordered, failures)
