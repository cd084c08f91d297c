"""Seeded Monte Carlo experiments over planners, with tidy CSV output.

Every trial k of an experiment with master seed s draws its randomness from
``SeedSequence([s, k])``: one child stream builds the initial dataset, the
other drives the closed-loop run. All planners of a trial share both streams,
so they see the same initial data and the same process noise.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from rrlqr.estimation import Dataset
from rrlqr.rrl import PLANNERS, RRLConfig, TrialResult, receding_horizon_run
from rrlqr.simulation import CostSpec, EpochSchedule, LinearSystem, Policy, make_rng, rollout

log = logging.getLogger(__name__)

MODES = ("empirical", "wc_data", "wc_theoretical")
METRIC_FIELDS = {
    "empirical": "empirical_cost",
    "wc_data": "wc_cost_data",
    "wc_theoretical": "wc_cost_theoretical",
    "information": "information",
}
CSV_HEADER = ("method", "trial", "epoch", "metric", "value")
MAX_FAILURE_FRACTION = 0.10


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class InitialDataProtocol:
    rollouts: int = 500
    length: int = 6
    input_cov: np.ndarray | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    system: LinearSystem
    cost: CostSpec
    schedule: EpochSchedule
    delta: float = 0.05
    h: int = 10
    initial_data: InitialDataProtocol = field(default_factory=InitialDataProtocol)
    trials: int = 100
    seed: int = 0
    methods: tuple[str, ...] = PLANNERS
    modes: tuple[str, ...] = MODES
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def rrl_config(self) -> RRLConfig:
        from rrlqr.conic import tolerances

        feas, opt = tolerances()
        return RRLConfig(self.schedule, self.h, self.delta, self.cost, self.system.sigma_w, feas, opt)

    def replace(self, **changes) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(self, **changes)


def default_config_path() -> Path:
    return Path(str(resources.files("rrlqr") / "configs" / "section5.json"))


def _get(d: dict, key: str, path: str, default: Any = ...) -> Any:
    if key in d:
        return d[key]
    if default is ...:
        raise ConfigError(f"{path}.{key}".lstrip("."), "missing required field")
    return default


def _matrix(value, path: str, shape: tuple[int | None, int | None] | None = None) -> np.ndarray:
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be a numeric matrix") from None
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ConfigError(path, f"must be a 2-D matrix, got {M.ndim}-D")
    if shape is not None:
        for got, want in zip(M.shape, shape):
            if want is not None and got != want:
                raise ConfigError(path, f"has shape {M.shape}, expected {shape}")
    return M


def _parse_int(value, path: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(path, "must be an integer")
    if value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return int(value)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    sysd = _get(raw, "system", "")
    A = _matrix(_get(sysd, "A", "system"), "system.A")
    n_x = A.shape[0]
    if A.shape[1] != n_x:
        raise ConfigError("system.A", "must be square")
    B = _matrix(_get(sysd, "B", "system"), "system.B", (n_x, None))
    n_u = B.shape[1]
    sigma_w = float(_get(sysd, "sigma_w", "system"))
    if sigma_w <= 0:
        raise ConfigError("system.sigma_w", "must be positive")

    costd = _get(raw, "cost", "")
    Q = _matrix(_get(costd, "Q", "cost"), "cost.Q", (n_x, n_x))
    R = _matrix(_get(costd, "R", "cost"), "cost.R", (n_u, n_u))
    try:
        cost = CostSpec(Q, R)
    except ValueError as exc:
        raise ConfigError("cost", str(exc)) from None

    sched = _get(raw, "schedule", "")
    try:
        if "boundaries" in sched:
            schedule = EpochSchedule(tuple(sched["boundaries"]))
            if "T" in sched and sched["T"] != schedule.T:
                raise ValueError(f"T={sched['T']} disagrees with final boundary {schedule.T}")
        else:
            T = _parse_int(_get(sched, "T", "schedule"), "schedule.T")
            N = _parse_int(_get(sched, "N", "schedule"), "schedule.N")
            schedule = EpochSchedule.uniform(T, N)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("schedule", str(exc)) from None

    delta = float(raw.get("delta", 0.05))
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta", "must lie in (0, 1)")
    h = _parse_int(raw.get("h", 10), "h", minimum=0)

    init = raw.get("initial_data", {})
    input_cov = _matrix(init.get("input_cov", np.eye(n_u).tolist()), "initial_data.input_cov", (n_u, n_u))
    protocol = InitialDataProtocol(
        _parse_int(init.get("rollouts", 500), "initial_data.rollouts"),
        _parse_int(init.get("length", 6), "initial_data.length"),
        input_cov,
    )

    methods = tuple(raw.get("methods", PLANNERS))
    for k, m in enumerate(methods):
        if m not in PLANNERS:
            raise ConfigError(f"methods[{k}]", f"unknown method {m!r}")
    modes = tuple(raw.get("modes", MODES))
    for k, m in enumerate(modes):
        if m not in MODES:
            raise ConfigError(f"modes[{k}]", f"unknown mode {m!r}")

    return ExperimentConfig(
        system=LinearSystem(A, B, sigma_w),
        cost=cost,
        schedule=schedule,
        delta=delta,
        h=h,
        initial_data=protocol,
        trials=_parse_int(raw.get("trials", 100), "trials"),
        seed=_parse_int(raw.get("seed", 0), "seed", minimum=0),
        methods=methods,
        modes=modes,
        raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON ({exc})") from None
    return parse_config(raw)


def initial_dataset(config: ExperimentConfig, rng: np.random.Generator) -> Dataset:
    """Open-loop rollouts from x = 0 excited by u ~ N(0, input_cov)."""
    proto = config.initial_data
    sys = config.system
    excite = Policy(np.zeros((sys.n_u, sys.n_x)), proto.input_cov)
    trajs = [rollout(sys, excite, np.zeros(sys.n_x), proto.length, r) for r in rng.spawn(proto.rollouts)]
    return Dataset.from_trajectories(trajs)


def trial_streams(master_seed: int, trial: int) -> tuple[np.random.Generator, np.random.Generator]:
    data_seq, run_seq = np.random.SeedSequence([master_seed, trial]).spawn(2)
    return make_rng(data_seq), make_rng(run_seq)


@dataclass
class TrialOutcome:
    method: str
    trial: int
    result: TrialResult | None
    error: str | None = None


def run_trial(config: ExperimentConfig, method: str, trial: int) -> TrialOutcome:
    data_rng, run_rng = trial_streams(config.seed, trial)
    try:
        data = initial_dataset(config, data_rng)
        res = receding_horizon_run(
            config.system, data, config.rrl_config(), run_rng, method, seed=[config.seed, trial]
        )
    except Exception as exc:  # recorded per trial; the experiment continues
        log.warning("trial %d (%s) failed: %s", trial, method, exc)
        return TrialOutcome(method, trial, None, f"{type(exc).__name__}: {exc}")
    res.config = config.raw
    return TrialOutcome(method, trial, res)


def _run_trial_args(args):
    return run_trial(*args)


@dataclass
class ExperimentResult:
    trials: dict[str, dict[int, TrialResult]]
    failures: list[dict]
    summary: dict
    n_epochs: int
    modes: tuple[str, ...] = MODES

    @property
    def failure_fraction(self) -> float:
        total = sum(len(v) for v in self.trials.values()) + len(self.failures)
        return len(self.failures) / total if total else 0.0


def tidy_rows(trials: dict[str, dict[int, TrialResult]], modes=MODES) -> list[tuple]:
    metrics = [m for m in MODES if m in modes] + ["information"]
    rows = []
    for method in sorted(trials):
        for k in sorted(trials[method]):
            tr = trials[method][k]
            for rec in tr.epochs:
                for metric in metrics:
                    rows.append((method, k, rec.epoch, metric, float(getattr(rec, METRIC_FIELDS[metric]))))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for method, trial, epoch, metric, value in rows:
        w.writerow([method, trial, epoch, metric, repr(float(value))])
    return buf.getvalue()


def read_results_csv(path: str | Path) -> list[tuple]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [(m, int(t), int(e), metric, float(v)) for m, t, e, metric, v in reader]


def _quartiles(values: np.ndarray) -> dict:
    q25, med, q75 = np.percentile(values, [25, 50, 75], axis=0)
    return {"median": med.tolist(), "q25": q25.tolist(), "q75": q75.tolist(), "iqr": (q75 - q25).tolist()}


def aggregate(rows) -> dict:
    """Per-epoch median/quartiles per method and metric, plus totals over epochs.

    ``rows`` are tidy (method, trial, epoch, metric, value) tuples or a mapping
    method -> {trial: TrialResult}. Information is a state of knowledge rather
    than a cost, so its "total" block is replaced by the final-epoch value.
    """
    if isinstance(rows, dict):
        rows = tidy_rows(rows)
    table: dict[str, dict[str, dict[int, dict[int, float]]]] = {}
    for method, trial, epoch, metric, value in rows:
        table.setdefault(method, {}).setdefault(metric, {}).setdefault(trial, {})[epoch] = value
    out: dict = {}
    for method, metrics in table.items():
        out[method] = {}
        for metric, by_trial in metrics.items():
            trials = sorted(by_trial)
            epochs = sorted(by_trial[trials[0]])
            M = np.array([[by_trial[t][e] for e in epochs] for t in trials], dtype=float)
            entry = {"epochs": epochs, "n_trials": len(trials), "per_epoch": _quartiles(M)}
            if metric == "information":
                entry["final"] = _quartiles(M[:, -1])
            else:
                totals = M.sum(axis=1)
                entry["totals"] = totals.tolist()
                entry["total"] = _quartiles(totals)
            out[method][metric] = entry
    return out


def summary_rows(summary: dict) -> list[tuple]:
    rows = []
    for method in sorted(summary):
        for metric in sorted(summary[method]):
            entry = summary[method][metric]
            pe = entry["per_epoch"]
            for k, e in enumerate(entry["epochs"]):
                rows.append((method, metric, str(e), pe["median"][k], pe["q25"][k], pe["q75"][k], entry["n_trials"]))
            tail_key, tail = ("final", entry["final"]) if "final" in entry else ("total", entry["total"])
            rows.append((method, metric, tail_key, tail["median"], tail["q25"], tail["q75"], entry["n_trials"]))
    return rows


def write_summary_csv(summary: dict, path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "metric", "epoch", "median", "q25", "q75", "n_trials"))
    for method, metric, epoch, med, q25, q75, n in summary_rows(summary):
        w.writerow([method, metric, epoch, repr(float(med)), repr(float(q25)), repr(float(q75)), n])
    Path(path).write_text(buf.getvalue())


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    jobs: int | None = None,
) -> ExperimentResult:
    jobs = jobs or os.cpu_count() or 1
    tasks = [(config, method, k) for k in range(config.trials) for method in config.methods]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_trial_args, tasks))
    else:
        outcomes = [run_trial(*t) for t in tasks]

    trials: dict[str, dict[int, TrialResult]] = {m: {} for m in config.methods}
    failures = []
    for o in outcomes:
        if o.result is None:
            failures.append({"method": o.method, "trial": o.trial, "reason": o.error})
        else:
            trials[o.method][o.trial] = o.result
    rows = tidy_rows(trials, config.modes)
    summary = aggregate(rows) if rows else {}
    result = ExperimentResult(trials, failures, summary, config.schedule.N, config.modes)
    if out_dir is not None:
        write_experiment(result, out_dir)
    return result


def write_experiment(result: ExperimentResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    for method, by_trial in sorted(result.trials.items()):
        for k, tr in sorted(by_trial.items()):
            (out / "trials" / f"{method}_{k:04d}.json").write_text(tr.to_json() + "\n")
    (out / "results.csv").write_text(rows_to_csv(tidy_rows(result.trials, result.modes)))
    if result.summary:
        write_summary_csv(result.summary, out / "summary.csv")
        (out / "summary.json").write_text(json.dumps(result.summary, indent=1, sort_keys=True) + "\n")
    (out / "failures.json").write_text(json.dumps(result.failures, indent=1) + "\n")
