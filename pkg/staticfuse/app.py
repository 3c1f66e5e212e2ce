#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""CLI entry point for simulating, running, scoring and benchmarking the fusion engine."""

# -- Coding Conventions
#    http://www.python.org/dev/peps/pep-0008/   -   Use the Python style guide
# http://sphinx.pocoo.org/rest.html          -   Use Restructured Text for
# docstrings

from __future__ import annotations

import argparse
import json
import logging
import os
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from staticfuse import configure_logging, evaluation, sim
from staticfuse.core import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_RADIUS,
    DEFAULT_W_MAX,
    DEFAULT_W_MIN,
    ContractViolationError,
    Detection,
    EngineParams,
    EstimatedObject,
    IndexConsistencyError,
    InsufficientSampleError,
    InvalidDetectionError,
    InvalidParameterError,
    StreamFormatError,
    UnrecoverableStateError,
    read_detections,
    write_detections,
)
from staticfuse.engine import DEFAULT_CURVE_BETAS, DEFAULT_CURVE_POINTS, Engine, Mode, confidence_curve
from staticfuse.logging_utils import LOG_LEVEL_NAMES, parse_log_level

# Configuration
BASELINE_W_MIN = 3.0
DEFAULT_CHECKPOINT_INTERVAL = 100
DEFAULT_N_RUNS = 50
DEFAULT_SCENARIO = "A"
DEFAULT_OUT = "."
DEFAULT_BENCH_SIZES = (2000, 8000, 32000)
BENCH_RECLUSTERS = 20
WORKERS_ENV_VAR = "STATICFUSE_WORKERS"
SWEEP_PARAMS = ("w_min", "radius", "beta", "w_max", "alpha")
COMPARED_METRICS = ("f1", "rmse_normal")

FILE_TRUTH = "truth.json"
FILE_DETECTIONS = "detections.jsonl"
FILE_METRICS = "metrics.csv"
FILE_ESTIMATES = "estimates.json"
FILE_MONTECARLO = "montecarlo.csv"
FILE_SIGNIFICANCE = "significance.csv"
FILE_BENCH = "bench.csv"
FILE_SWEEP = "sweep.csv"
FILE_CURVE = "curve.csv"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

logger = logging.getLogger(__name__)


# -- Configuration objects
@dataclass(frozen=True)
class RunConfig:
    """
    Settings shared by all subcommands.

    ``w_min`` left as ``None`` resolves to the method default: 4 for the
    confidence-weighted engine and 3 for the baseline.
    """

    scenario: str = DEFAULT_SCENARIO
    sensors: str | None = None
    method: Mode = Mode.CONFIDENCE
    seed: int = 0
    checkpoint_interval: int = DEFAULT_CHECKPOINT_INTERVAL
    out: Path = Path(DEFAULT_OUT)
    radius: float = DEFAULT_RADIUS
    beta: float = DEFAULT_BETA
    w_max: float = DEFAULT_W_MAX
    w_min: float | None = None
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "method", Mode(self.method))
        object.__setattr__(self, "out", Path(self.out))
        if self.seed < 0:
            raise InvalidParameterError(f"seed must be >= 0, got {self.seed}")
        if self.checkpoint_interval <= 0:
            raise InvalidParameterError(f"checkpoint interval must be > 0, got {self.checkpoint_interval}")
        self.engine_params()

    def engine_params(self) -> EngineParams:
        w_min = self.w_min
        if w_min is None:
            w_min = BASELINE_W_MIN if self.method is Mode.BASELINE else DEFAULT_W_MIN
        return EngineParams(r=self.radius, beta=self.beta, w_max=self.w_max, w_min=w_min, alpha=self.alpha)

    def for_method(self, method: Mode | str) -> RunConfig:
        return replace(self, method=Mode(method))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["method"] = self.method.value
        d["out"] = str(self.out)
        return d


# -- Helpers
def _scenario_label(scenario: str) -> str:
    key = str(scenario).upper()
    return key if key in sim.SCENARIO_FILES else Path(scenario).stem


def _prepare_out(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_estimates(path: Path | str, estimates: Sequence[EstimatedObject], method: str, n_detections: int) -> None:
    doc = {
        "method": method,
        "n_detections": n_detections,
        "objects": [e.to_dict() for e in estimates],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    logger.info("Wrote %s estimates to %s", len(estimates), path)


def read_estimates(path: Path | str) -> tuple[list[EstimatedObject], str, int]:
    """
    :return: estimates, method name and number of consumed detections
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        estimates = [EstimatedObject.from_dict(d) for d in doc["objects"]]
        return estimates, str(doc.get("method", "")), int(doc.get("n_detections", 0))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise StreamFormatError(f"invalid estimates document {path}: {exc}", getattr(exc, "lineno", 1)) from exc


def simulate_run(config: RunConfig) -> tuple[sim.ScenarioTruth, list[Detection]]:
    spec = sim.load_scenario_spec(config.scenario)
    sensors = sim.load_sensor_specs(config.sensors)
    truth = sim.gen_scenario(spec, config.seed)
    detections = sim.simulate(truth, sensors, config.seed)
    return truth, detections


def run_stream(
    detections: Sequence[Detection],
    truth: sim.ScenarioTruth,
    config: RunConfig,
) -> tuple[pd.DataFrame, list[EstimatedObject]]:
    """
    Feed a stream through the engine and score it at checkpoints.

    Every ``checkpoint_interval`` detections, and after the last detection,
    a clone of the engine is reclustered and scored, so evaluation leaves
    the engine trajectory untouched. The engine itself is reclustered once
    at the end.

    :return: metric table and final estimates
    """
    engine = Engine(config.engine_params(), config.method)
    series = evaluation.CheckpointSeries()
    l_runtime_ms = []
    elapsed = 0.0
    n = len(detections)
    for k, detection in enumerate(detections, start=1):
        t0 = time.perf_counter()
        engine.update(detection)
        elapsed += time.perf_counter() - t0
        if k % config.checkpoint_interval == 0 or k == n:
            t0 = time.perf_counter()
            estimates = engine.clone().recluster()
            elapsed += time.perf_counter() - t0
            series.append(k, estimates)
            l_runtime_ms.append(1000.0 * elapsed)
    final = engine.recluster()
    df_metrics = evaluation.evaluate_checkpoints(
        series,
        truth,
        method=config.method.value,
        scenario=_scenario_label(config.scenario),
        run_seed=config.seed,
        assigns_ids=config.method.assigns_ids,
        runtime_ms=l_runtime_ms,
    )
    return df_metrics, final


def _final_rows(df: pd.DataFrame) -> pd.DataFrame:
    return df.sort_values("n_detections").groupby(["run_seed", "method"], as_index=False).tail(1)


def _montecarlo_run(config: RunConfig, methods: tuple[Mode, ...]) -> list[dict]:
    # One truth and stream per seed, shared by all methods so results pair up
    truth, detections = simulate_run(config)
    records = []
    for method in methods:
        df_metrics, _ = run_stream(detections, truth, config.for_method(method))
        records.extend(df_metrics.to_dict("records"))
    logger.info("Finished Monte Carlo run %s (%s detections)", config.seed, len(detections))
    return records


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        value = os.environ.get(WORKERS_ENV_VAR, "1")
        try:
            workers = int(value)
        except ValueError:
            raise InvalidParameterError(f"{WORKERS_ENV_VAR} must be an integer, got {value!r}") from None
    if workers < 1:
        raise InvalidParameterError(f"worker count must be >= 1, got {workers}")
    return workers


def montecarlo_table(
    config: RunConfig,
    n_runs: int,
    methods: Sequence[Mode | str],
    workers: int = 1,
) -> pd.DataFrame:
    """Metric tables of seeds ``0 .. n_runs - 1`` for every method, stacked."""
    methods = tuple(Mode(m) for m in methods)
    configs = [replace(config, seed=seed) for seed in range(n_runs)]
    if workers == 1:
        results = [_montecarlo_run(c, methods) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_montecarlo_run, configs, [methods] * len(configs)))
    records = [r for run in results for r in run]
    return pd.DataFrame(records, columns=evaluation.METRIC_COLUMNS)


def significance_report(df_metrics: pd.DataFrame) -> pd.DataFrame:
    """
    Paired Wilcoxon signed-rank tests between every pair of methods on the
    final-checkpoint values of each compared metric.
    """
    df_final = _final_rows(df_metrics)
    methods = sorted(df_final["method"].unique())
    rows = []
    for a_idx, method_a in enumerate(methods):
        for method_b in methods[a_idx + 1 :]:
            df_a = df_final.loc[df_final["method"] == method_a].set_index("run_seed")
            df_b = df_final.loc[df_final["method"] == method_b].set_index("run_seed")
            for metric in COMPARED_METRICS:
                df_pair = pd.DataFrame({"a": df_a[metric], "b": df_b[metric]}).dropna()
                row = {
                    "metric": metric,
                    "method_a": method_a,
                    "method_b": method_b,
                    "n_runs": len(df_pair),
                    "median_a": df_pair["a"].median() if len(df_pair) else np.nan,
                    "median_b": df_pair["b"].median() if len(df_pair) else np.nan,
                    "statistic": np.nan,
                    "p_value": np.nan,
                }
                try:
                    result = evaluation.wilcoxon_signed_rank(df_pair["a"].to_numpy(), df_pair["b"].to_numpy())
                    row["statistic"] = result.statistic
                    row["p_value"] = result.p_value
                except InsufficientSampleError as exc:
                    logger.warning("Skipping %s comparison %s vs %s: %s", metric, method_a, method_b, exc)
                logger.info(
                    "%s: %s median %s vs %s median %s, p=%s",
                    metric,
                    method_a,
                    row["median_a"],
                    method_b,
                    row["median_b"],
                    row["p_value"],
                )
                rows.append(row)
    return pd.DataFrame(
        rows, columns=["metric", "method_a", "method_b", "n_runs", "median_a", "median_b", "statistic", "p_value"]
    )


# -- Commands
def cmd_simulate(config: RunConfig) -> tuple[Path, Path]:
    """Write ``truth.json`` and ``detections.jsonl`` for the configured scenario and seed."""
    out = _prepare_out(config.out)
    truth, detections = simulate_run(config)
    path_truth = out / FILE_TRUTH
    path_detections = out / FILE_DETECTIONS
    sim.write_truth(path_truth, truth)
    write_detections(path_detections, detections)
    return path_truth, path_detections


def cmd_run(config: RunConfig, path_detections: Path | str, path_truth: Path | str) -> tuple[Path, Path]:
    """Run the engine over a detection file and write ``metrics.csv`` and ``estimates.json``."""
    out = _prepare_out(config.out)
    truth = sim.read_truth(path_truth)
    detections = read_detections(path_detections)
    logger.info("Running %s on %s detections", config.method.value, len(detections))
    df_metrics, estimates = run_stream(detections, truth, config)
    path_metrics = out / FILE_METRICS
    path_estimates = out / FILE_ESTIMATES
    df_metrics.to_csv(path_metrics, index=False)
    logger.info("Writing metrics to %s", path_metrics)
    write_estimates(path_estimates, estimates, config.method.value, len(detections))
    return path_metrics, path_estimates


def cmd_evaluate(config: RunConfig, path_estimates: Path | str, path_truth: Path | str) -> Path:
    """Score an estimates document against a truth document (one-row ``metrics.csv``)."""
    out = _prepare_out(config.out)
    truth = sim.read_truth(path_truth)
    estimates, method, n_detections = read_estimates(path_estimates)
    method = method or config.method.value
    series = evaluation.CheckpointSeries([(n_detections, estimates)])
    df_metrics = evaluation.evaluate_checkpoints(
        series,
        truth,
        method=method,
        scenario=truth.name or _scenario_label(config.scenario),
        run_seed=config.seed,
        assigns_ids=Mode(method).assigns_ids if method in {m.value for m in Mode} else False,
    )
    path_metrics = out / FILE_METRICS
    df_metrics.to_csv(path_metrics, index=False)
    logger.info("Writing metrics to %s", path_metrics)
    return path_metrics


def cmd_montecarlo(
    config: RunConfig,
    n_runs: int = DEFAULT_N_RUNS,
    methods: Sequence[Mode | str] = (Mode.CONFIDENCE, Mode.BASELINE),
    workers: int | None = None,
) -> tuple[Path, Path]:
    """
    Run ``n_runs`` seeds for each method, write the stacked metric table and
    the significance report.
    """
    if n_runs < 2:
        raise InvalidParameterError(f"Monte Carlo needs at least 2 runs, got {n_runs}")
    out = _prepare_out(config.out)
    workers = resolve_workers(workers)
    logger.info("Starting %s Monte Carlo runs with %s worker(s)", n_runs, workers)
    df_metrics = montecarlo_table(config, n_runs, methods, workers)
    path_metrics = out / FILE_MONTECARLO
    path_report = out / FILE_SIGNIFICANCE
    df_metrics.to_csv(path_metrics, index=False)
    logger.info("Writing Monte Carlo metrics to %s", path_metrics)
    significance_report(df_metrics).to_csv(path_report, index=False)
    logger.info("Writing significance report to %s", path_report)
    return path_metrics, path_report


def bench_table(config: RunConfig, sizes: Sequence[int]) -> pd.DataFrame:
    """
    Time engine update plus periodic in-place reclustering on synthetic
    streams of the given sizes.

    :return: one row per size, with the growth exponent of a log-log fit of
        runtime over stream length repeated on every row
    """
    if not sizes:
        raise InvalidParameterError("bench needs at least one stream size")
    if any(s <= 0 for s in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidParameterError(f"bench sizes must be positive and strictly ascending, got {list(sizes)}")
    sensors = sim.load_sensor_specs(config.sensors)
    rows = []
    for size in sizes:
        truth = sim.scaled_scenario(size, sensors, config.seed)
        detections = sim.simulate(truth, sensors, config.seed)[:size]
        n = len(detections)
        recluster_every = max(1, n // BENCH_RECLUSTERS)
        engine = Engine(config.engine_params(), config.method)
        t0 = time.perf_counter()
        for k, detection in enumerate(detections, start=1):
            engine.update(detection)
            if k % recluster_every == 0:
                engine.recluster()
        seconds = time.perf_counter() - t0
        rows.append({
            "n_detections": n,
            "seconds": seconds,
            "detections_per_second": n / seconds if seconds > 0 else np.nan,
            "n_potentials": engine.n_potentials,
        })
        logger.info("Bench %s detections: %.3f s, %.0f detections/s", n, seconds, rows[-1]["detections_per_second"])
    df_bench = pd.DataFrame(rows)
    exponent = np.nan
    if len(df_bench) >= 2:
        exponent = float(np.polyfit(np.log(df_bench["n_detections"]), np.log(df_bench["seconds"]), 1)[0])
        logger.info("Empirical growth exponent %.3f", exponent)
    df_bench["exponent"] = exponent
    return df_bench


def cmd_bench(config: RunConfig, sizes: Sequence[int] = DEFAULT_BENCH_SIZES) -> Path:
    out = _prepare_out(config.out)
    df_bench = bench_table(config, sizes)
    path_bench = out / FILE_BENCH
    df_bench.to_csv(path_bench, index=False)
    logger.info("Writing benchmark to %s", path_bench)
    return path_bench


def sweep_table(config: RunConfig, param: str, values: Sequence[float], n_runs: int) -> pd.DataFrame:
    """Median final F1 and RMSE of ``config.method`` for each value of one engine parameter."""
    if param not in SWEEP_PARAMS:
        raise InvalidParameterError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise InvalidParameterError("sweep needs at least one value")
    rows = []
    for value in values:
        swept = replace(config, **{param: float(value)})
        df_final = _final_rows(montecarlo_table(swept, n_runs, [config.method]))
        rows.append({
            "param": param,
            "value": float(value),
            "method": config.method.value,
            "n_runs": n_runs,
            "median_f1": df_final["f1"].median(),
            "median_rmse_normal": df_final["rmse_normal"].median(),
        })
        logger.info("Sweep %s=%s: median F1 %s", param, value, rows[-1]["median_f1"])
    return pd.DataFrame(rows)


def cmd_sweep(config: RunConfig, param: str, values: Sequence[float], n_runs: int = DEFAULT_N_RUNS) -> Path:
    out = _prepare_out(config.out)
    path_sweep = out / FILE_SWEEP
    sweep_table(config, param, values, n_runs).to_csv(path_sweep, index=False)
    logger.info("Writing sweep to %s", path_sweep)
    return path_sweep


def cmd_curve(
    config: RunConfig,
    betas: Sequence[float] = DEFAULT_CURVE_BETAS,
    n_points: int = DEFAULT_CURVE_POINTS,
) -> Path:
    out = _prepare_out(config.out)
    path_curve = out / FILE_CURVE
    confidence_curve(betas, config.w_max, n_points).to_csv(path_curve, index=False)
    logger.info("Writing weighting curves to %s", path_curve)
    return path_curve


# -- Argument parsing
class ArgumentParser(argparse.ArgumentParser):
    """Argument parser exiting with the usage error code."""

    def error(self, message):
        self.print_usage()
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="staticfuse", description=__doc__)
    parser.add_argument(
        "--log-level",
        help="Logging level",
        default="INFO",
        choices=LOG_LEVEL_NAMES,
        type=str.upper,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="A, B or path of a scenario JSON file", default=DEFAULT_SCENARIO)
    common.add_argument("--sensors", help="Path of a sensor JSON file, defaults to the shipped table", default=None)
    common.add_argument("--method", help="Engine method", choices=[m.value for m in Mode], default=Mode.CONFIDENCE.value)
    common.add_argument("--seed", help="Run seed", type=int, default=0)
    common.add_argument(
        "--checkpoint-interval",
        help="Detections between evaluation checkpoints",
        type=int,
        default=DEFAULT_CHECKPOINT_INTERVAL,
    )
    common.add_argument("--radius", help="Clustering radius r [m]", type=float, default=DEFAULT_RADIUS)
    common.add_argument("--beta", help="Steepness of the confidence weighting", type=float, default=DEFAULT_BETA)
    common.add_argument("--wmax", help="Weight of a detection with confidence 1", type=float, default=DEFAULT_W_MAX)
    common.add_argument("--wmin", help="Minimum weight of a reported object, method default when omitted", type=float)
    common.add_argument("--alpha", help="Intersection factor", type=float, default=DEFAULT_ALPHA)
    common.add_argument("--out", help="Output folder", default=DEFAULT_OUT)

    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)
    subparsers.add_parser("simulate", parents=[common], help="Write ground truth and a detection stream")

    p_run = subparsers.add_parser("run", parents=[common], help="Run the engine over a detection stream")
    p_run.add_argument("--detections", help="Path of the detection stream", required=True)
    p_run.add_argument("--truth", help="Path of the truth document", required=True)

    p_eval = subparsers.add_parser("evaluate", parents=[common], help="Score estimates against truth")
    p_eval.add_argument("--estimates", help="Path of the estimates document", required=True)
    p_eval.add_argument("--truth", help="Path of the truth document", required=True)

    p_mc = subparsers.add_parser("montecarlo", parents=[common], help="Monte Carlo comparison of methods")
    p_mc.add_argument("--runs", help="Number of runs", type=int, default=DEFAULT_N_RUNS)
    p_mc.add_argument(
        "--methods",
        help="Comma-separated methods to compare",
        default=",".join(m.value for m in Mode),
    )
    p_mc.add_argument("--workers", help=f"Worker processes, defaults to ${WORKERS_ENV_VAR} or 1", type=int)

    p_bench = subparsers.add_parser("bench", parents=[common], help="Throughput and scaling benchmark")
    p_bench.add_argument(
        "--sizes",
        help="Comma-separated ascending stream sizes",
        type=_int_list,
        default=list(DEFAULT_BENCH_SIZES),
    )

    p_sweep = subparsers.add_parser("sweep", parents=[common], help="Parameter sensitivity study")
    p_sweep.add_argument("--param", help="Engine parameter to vary", choices=SWEEP_PARAMS, required=True)
    p_sweep.add_argument("--values", help="Comma-separated parameter values", type=_float_list, required=True)
    p_sweep.add_argument("--runs", help="Runs per value", type=int, default=DEFAULT_N_RUNS)

    p_curve = subparsers.add_parser("curve", parents=[common], help="Confidence weighting curves")
    p_curve.add_argument(
        "--betas",
        help="Comma-separated steepness factors",
        type=_float_list,
        default=list(DEFAULT_CURVE_BETAS),
    )
    p_curve.add_argument("--points", help="Samples over [0, 1]", type=int, default=DEFAULT_CURVE_POINTS)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        scenario=args.scenario,
        sensors=args.sensors,
        method=Mode(args.method),
        seed=args.seed,
        checkpoint_interval=args.checkpoint_interval,
        out=Path(args.out),
        radius=args.radius,
        beta=args.beta,
        w_max=args.wmax,
        w_min=args.wmin,
        alpha=args.alpha,
    )


def _dispatch(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    logger.debug("Run configuration: %s", config.to_dict())
    if args.command == "simulate":
        cmd_simulate(config)
    elif args.command == "run":
        cmd_run(config, args.detections, args.truth)
    elif args.command == "evaluate":
        cmd_evaluate(config, args.estimates, args.truth)
    elif args.command == "montecarlo":
        methods = [Mode(m.strip()) for m in args.methods.split(",") if m.strip()]
        cmd_montecarlo(config, args.runs, methods, args.workers)
    elif args.command == "bench":
        cmd_bench(config, args.sizes)
    elif args.command == "sweep":
        cmd_sweep(config, args.param, args.values, args.runs)
    elif args.command == "curve":
        cmd_curve(config, args.betas, args.points)


def main(argv: list[str] | None = None) -> int:
    """
    Parse CLI arguments, run the selected command and map failures to exit
    codes.

    Parameters
    ----------
    argv:
        Optional list of arguments to parse instead of sys.argv.

    Returns
    -------
    int
        0 on success, 1 for usage or configuration errors, 2 for data
        errors, 3 for internal invariant violations.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(parse_log_level(args.log_level))
    logger.info("Starting %s", args.command)
    try:
        _dispatch(args)
    except (StreamFormatError, InvalidDetectionError, json.JSONDecodeError) as exc:
        logger.error("Data error: %s", exc)
        return EXIT_DATA
    except (InvalidParameterError, OSError) as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_USAGE
    except (UnrecoverableStateError, IndexConsistencyError, ContractViolationError) as exc:
        logger.error("Internal error: %s", exc)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
