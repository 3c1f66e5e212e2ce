import json
import logging
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

from staticfuse import app, evaluation, sim
from staticfuse.core import InvalidParameterError, TruthLabel, write_detections
from staticfuse.engine import Mode
from staticfuse.logging_utils import parse_log_level
from staticfuse.utils_test import FusionTest, make_detection

logger = logging.getLogger(__name__)

SMALL_SCENARIO = {
    "name": "small",
    "layout": "uniform",
    "roi": [0.0, 0.0, 30.0, 30.0],
    "objects_per_type": {"A": 3, "B": 3, "C": 3, "D": 3},
}


class AppTest(FusionTest):
    def setUp(self):
        self._folder = tempfile.TemporaryDirectory()
        self.folder = Path(self._folder.name)
        self.path_scenario = self.folder / "small.json"
        self.path_scenario.write_text(json.dumps(SMALL_SCENARIO), encoding="utf-8")

    def tearDown(self):
        self._folder.cleanup()


class TestRunConfig(AppTest):
    def test_method_defaults(self):
        self.assertEqual(app.RunConfig().engine_params().w_min, 4.0)
        self.assertEqual(app.RunConfig(method=Mode.BASELINE).engine_params().w_min, 3.0)
        self.assertEqual(app.RunConfig(method="dbstream-baseline", w_min=5.0).engine_params().w_min, 5.0)
        config = app.RunConfig(radius=0.9, beta=3.0)
        self.assertEqual(config.for_method(Mode.BASELINE).engine_params().r, 0.9)
        self.assertEqual(config.to_dict()["method"], "soda-citron")

    def test_invalid(self):
        for kwargs in ({"radius": -1.0}, {"alpha": 2.0}, {"seed": -1}, {"checkpoint_interval": 0}):
            with self.assertRaises(InvalidParameterError):
                app.RunConfig(**kwargs)
        with self.assertRaises(ValueError):
            app.RunConfig(method="kalman")

    def test_workers(self):
        self.assertEqual(app.resolve_workers(3), 3)
        with mock.patch.dict(os.environ, {app.WORKERS_ENV_VAR: "4"}):
            self.assertEqual(app.resolve_workers(), 4)
        with mock.patch.dict(os.environ, {app.WORKERS_ENV_VAR: "many"}):
            with self.assertRaises(InvalidParameterError):
                app.resolve_workers()
        with self.assertRaises(InvalidParameterError):
            app.resolve_workers(0)


class TestLogging(FusionTest):
    def test_parse_log_level(self):
        self.assertEqual(parse_log_level("debug"), logging.DEBUG)
        self.assertEqual(parse_log_level("WARNING"), logging.WARNING)
        with self.assertRaises(ValueError):
            parse_log_level("chatty")


class TestSimulate(AppTest):
    def test_scenario_a(self):
        config = app.RunConfig(scenario="A", seed=1, out=self.folder / "a")
        path_truth, path_detections = app.cmd_simulate(config)
        n_lines = len(path_detections.read_text(encoding="utf-8").splitlines())
        self.assertGreaterEqual(n_lines, 1400)
        self.assertLessEqual(n_lines, 2200)
        self.assertEqual(len(sim.read_truth(path_truth)), 100)

    def test_scenario_b(self):
        path_truth, _ = app.cmd_simulate(app.RunConfig(scenario="B", seed=1, out=self.folder))
        self.assertEqual(len(json.loads(path_truth.read_text(encoding="utf-8"))["objects"]), 210)

    def test_byte_identical(self):
        paths_1 = app.cmd_simulate(app.RunConfig(scenario="A", seed=1, out=self.folder / "1"))
        paths_2 = app.cmd_simulate(app.RunConfig(scenario="A", seed=1, out=self.folder / "2"))
        for p1, p2 in zip(paths_1, paths_2):
            self.assertEqual(p1.read_bytes(), p2.read_bytes())


class TestRun(AppTest):
    def _write_truth(self, objects):
        truth = sim.ScenarioTruth(
            "manual",
            sim.Roi(0.0, 0.0, 50.0, 50.0),
            tuple(sim.TruthObject(k, t, x, y) for k, (t, x, y) in enumerate(objects)),
        )
        path = self.folder / "truth.json"
        sim.write_truth(path, truth)
        return path

    def test_empty_stream(self):
        path_truth = self._write_truth([("A", 10.0, 10.0)])
        path_detections = self.folder / "detections.jsonl"
        write_detections(path_detections, [])
        path_metrics, path_estimates = app.cmd_run(app.RunConfig(out=self.folder), path_detections, path_truth)
        self.assertEqual(path_metrics.read_text(encoding="utf-8").strip(), ",".join(evaluation.METRIC_COLUMNS))
        estimates, method, n_detections = app.read_estimates(path_estimates)
        self.assertEqual((estimates, method, n_detections), ([], "soda-citron", 0))

    def test_single_confident_detection(self):
        path_truth = self._write_truth([("A", 10.0, 10.0)])
        path_detections = self.folder / "detections.jsonl"
        detection = make_detection(10.2, 9.9, pi=1.0, R=0.015 * np.eye(2), truth=TruthLabel.of_object(0))
        write_detections(path_detections, [detection])
        path_metrics, path_estimates = app.cmd_run(app.RunConfig(out=self.folder), path_detections, path_truth)
        estimates, _, n_detections = app.read_estimates(path_estimates)
        self.assertEqual(n_detections, 1)
        self.assertEqual(len(estimates), 1)
        self.assert_array_close(estimates[0].x_hat, [10.2, 9.9], atol=1e-12)
        df = pd.read_csv(path_metrics)
        self.assertEqual(len(df), 1)
        self.assertEqual(df.loc[0, "tp"], 1)
        self.assertEqual(df.loc[0, "mota"], 1.0)

        path_eval = app.cmd_evaluate(app.RunConfig(out=self.folder / "eval"), path_estimates, path_truth)
        df_eval = pd.read_csv(path_eval)
        self.assertEqual(df_eval.loc[0, "f1"], 1.0)
        self.assertEqual(df_eval.loc[0, "n_detections"], 1)

    def test_checkpoints_and_determinism(self):
        config = app.RunConfig(scenario=str(self.path_scenario), seed=2, checkpoint_interval=25)
        truth, detections = app.simulate_run(config)
        df_1, final_1 = app.run_stream(detections, truth, config)
        df_2, final_2 = app.run_stream(detections, truth, config)
        self.assert_frame_equal(df_1, df_2, drop_columns=["runtime_ms"])
        self.assertEqual([e.to_dict() for e in final_1], [e.to_dict() for e in final_2])
        n = len(detections)
        expected = list(range(25, n + 1, 25))
        if n % 25:
            expected.append(n)
        self.assertEqual(df_1["n_detections"].tolist(), expected)
        self.assertTrue((df_1["runtime_ms"].diff().dropna() >= 0).all())
        self.assertEqual(df_1["scenario"].iloc[0], "small")
        # Final checkpoint estimates equal the in-place reclustered ones
        final_m = evaluation.match(final_1, truth)
        self.assertEqual(final_m.tp, df_1["tp"].iloc[-1])

    def test_baseline_has_no_tracking_scores(self):
        config = app.RunConfig(scenario=str(self.path_scenario), seed=2, method=Mode.BASELINE)
        truth, detections = app.simulate_run(config)
        df, _ = app.run_stream(detections, truth, config)
        self.assertTrue(df[["idsw", "motp", "mota"]].isna().all().all())
        self.assertTrue((df["method"] == "dbstream-baseline").all())


class TestStudies(AppTest):
    def test_montecarlo(self):
        config = app.RunConfig(scenario=str(self.path_scenario), out=self.folder / "mc", checkpoint_interval=50)
        path_metrics, path_report = app.cmd_montecarlo(config, n_runs=3, workers=1)
        df = pd.read_csv(path_metrics)
        self.assertEqual(sorted(df["run_seed"].unique()), [0, 1, 2])
        self.assertEqual(sorted(df["method"].unique()), ["dbstream-baseline", "soda-citron"])
        df_report = pd.read_csv(path_report)
        self.assertEqual(df_report["metric"].tolist(), ["f1", "rmse_normal"])
        self.assertTrue((df_report["n_runs"] <= 3).all())
        with self.assertRaises(InvalidParameterError):
            app.cmd_montecarlo(config, n_runs=1)

    def test_significance_report(self):
        rng = np.random.default_rng(0)
        rows = []
        for seed in range(20):
            for method, offset in (("soda-citron", 0.1), ("dbstream-baseline", 0.0)):
                f1 = 0.5 + offset + 0.01 * rng.normal()
                rows.append({"run_seed": seed, "method": method, "n_detections": 100, "f1": f1, "rmse_normal": 0.3 - offset})
        df_report = app.significance_report(pd.DataFrame(rows))
        row = df_report.loc[df_report["metric"] == "f1"].iloc[0]
        self.assertEqual((row["method_a"], row["method_b"]), ("dbstream-baseline", "soda-citron"))
        self.assertLess(row["p_value"], 0.001)
        self.assertGreater(row["median_b"], row["median_a"])

    def test_bench(self):
        df = app.bench_table(app.RunConfig(), [300, 1200])
        self.assertEqual(len(df), 2)
        self.assertTrue((df["detections_per_second"] > 0).all())
        self.assertTrue(np.isfinite(df["exponent"]).all())
        for sizes in ([], [400, 200], [0]):
            with self.assertRaises(InvalidParameterError):
                app.bench_table(app.RunConfig(), sizes)

    def test_sweep(self):
        config = app.RunConfig(scenario=str(self.path_scenario), out=self.folder)
        df = app.sweep_table(config, "w_min", [2.0, 6.0], n_runs=2)
        self.assertEqual(df["value"].tolist(), [2.0, 6.0])
        self.assertEqual(list(df.columns), ["param", "value", "method", "n_runs", "median_f1", "median_rmse_normal"])
        with self.assertRaises(InvalidParameterError):
            app.sweep_table(config, "gamma", [1.0], n_runs=2)

    def test_curve(self):
        path = app.cmd_curve(app.RunConfig(out=self.folder), betas=[3.0, 9.0], n_points=5)
        df = pd.read_csv(path)
        self.assertEqual(len(df), 10)
        self.assertEqual(df["weight"].max(), 10.0)


class TestMethodComparison(FusionTest):
    """Scenario A over 100 paired seeds, both methods at their defaults."""

    @classmethod
    def setUpClass(cls):
        config = app.RunConfig(scenario="A", checkpoint_interval=app.DEFAULT_CHECKPOINT_INTERVAL)
        cls.df_metrics = app.montecarlo_table(
            config, 100, (Mode.CONFIDENCE, Mode.BASELINE), workers=app.resolve_workers()
        )
        cls.df_report = app.significance_report(cls.df_metrics)

    def _row(self, metric):
        row = self.df_report.loc[self.df_report["metric"] == metric].iloc[0]
        self.assertEqual((row["method_a"], row["method_b"]), ("dbstream-baseline", "soda-citron"))
        self.assertEqual(row["n_runs"], 100)
        return row

    def test_confidence_weighting_beats_baseline(self):
        row = self._row("f1")
        logger.info("Median F1 %s vs baseline %s, p=%s", row["median_b"], row["median_a"], row["p_value"])
        self.assertGreater(row["median_b"], row["median_a"])
        self.assertLess(row["p_value"], 0.01)
        row = self._row("rmse_normal")
        logger.info("Median RMSE %s vs baseline %s, p=%s", row["median_b"], row["median_a"], row["p_value"])
        self.assertLess(row["median_b"], row["median_a"])
        self.assertLess(row["p_value"], 0.01)

    def test_scores_improve_over_the_stream(self):
        df = self.df_metrics.loc[self.df_metrics["method"] == "soda-citron"]
        n_f1 = n_mota = 0
        for _, df_run in df.groupby("run_seed"):
            df_run = df_run.sort_values("n_detections")
            final = df_run.iloc[-1]
            early = df_run.loc[df_run["n_detections"] >= 0.25 * final["n_detections"]].iloc[0]
            n_f1 += final["f1"] >= early["f1"]
            n_mota += final["mota"] >= early["mota"]
        logger.info("Final F1 not below quarter-stream F1 in %s runs, MOTA in %s", n_f1, n_mota)
        self.assertGreaterEqual(n_f1, 90)
        self.assertGreaterEqual(n_mota, 85)


class TestScaling(FusionTest):
    def test_throughput_and_growth(self):
        df = app.bench_table(app.RunConfig(), app.DEFAULT_BENCH_SIZES)
        logger.info("Bench\n%s", df)
        self.assertEqual(len(df), 3)
        self.assertTrue((df["detections_per_second"] >= 250.0).all())
        self.assertLessEqual(df["exponent"].iloc[0], 1.3)


class TestMain(AppTest):
    def test_simulate_and_run(self):
        out = str(self.folder)
        self.assertEqual(app.main(["simulate", "--scenario", str(self.path_scenario), "--seed", "3", "--out", out]), 0)
        args = ["--detections", out + "/detections.jsonl", "--truth", out + "/truth.json", "--out", out]
        self.assertEqual(app.main(["--log-level", "debug", "run", *args, "--checkpoint-interval", "20"]), 0)
        self.assertTrue((self.folder / "metrics.csv").exists())
        self.assertTrue((self.folder / "estimates.json").exists())

    def test_usage_errors(self):
        self.assertEqual(app.main([]), app.EXIT_USAGE)
        self.assertEqual(app.main(["teleport"]), app.EXIT_USAGE)
        self.assertEqual(app.main(["simulate", "--radius", "-1", "--out", str(self.folder)]), app.EXIT_USAGE)
        self.assertEqual(app.main(["bench", "--sizes", "", "--out", str(self.folder)]), app.EXIT_USAGE)
        self.assertEqual(app.main(["montecarlo", "--runs", "1", "--out", str(self.folder)]), app.EXIT_USAGE)
        missing = str(self.folder / "missing.json")
        self.assertEqual(
            app.main(["run", "--detections", missing, "--truth", missing, "--out", str(self.folder)]),
            app.EXIT_USAGE,
        )

    def test_data_error(self):
        out = str(self.folder)
        app.main(["simulate", "--scenario", str(self.path_scenario), "--out", out])
        path_detections = self.folder / "detections.jsonl"
        lines = path_detections.read_text(encoding="utf-8").splitlines()
        lines[1] = '{"sensor": "S1", "x": 1.0}'
        path_detections.write_text("\n".join(lines) + "\n", encoding="utf-8")
        code = app.main(["run", "--detections", str(path_detections), "--truth", out + "/truth.json", "--out", out])
        self.assertEqual(code, app.EXIT_DATA)

    def test_curve_command(self):
        self.assertEqual(app.main(["curve", "--betas", "3,6", "--points", "3", "--out", str(self.folder)]), 0)
        self.assertEqual(len(pd.read_csv(self.folder / "curve.csv")), 6)


if __name__ == "__main__":
    unittest.main()
