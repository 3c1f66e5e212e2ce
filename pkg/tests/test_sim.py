import json
import logging
import math
import tempfile
import unittest
from collections import Counter
from pathlib import Path

import numpy as np
from scipy import stats

from staticfuse import sim
from staticfuse.core import InvalidParameterError, TruthKind
from staticfuse.utils_test import FusionTest

logger = logging.getLogger(__name__)

SENSORS = sim.load_sensor_specs()


class TestRandomness(FusionTest):
    def test_make_rng_is_reproducible_and_keyed(self):
        a = sim.make_rng(7, 2, 0).random(5)
        self.assert_array_equal(a, sim.make_rng(7, 2, 0).random(5))
        self.assertFalse(np.array_equal(a, sim.make_rng(7, 2, 1).random(5)))
        self.assertFalse(np.array_equal(a, sim.make_rng(8, 2, 0).random(5)))
        with self.assertRaises(InvalidParameterError):
            sim.make_rng(-1)

    def test_pi_s1_distribution(self):
        rng = sim.make_rng(0)
        counts = Counter(sim.sample_pi_s1(rng) for _ in range(20000))
        self.assertEqual(set(counts), {0.5, 0.75, 1.0})
        self.assertAlmostEqual(counts[0.5] / 20000, 0.25, delta=0.02)
        self.assertAlmostEqual(counts[0.75] / 20000, 0.25, delta=0.02)
        self.assertAlmostEqual(counts[1.0] / 20000, 0.5, delta=0.02)

    def test_beta_moments(self):
        rng = sim.make_rng(1)
        for a, b in ((8.0, 2.5), (8.0, 8.0)):
            a_x = np.array([sim.sample_beta(a, b, rng) for _ in range(20000)])
            self.assertTrue(np.all((a_x > 0) & (a_x < 1)))
            self.assertAlmostEqual(a_x.mean(), a / (a + b), delta=0.01)
            var = a * b / ((a + b) ** 2 * (a + b + 1))
            self.assertAlmostEqual(a_x.var(), var, delta=0.1 * var)
        with self.assertRaises(InvalidParameterError):
            sim.sample_beta(0.0, 1.0, rng)

    def test_beta_one_one_is_uniform(self):
        rng = sim.make_rng(3)
        a_x = np.array([sim.sample_beta(1.0, 1.0, rng) for _ in range(10_000)])
        result = stats.kstest(a_x, "uniform")
        logger.info("KS statistic of Beta(1, 1) draws: %s", result.statistic)
        self.assertLess(result.statistic, 0.02)

    def test_discrete_normal_count(self):
        model = sim.DiscreteNormalCount(3.0, 1.0)
        rng = sim.make_rng(2)
        a_n = np.array([model.sample(rng) for _ in range(20000)])
        self.assertGreaterEqual(a_n.min(), 1)
        self.assertAlmostEqual(a_n.mean(), model.expected(), delta=0.03)
        self.assertGreater(model.expected(), 3.0)
        self.assertLess(model.expected(), 3.02)
        self.assertLess(model.expected(min_count=0), model.expected(min_count=1))
        self.assertEqual(sim.FixedCount(1).sample(rng), 1)


class TestSensorSpecs(FusionTest):
    def test_shipped_table(self):
        self.assertEqual([s.name for s in SENSORS], ["S1", "S2", "S3", "S4", "S5"])
        s2 = SENSORS[1]
        self.assertEqual(s2.pd["A"], 0.8)
        self.assertEqual(s2.sigma2, 0.167)
        self.assertEqual(s2.clutter_rate, 0.02)
        self.assertEqual(s2.count_model["A"], sim.DiscreteNormalCount(3.0, 1.0))
        self.assertEqual(s2.conf_det, sim.BetaConfidence(8.0, 2.5))
        self.assertEqual(s2.conf_clutter, sim.BetaConfidence(8.0, 8.0))
        self.assertNotIn("A", SENSORS[2].pd)
        self.assert_array_equal(SENSORS[0].covariance, 0.015 * np.eye(2))

    def test_invalid_sensor(self):
        record = {
            "name": "X",
            "pd": {"A": 1.5},
            "count": {"A": {"kind": "fixed", "n": 1}},
            "sigma2": 0.1,
            "conf_det": {"kind": "beta", "a": 1.0, "b": 1.0},
            "conf_clutter": {"kind": "beta", "a": 1.0, "b": 1.0},
            "clutter_rate": 0.0,
        }
        with self.assertRaises(InvalidParameterError):
            sim.SensorSpec.from_dict(record)
        with self.assertRaises(InvalidParameterError):
            sim.SensorSpec.from_dict({**record, "pd": {"A": 0.5}, "sigma2": 0.0})
        with self.assertRaises(InvalidParameterError):
            sim.SensorSpec.from_dict({**record, "pd": {"A": 0.5}, "count": {"A": {"kind": "poisson"}}})
        with self.assertRaises(InvalidParameterError):
            sim.SensorSpec.from_dict({"name": "X"})

    def test_custom_file(self):
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / "sensors.json"
            doc = json.loads((Path(sim.__file__).parent / "data" / "table1.json").read_text(encoding="utf-8"))
            doc["sensors"] = doc["sensors"][:2]
            path.write_text(json.dumps(doc), encoding="utf-8")
            self.assertEqual([s.name for s in sim.load_sensor_specs(path)], ["S1", "S2"])
            path.write_text("{}", encoding="utf-8")
            with self.assertRaises(InvalidParameterError):
                sim.load_sensor_specs(path)


class TestScenarios(FusionTest):
    def test_scenario_a(self):
        truth = sim.gen_scenario_a(3)
        self.assertEqual(len(truth), 100)
        self.assertEqual([o.object_id for o in truth.objects], list(range(100)))
        self.assertEqual([o.type_name for o in truth.objects], ["A"] * 25 + ["B"] * 25 + ["C"] * 25 + ["D"] * 25)
        self.assertEqual(truth.count_by_type(), {"A": 25, "B": 25, "C": 25, "D": 25})
        self.assertTrue(all(truth.roi.contains(o.x, o.y) for o in truth.objects))
        self.assertEqual(truth.roi.area, 22500.0)
        self.assertEqual(truth.to_dict(), sim.gen_scenario_a(3).to_dict())
        self.assertNotEqual(truth.to_dict(), sim.gen_scenario_a(4).to_dict())

    def test_scenario_b(self):
        truth = sim.gen_scenario_b(3)
        self.assertEqual(len(truth), 210)
        objects = truth.by_id()
        for k in range(105):
            row, index = divmod(k, 21)
            anchor = objects[k]
            companion = objects[105 + k]
            self.assertEqual(anchor.type_name, "A")
            self.assertEqual(companion.type_name, "B")
            self.assertLessEqual(abs(anchor.x - 5.0 * (index + 1)), 0.75)
            self.assertLessEqual(abs(anchor.y - 25.0 * (row + 1)), 0.75)
            distance = math.hypot(anchor.x - companion.x, anchor.y - companion.y)
            self.assertGreaterEqual(distance, 0.5 - 1e-9)
            self.assertLessEqual(distance, 1.5 + 1e-9)

    def test_scenario_spec_validation(self):
        with self.assertRaises(InvalidParameterError):
            sim.load_scenario_spec("no-such-scenario")
        roi = sim.Roi(0.0, 0.0, 10.0, 10.0)
        with self.assertRaises(InvalidParameterError):
            sim.ScenarioSpec("bad", "rows", roi, rows=sim.RowLayout())
        with self.assertRaises(InvalidParameterError):
            sim.ScenarioSpec("bad", "uniform", roi, objects_per_type={"Z": 3})
        with self.assertRaises(InvalidParameterError):
            sim.ScenarioSpec("bad", "spiral", roi)
        with self.assertRaises(InvalidParameterError):
            sim.Roi(0.0, 0.0, 0.0, 10.0)

    def test_scenario_file(self):
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / "small.json"
            path.write_text(
                json.dumps({
                    "name": "small",
                    "layout": "uniform",
                    "roi": [0, 0, 20, 20],
                    "objects_per_type": {"C": 3},
                }),
                encoding="utf-8",
            )
            truth = sim.gen_scenario(sim.load_scenario_spec(path), 0)
        self.assertEqual(truth.count_by_type(), {"C": 3})

    def test_truth_file(self):
        truth = sim.gen_scenario_b(1)
        with tempfile.TemporaryDirectory() as folder:
            path = Path(folder) / "truth.json"
            sim.write_truth(path, truth)
            result = sim.read_truth(path)
        self.assertEqual(result.to_dict(), truth.to_dict())
        self.assertEqual(result.object_types["D"].radius_normal, 0.95)

    def test_object_types(self):
        self.assertEqual(sim.OBJECT_TYPES["A"].radius_normal, 0.8)
        self.assertEqual(sim.OBJECT_TYPES["D"].radius_strict, 0.45)
        with self.assertRaises(InvalidParameterError):
            sim.ObjectType("X", 0.2, 0.3)


class TestSimulate(FusionTest):
    def test_deterministic(self):
        truth = sim.gen_scenario_a(5)
        a = [d.to_dict() for d in sim.simulate(truth, SENSORS, 5)]
        b = [d.to_dict() for d in sim.simulate(truth, SENSORS, 5)]
        self.assertEqual(a, b)
        c = [d.to_dict() for d in sim.simulate(truth, SENSORS, 6)]
        self.assertNotEqual(a, c)

    def test_detection_contents(self):
        truth = sim.gen_scenario_a(2)
        detections = sim.simulate(truth, SENSORS, 2)
        types = {o.object_id: o.type_name for o in truth.objects}
        sigma2 = {s.name: s.sigma2 for s in SENSORS}
        per_object = Counter()
        for d in detections:
            self.assert_array_equal(d.R, sigma2[d.sensor_id] * np.eye(2))
            self.assertTrue(truth.roi.contains(*d.z) or d.truth.kind is TruthKind.OBJECT)
            if d.truth.kind is TruthKind.OBJECT:
                self.assertFalse(d.sensor_id == "S3" and types[d.truth.object_id] == "A")
                per_object[(d.sensor_id, d.truth.object_id)] += 1
            if d.sensor_id == "S1":
                self.assertIn(d.pi, (0.5, 0.75, 1.0))
        for (sensor_id, _), n in per_object.items():
            if n >= 2:
                self.assertIn(sensor_id, ("S2", "S5"))
        self.assertGreater(sum(1 for d in detections if d.is_clutter), 1000)

    def test_min_count(self):
        truth = sim.gen_scenario_a(0)
        self.assertLess(len(sim.simulate(truth, SENSORS[1:2], 0, min_count=0)), 10000)
        with self.assertRaises(InvalidParameterError):
            sim.simulate(truth, SENSORS, 0, min_count=2)

    def test_expected_counts(self):
        expected_a = sim.expected_detection_count(sim.gen_scenario_a(0), SENSORS)
        self.assertAlmostEqual(expected_a["clutter"], 1361.25, places=6)
        self.assertAlmostEqual(expected_a["total"], 1777.0, delta=15.0)
        expected_b = sim.expected_detection_count(sim.gen_scenario_b(0), SENSORS)
        self.assertGreater(expected_b["total"], 2060.0)
        self.assertLess(expected_b["total"], 2300.0)

    def test_stream_length_envelope(self):
        for gen, low, high in ((sim.gen_scenario_a, 1650.0, 1900.0), (sim.gen_scenario_b, 2050.0, 2310.0)):
            lengths = [len(sim.simulate(gen(seed), SENSORS, seed)) for seed in range(100)]
            logger.info("Mean stream length %s", np.mean(lengths))
            self.assertGreater(np.mean(lengths), low)
            self.assertLess(np.mean(lengths), high)

    def test_clutter_is_uniform(self):
        a_counts = np.zeros((10, 10))
        for seed in range(100):
            truth = sim.gen_scenario_a(seed)
            roi = truth.roi
            a_xy = np.array([d.z for d in sim.simulate(truth, SENSORS, seed) if d.is_clutter])
            counts, _, _ = np.histogram2d(
                a_xy[:, 0], a_xy[:, 1], bins=10, range=[[roi.x_min, roi.x_max], [roi.y_min, roi.y_max]]
            )
            a_counts += counts
        result = stats.chisquare(a_counts.ravel())
        logger.info("Clutter uniformity chi-square %s, p=%s", result.statistic, result.pvalue)
        self.assertGreater(result.pvalue, 0.01)

    def test_scaled_scenario(self):
        truth = sim.scaled_scenario(4000, SENSORS, 0)
        expected = sim.expected_detection_count(truth, SENSORS)["total"]
        self.assertAlmostEqual(expected, 4000.0, delta=400.0)
        self.assertGreater(truth.roi.width, 150.0)
        with self.assertRaises(InvalidParameterError):
            sim.scaled_scenario(0, SENSORS, 0)


if __name__ == "__main__":
    unittest.main()
