#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Monte Carlo generator for ground-truth scenarios and multi-sensor detection
streams.

Each sensor scans the whole region of interest once. For every object type
it can see, it detects an object with a type-specific probability and then
emits a fixed or discrete-normal number of noisy detections, each with a
confidence drawn from the sensor's detection-confidence distribution.
Clutter is Poisson-distributed over the region with its own confidence
distribution. The detections of all sensors are shuffled into one stream.

All randomness comes from :py:func:`make_rng`, which derives independent
counter-based generators from one seed and a tuple of purpose keys.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from staticfuse.core import Detection, InvalidParameterError, TruthLabel

logger = logging.getLogger(__name__)

# Configuration
DATA_PACKAGE = "staticfuse"
DATA_FOLDER = "data"
DEFAULT_SENSORS_FILE = "table1.json"
SCENARIO_FILES = {"A": "scenario_a.json", "B": "scenario_b.json"}
DEFAULT_MIN_COUNT = 1
JITTER_CLIP_SD = 3.0

# Purpose keys for make_rng
KEY_SCENARIO = 0
KEY_SHUFFLE = 1
KEY_SENSOR = 2


# -- Functions
def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Independent Philox generator for ``seed`` and a purpose path ``keys``.

    :param seed: non-negative run seed
    :param keys: non-negative integers naming the consumer of the stream
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise InvalidParameterError(f"seed and keys must be non-negative, got {seed}, {keys}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def sample_pi_s1(rng: np.random.Generator) -> float:
    """Confidence of sensor S1: 0.5 and 0.75 with probability 1/4 each, 1.0 with 1/2."""
    u = rng.random()
    if u < 0.25:
        return 0.5
    if u < 0.5:
        return 0.75
    return 1.0


def sample_beta(a: float, b: float, rng: np.random.Generator) -> float:
    """
    Beta(a, b) variate from two gamma variates, ``x / (x + y)``. NumPy's
    gamma sampler uses the Marsaglia-Tsang method.
    """
    if not (a > 0 and b > 0):
        raise InvalidParameterError(f"beta parameters must be > 0, got a={a}, b={b}")
    x = rng.standard_gamma(a)
    y = rng.standard_gamma(b)
    return float(x / (x + y))


def _load_json(path: Path | str | None, default_name: str) -> dict:
    try:
        if path is None:
            text = resources.files(DATA_PACKAGE).joinpath(DATA_FOLDER, default_name).read_text("utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"invalid JSON in {path or default_name}: {exc}") from exc


# -- Classes
@dataclass(frozen=True)
class ObjectType:
    """Object type with its normal and strict detection radius [m]."""

    name: str
    radius_normal: float
    radius_strict: float

    def __post_init__(self):
        if not (0 < self.radius_strict < self.radius_normal):
            raise InvalidParameterError(
                f"type {self.name}: need 0 < radius_strict < radius_normal, "
                f"got {self.radius_strict}, {self.radius_normal}"
            )


OBJECT_TYPES = {
    "A": ObjectType("A", 0.8, 0.3),
    "B": ObjectType("B", 0.7, 0.2),
    "C": ObjectType("C", 0.75, 0.25),
    "D": ObjectType("D", 0.95, 0.45),
}


@dataclass(frozen=True)
class FixedCount:
    n: int = 1

    @property
    def mean(self) -> float:
        return float(self.n)

    def expected(self, min_count: int = DEFAULT_MIN_COUNT) -> float:
        return float(self.n)

    def sample(self, rng: np.random.Generator, min_count: int = DEFAULT_MIN_COUNT) -> int:
        return self.n


@dataclass(frozen=True)
class DiscreteNormalCount:
    """Gaussian draw rounded to the nearest integer and clamped below at ``min_count``."""

    mean: float
    sd: float

    def sample(self, rng: np.random.Generator, min_count: int = DEFAULT_MIN_COUNT) -> int:
        return max(min_count, math.floor(rng.normal(self.mean, self.sd) + 0.5))

    def expected(self, min_count: int = DEFAULT_MIN_COUNT) -> float:
        """Exact mean of the clamped, rounded distribution."""
        k_max = math.ceil(self.mean + 12 * self.sd)
        a_k = np.arange(min_count + 1, k_max + 1)
        # P(round(X) = k) = P(k - 0.5 <= X < k + 0.5)
        p_k = stats.norm.cdf(a_k + 0.5, self.mean, self.sd) - stats.norm.cdf(a_k - 0.5, self.mean, self.sd)
        p_low = stats.norm.cdf(min_count + 0.5, self.mean, self.sd)
        return float(min_count * p_low + np.sum(a_k * p_k))


@dataclass(frozen=True)
class PmfConfidence:
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not math.isclose(sum(self.probs), 1.0):
            raise InvalidParameterError(f"invalid confidence pmf {self.values} / {self.probs}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.values == (0.5, 0.75, 1.0) and self.probs == (0.25, 0.25, 0.5):
            return sample_pi_s1(rng)
        u = rng.random()
        acc = 0.0
        for value, p in zip(self.values, self.probs):
            acc += p
            if u < acc:
                return float(value)
        return float(self.values[-1])

    @property
    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))


@dataclass(frozen=True)
class BetaConfidence:
    a: float
    b: float

    def sample(self, rng: np.random.Generator) -> float:
        return sample_beta(self.a, self.b, rng)

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


def _count_model_from_dict(d: dict):
    kind = d["kind"]
    if kind == "fixed":
        return FixedCount(int(d.get("n", 1)))
    if kind == "discrete_normal":
        return DiscreteNormalCount(float(d["mean"]), float(d["sd"]))
    raise InvalidParameterError(f"unknown count model {kind!r}")


def _confidence_from_dict(d: dict):
    kind = d["kind"]
    if kind == "pmf":
        return PmfConfidence(tuple(float(v) for v in d["values"]), tuple(float(p) for p in d["probs"]))
    if kind == "beta":
        return BetaConfidence(float(d["a"]), float(d["b"]))
    raise InvalidParameterError(f"unknown confidence model {kind!r}")


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """
    Detection statistics of one simulated sensor.

    :param pd: detection probability per object type; absent types are
        invisible to the sensor
    :param count_model: detections emitted per detected object, per type
    :param sigma2: isotropic position variance [m^2], ``R = sigma2 * I``
    :param clutter_rate: expected clutter detections per square meter
    """

    name: str
    pd: dict
    count_model: dict
    sigma2: float
    conf_det: object
    conf_clutter: object
    clutter_rate: float

    def __post_init__(self):
        if any(not (0.0 <= p <= 1.0) for p in self.pd.values()):
            raise InvalidParameterError(f"sensor {self.name}: detection probabilities must lie in [0, 1]")
        if set(self.pd) != set(self.count_model):
            raise InvalidParameterError(f"sensor {self.name}: every detectable type needs a count model")
        if not self.sigma2 > 0:
            raise InvalidParameterError(f"sensor {self.name}: sigma2 must be > 0")
        if not self.clutter_rate >= 0:
            raise InvalidParameterError(f"sensor {self.name}: clutter_rate must be >= 0")

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma2 * np.eye(2)

    @classmethod
    def from_dict(cls, d: dict) -> SensorSpec:
        try:
            return cls(
                name=str(d["name"]),
                pd={str(t): float(p) for t, p in d["pd"].items()},
                count_model={str(t): _count_model_from_dict(c) for t, c in d["count"].items()},
                sigma2=float(d["sigma2"]),
                conf_det=_confidence_from_dict(d["conf_det"]),
                conf_clutter=_confidence_from_dict(d["conf_clutter"]),
                clutter_rate=float(d["clutter_rate"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParameterError):
                raise
            raise InvalidParameterError(f"invalid sensor specification {d!r}: {exc}") from exc


def load_sensor_specs(path: Path | str | None = None) -> list[SensorSpec]:
    """Load sensor specifications; the shipped five-sensor table by default."""
    doc = _load_json(path, DEFAULT_SENSORS_FILE)
    if "sensors" not in doc:
        raise InvalidParameterError("sensor document needs a 'sensors' list")
    return [SensorSpec.from_dict(d) for d in doc["sensors"]]


@dataclass(frozen=True)
class Roi:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise InvalidParameterError(f"degenerate region of interest {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class RowLayout:
    n_rows: int = 5
    row_spacing: float = 25.0
    per_row: int = 21
    spacing: float = 5.0
    jitter_sd: float = 0.25
    row_type: str = "A"
    companion_type: str | None = "B"
    companion_radius: tuple[float, float] = (0.5, 1.5)


@dataclass(frozen=True)
class ScenarioSpec:
    """
    Scenario description: a ``uniform`` layout places ``objects_per_type``
    objects i.i.d. uniformly over the region; a ``rows`` layout places
    jittered rows of objects, optionally each with a companion object in an
    annulus around it.
    """

    name: str
    layout: str
    roi: Roi
    objects_per_type: dict = field(default_factory=dict)
    rows: RowLayout | None = None

    def __post_init__(self):
        if self.layout == "uniform":
            if not self.objects_per_type or any(n < 0 for n in self.objects_per_type.values()):
                raise InvalidParameterError(f"scenario {self.name}: uniform layout needs object counts")
        elif self.layout == "rows":
            rows = self.rows
            if rows is None:
                raise InvalidParameterError(f"scenario {self.name}: rows layout needs a 'rows' block")
            margin = JITTER_CLIP_SD * rows.jitter_sd + (rows.companion_radius[1] if rows.companion_type else 0.0)
            if (
                rows.spacing * rows.per_row + margin > self.roi.width
                or rows.row_spacing * rows.n_rows + margin > self.roi.height
                or rows.spacing - margin <= 0
                or rows.row_spacing - margin <= 0
            ):
                raise InvalidParameterError(f"scenario {self.name}: rows do not fit the region of interest")
            if not (0 <= rows.companion_radius[0] <= rows.companion_radius[1]):
                raise InvalidParameterError(f"scenario {self.name}: invalid companion radius")
        else:
            raise InvalidParameterError(f"scenario {self.name}: unknown layout {self.layout!r}")
        unknown = {t for t in self.type_names() if t not in OBJECT_TYPES}
        if unknown:
            raise InvalidParameterError(f"scenario {self.name}: unknown object types {sorted(unknown)}")

    def type_names(self) -> list[str]:
        if self.layout == "uniform":
            return sorted(self.objects_per_type)
        names = [self.rows.row_type]
        if self.rows.companion_type:
            names.append(self.rows.companion_type)
        return names

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        try:
            rows = d.get("rows")
            if rows is not None:
                rows = dict(rows)
                if "companion_radius" in rows:
                    rows["companion_radius"] = tuple(float(v) for v in rows["companion_radius"])
                rows = RowLayout(**rows)
            return cls(
                name=str(d["name"]),
                layout=str(d["layout"]),
                roi=Roi(*(float(v) for v in d["roi"])),
                objects_per_type={str(t): int(n) for t, n in d.get("objects_per_type", {}).items()},
                rows=rows,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParameterError):
                raise
            raise InvalidParameterError(f"invalid scenario specification: {exc}") from exc


def load_scenario_spec(scenario: str | Path) -> ScenarioSpec:
    """Load a shipped scenario by name (``"A"``, ``"B"``) or a scenario JSON file."""
    key = str(scenario).upper()
    if key in SCENARIO_FILES:
        return ScenarioSpec.from_dict(_load_json(None, SCENARIO_FILES[key]))
    path = Path(scenario)
    if not path.is_file():
        raise InvalidParameterError(f"unknown scenario {scenario!r}: not a shipped name or an existing file")
    return ScenarioSpec.from_dict(_load_json(path, ""))


@dataclass(frozen=True)
class TruthObject:
    object_id: int
    type_name: str
    x: float
    y: float

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class ScenarioTruth:
    """Ground-truth objects in a region of interest, with the radii of their types."""

    name: str
    roi: Roi
    objects: tuple[TruthObject, ...]
    object_types: dict = field(default_factory=lambda: dict(OBJECT_TYPES))

    def __post_init__(self):
        for obj in self.objects:
            if not self.roi.contains(obj.x, obj.y):
                raise InvalidParameterError(f"object {obj.object_id} lies outside the region of interest")
            if obj.type_name not in self.object_types:
                raise InvalidParameterError(f"object {obj.object_id} has unknown type {obj.type_name!r}")

    def __len__(self) -> int:
        return len(self.objects)

    def by_id(self) -> dict[int, TruthObject]:
        return {obj.object_id: obj for obj in self.objects}

    def count_by_type(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for obj in self.objects:
            counts[obj.type_name] = counts.get(obj.type_name, 0) + 1
        return counts

    def to_dict(self) -> dict:
        return {
            "scenario": self.name,
            "roi": self.roi.as_list(),
            "object_types": {
                name: {"radius_normal": t.radius_normal, "radius_strict": t.radius_strict}
                for name, t in sorted(self.object_types.items())
            },
            "objects": [
                {"id": obj.object_id, "type": obj.type_name, "x": obj.x, "y": obj.y}
                for obj in self.objects
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioTruth:
        try:
            object_types = {
                name: ObjectType(name, float(t["radius_normal"]), float(t["radius_strict"]))
                for name, t in d.get("object_types", {}).items()
            } or dict(OBJECT_TYPES)
            return cls(
                name=str(d.get("scenario", "")),
                roi=Roi(*(float(v) for v in d["roi"])),
                objects=tuple(
                    TruthObject(int(o["id"]), str(o["type"]), float(o["x"]), float(o["y"]))
                    for o in d["objects"]
                ),
                object_types=object_types,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParameterError):
                raise
            raise InvalidParameterError(f"invalid truth document: {exc}") from exc


def write_truth(path: Path | str, truth: ScenarioTruth) -> None:
    Path(path).write_text(json.dumps(truth.to_dict(), indent=1) + "\n", encoding="utf-8")
    logger.info("Wrote %s truth objects to %s", len(truth), path)


def read_truth(path: Path | str) -> ScenarioTruth:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidParameterError(f"invalid JSON in {path}: {exc}") from exc
    return ScenarioTruth.from_dict(doc)


# -- Scenario generation
def _gen_uniform(spec: ScenarioSpec, rng: np.random.Generator) -> list[TruthObject]:
    roi = spec.roi
    objects = []
    for type_name in sorted(spec.objects_per_type):
        n = spec.objects_per_type[type_name]
        a_xy = rng.uniform((roi.x_min, roi.y_min), (roi.x_max, roi.y_max), size=(n, 2))
        for x, y in a_xy:
            objects.append(TruthObject(len(objects), type_name, float(x), float(y)))
    return objects


def _gen_rows(spec: ScenarioSpec, rng: np.random.Generator) -> list[TruthObject]:
    rows = spec.rows
    roi = spec.roi
    n_row_objects = rows.n_rows * rows.per_row
    a_row = np.repeat(np.arange(rows.n_rows), rows.per_row)
    a_index = np.tile(np.arange(rows.per_row), rows.n_rows)
    limit = JITTER_CLIP_SD * rows.jitter_sd
    a_jitter = np.clip(rng.normal(0.0, rows.jitter_sd, size=(n_row_objects, 2)), -limit, limit)
    a_x = roi.x_min + rows.spacing * (a_index + 1) + a_jitter[:, 0]
    a_y = roi.y_min + rows.row_spacing * (a_row + 1) + a_jitter[:, 1]
    objects = [
        TruthObject(k, rows.row_type, float(x), float(y)) for k, (x, y) in enumerate(zip(a_x, a_y))
    ]
    if rows.companion_type:
        r_low, r_high = rows.companion_radius
        # Uniform in area over the annulus
        a_radius = np.sqrt(rng.uniform(r_low**2, r_high**2, size=n_row_objects))
        a_angle = rng.uniform(0.0, 2.0 * np.pi, size=n_row_objects)
        for k in range(n_row_objects):
            objects.append(
                TruthObject(
                    n_row_objects + k,
                    rows.companion_type,
                    float(a_x[k] + a_radius[k] * np.cos(a_angle[k])),
                    float(a_y[k] + a_radius[k] * np.sin(a_angle[k])),
                )
            )
    return objects


def gen_scenario(spec: ScenarioSpec, seed: int) -> ScenarioTruth:
    """
    Draw ground truth for a scenario.

    Object ids are consecutive from 0: uniform layouts in type order, row
    layouts row objects first and the companion of row object ``k`` at
    ``n_row_objects + k``.
    """
    rng = make_rng(seed, KEY_SCENARIO)
    if spec.layout == "uniform":
        objects = _gen_uniform(spec, rng)
    else:
        objects = _gen_rows(spec, rng)
    return ScenarioTruth(spec.name, spec.roi, tuple(objects), dict(OBJECT_TYPES))


def gen_scenario_a(seed: int) -> ScenarioTruth:
    """25 objects of each type A-D, uniformly over a 150 m x 150 m region."""
    return gen_scenario(load_scenario_spec("A"), seed)


def gen_scenario_b(seed: int) -> ScenarioTruth:
    """
    Five rows of 21 type-A objects (25 m between rows, 5 m within rows, mild
    jitter), each with a type-B companion 0.5-1.5 m away.
    """
    return gen_scenario(load_scenario_spec("B"), seed)


def simulate(
    truth: ScenarioTruth,
    sensors: list[SensorSpec],
    seed: int,
    min_count: int = DEFAULT_MIN_COUNT,
) -> list[Detection]:
    """
    Simulate one full scan of the region by every sensor.

    :param truth: ground truth to observe
    :param sensors: sensor statistics
    :param seed: run seed
    :param min_count: lower clamp of discrete-normal detection counts; 1
        makes every detected object emit at least one detection, 0 lets a
        detected object go silent
    :return: shuffled detections of all sensors, annotated with truth
    :rtype: list of Detection
    """
    if min_count not in (0, 1):
        raise InvalidParameterError(f"min_count must be 0 or 1, got {min_count}")
    roi = truth.roi
    detections: list[Detection] = []
    for s_idx, sensor in enumerate(sensors):
        rng = make_rng(seed, KEY_SENSOR, s_idx)
        R = sensor.covariance
        sd = math.sqrt(sensor.sigma2)
        n_true = 0
        for obj in truth.objects:
            pd = sensor.pd.get(obj.type_name)
            if pd is None or rng.random() >= pd:
                continue
            n = sensor.count_model[obj.type_name].sample(rng, min_count)
            label = TruthLabel.of_object(obj.object_id)
            for _ in range(n):
                z = (obj.x + sd * rng.standard_normal(), obj.y + sd * rng.standard_normal())
                detections.append(Detection(sensor.name, z, sensor.conf_det.sample(rng), R, label))
            n_true += n
        n_clutter = int(rng.poisson(sensor.clutter_rate * roi.area))
        a_xy = rng.uniform((roi.x_min, roi.y_min), (roi.x_max, roi.y_max), size=(n_clutter, 2))
        clutter = TruthLabel.clutter()
        for x, y in a_xy:
            detections.append(Detection(sensor.name, (x, y), sensor.conf_clutter.sample(rng), R, clutter))
        logger.debug("Sensor %s: %s object detections, %s clutter", sensor.name, n_true, n_clutter)
    order = make_rng(seed, KEY_SHUFFLE).permutation(len(detections))
    return [detections[k] for k in order]


def expected_detection_count(
    truth: ScenarioTruth, sensors: list[SensorSpec], min_count: int = DEFAULT_MIN_COUNT
) -> dict[str, float]:
    """
    Analytic expectation of the stream composition.

    :return: dict with keys ``object``, ``clutter`` and ``total``
    """
    counts = truth.count_by_type()
    n_object = 0.0
    n_clutter = 0.0
    for sensor in sensors:
        for type_name, pd in sensor.pd.items():
            n_object += counts.get(type_name, 0) * pd * sensor.count_model[type_name].expected(min_count)
        n_clutter += sensor.clutter_rate * truth.roi.area
    return {"object": n_object, "clutter": n_clutter, "total": n_object + n_clutter}


def scaled_scenario(n_detections: int, sensors: list[SensorSpec], seed: int) -> ScenarioTruth:
    """
    Scenario with the object and clutter density of scenario A, scaled so
    that the expected stream length is about ``n_detections``.
    """
    if n_detections <= 0:
        raise InvalidParameterError(f"n_detections must be > 0, got {n_detections}")
    base = load_scenario_spec("A")
    base_truth = ScenarioTruth(
        base.name,
        base.roi,
        tuple(
            TruthObject(k, t, base.roi.x_min, base.roi.y_min)
            for k, t in enumerate(t for t, n in sorted(base.objects_per_type.items()) for _ in range(n))
        ),
    )
    factor = n_detections / expected_detection_count(base_truth, sensors)["total"]
    side = math.sqrt(factor)
    spec = ScenarioSpec(
        name=f"scaled-{n_detections}",
        layout="uniform",
        roi=Roi(0.0, 0.0, base.roi.width * side, base.roi.height * side),
        objects_per_type={t: max(1, round(n * factor)) for t, n in base.objects_per_type.items()},
    )
    return gen_scenario(spec, seed)
