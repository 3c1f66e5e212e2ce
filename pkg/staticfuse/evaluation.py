#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Scoring of estimated objects against ground truth.

An estimate counts as a true positive when it is assigned to a ground-truth
object within that object's detection radius. Two radii exist per object
type: ``normal`` and ``strict``. Assignment is one-to-one and globally
optimal. It maximises the number of gated pairs first and then minimises
their total distance.

Tracking quality over a detection stream is measured with the CLEAR-MOT
protocol, using detection-count checkpoints as frames. Two methods are
compared with a paired Wilcoxon signed-rank test.
"""

# -- Coding Conventions
#    http://www.python.org/dev/peps/pep-0008/   -   Use the Python style guide
# http://sphinx.pocoo.org/rest.html          -   Use Restructured Text for
# docstrings

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from staticfuse.core import (
    ContractViolationError,
    EstimatedObject,
    InsufficientSampleError,
    InvalidParameterError,
    UndefinedMetricError,
)
from staticfuse.sim import ScenarioTruth

# -- Globals
logger = logging.getLogger(__name__)

# Configuration
MIN_WILCOXON_SAMPLES = 10
METRIC_COLUMNS = [
    "run_seed",
    "method",
    "scenario",
    "checkpoint",
    "n_detections",
    "tp",
    "fp",
    "fn",
    "idsw",
    "f1",
    "precision",
    "recall",
    "rmse_normal",
    "rmse_strict",
    "motp",
    "mota",
    "runtime_ms",
]


# -- Classes
class RadiusMode(str, Enum):
    NORMAL = "normal"
    STRICT = "strict"


class MatchedPair(NamedTuple):
    gt_id: int
    estimate_id: int
    distance: float


@dataclass(frozen=True)
class MatchResult:
    """
    One-to-one assignment between ground truth and estimates.

    ``pairs`` are sorted by ground-truth id, ``false_positives`` and
    ``false_negatives`` hold the unmatched estimate and ground-truth ids in
    ascending order.
    """

    pairs: tuple[MatchedPair, ...]
    false_positives: tuple[int, ...]
    false_negatives: tuple[int, ...]
    radius_mode: RadiusMode

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.false_positives)

    @property
    def fn(self) -> int:
        return len(self.false_negatives)

    @property
    def total_distance(self) -> float:
        return math.fsum(p.distance for p in self.pairs)


@dataclass
class CheckpointSeries:
    """Estimates reported after increasing numbers of consumed detections."""

    checkpoints: list[tuple[int, tuple[EstimatedObject, ...]]] = field(default_factory=list)

    def __post_init__(self):
        checkpoints, self.checkpoints = self.checkpoints, []
        for n_detections, estimates in checkpoints:
            self.append(n_detections, estimates)

    def append(self, n_detections: int, estimates: Sequence[EstimatedObject]) -> None:
        if self.checkpoints and n_detections <= self.checkpoints[-1][0]:
            raise ContractViolationError(
                f"checkpoint counts must increase strictly, got {n_detections} "
                f"after {self.checkpoints[-1][0]}"
            )
        self.checkpoints.append((int(n_detections), tuple(estimates)))

    def __len__(self) -> int:
        return len(self.checkpoints)

    def __iter__(self):
        return iter(self.checkpoints)


@dataclass(frozen=True)
class ClearMotFrame:
    """Cumulative CLEAR-MOT counts after one checkpoint."""

    n_detections: int
    matches: int
    distance_sum: float
    misses: int
    false_positives: int
    idsw: int
    n_gt: int

    @property
    def motp(self) -> float:
        if self.matches == 0:
            raise UndefinedMetricError("MOTP is undefined without any match")
        return self.distance_sum / self.matches

    @property
    def mota(self) -> float:
        if self.n_gt == 0:
            raise UndefinedMetricError("MOTA is undefined without ground-truth objects")
        return 1.0 - (self.misses + self.false_positives + self.idsw) / self.n_gt


class WilcoxonResult(NamedTuple):
    statistic: float
    p_value: float
    n: int


# -- Matching
def _radii(objects, object_types: dict, mode: RadiusMode) -> np.ndarray:
    attr = "radius_normal" if mode is RadiusMode.NORMAL else "radius_strict"
    return np.array([getattr(object_types[obj.type_name], attr) for obj in objects], dtype=float)


def _assign(a_dist: np.ndarray, a_radius: np.ndarray) -> list[tuple[int, int]]:
    """
    Maximum-cardinality, then minimum-distance assignment of rows to
    columns where ``a_dist[i, j] <= a_radius[i]``.
    """
    if a_dist.size == 0:
        return []
    a_gated = a_dist <= a_radius[:, None]
    if not a_gated.any():
        return []
    # Any assignment with one more gated pair beats every distance saving
    big_m = 1.0 + float(a_dist[a_gated].sum())
    a_cost = np.where(a_gated, a_dist, big_m)
    rows, cols = linear_sum_assignment(a_cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if a_gated[i, j]]


def _positions(estimates: Sequence[EstimatedObject]) -> np.ndarray:
    if not estimates:
        return np.empty((0, 2))
    return np.array([e.x_hat for e in estimates], dtype=float)


def match(
    estimates: Sequence[EstimatedObject],
    truth: ScenarioTruth,
    mode: RadiusMode | str = RadiusMode.NORMAL,
) -> MatchResult:
    """
    Optimal one-to-one assignment of estimates to ground-truth objects,
    gated by the per-type radius of ``mode``.

    :param estimates: estimated objects
    :param truth: ground truth
    :param mode: radius used for gating
    :return: matched pairs and unmatched ids
    :rtype: MatchResult
    """
    mode = RadiusMode(mode)
    gt = sorted(truth.objects, key=lambda o: o.object_id)
    est = sorted(estimates, key=lambda e: e.id)
    a_gt = np.array([[o.x, o.y] for o in gt], dtype=float).reshape(-1, 2)
    a_dist = cdist(a_gt, _positions(est)) if gt and est else np.empty((len(gt), len(est)))
    a_radius = _radii(gt, truth.object_types, mode)
    assigned = _assign(a_dist, a_radius)
    pairs = tuple(MatchedPair(gt[i].object_id, est[j].id, float(a_dist[i, j])) for i, j in assigned)
    matched_gt = {i for i, _ in assigned}
    matched_est = {j for _, j in assigned}
    return MatchResult(
        pairs=pairs,
        false_positives=tuple(e.id for j, e in enumerate(est) if j not in matched_est),
        false_negatives=tuple(o.object_id for i, o in enumerate(gt) if i not in matched_gt),
        radius_mode=mode,
    )


# -- Scores
def f1(m: MatchResult) -> float:
    """``2 TP / (2 TP + FP + FN)``."""
    denominator = 2 * m.tp + m.fp + m.fn
    if denominator == 0:
        raise UndefinedMetricError("F1 is undefined without estimates and ground truth")
    return 2 * m.tp / denominator


def precision(m: MatchResult) -> float:
    if m.tp + m.fp == 0:
        raise UndefinedMetricError("precision is undefined without estimates")
    return m.tp / (m.tp + m.fp)


def recall(m: MatchResult) -> float:
    if m.tp + m.fn == 0:
        raise UndefinedMetricError("recall is undefined without ground truth")
    return m.tp / (m.tp + m.fn)


def rmse(m: MatchResult) -> float:
    """Root mean squared distance over matched pairs [m]."""
    if not m.pairs:
        raise UndefinedMetricError("RMSE is undefined without matched pairs")
    return math.sqrt(math.fsum(p.distance**2 for p in m.pairs) / len(m.pairs))


def _or_nan(metric, *args) -> float:
    try:
        return metric(*args)
    except UndefinedMetricError as exc:
        logger.warning("Writing NaN: %s", exc)
        return math.nan


# -- CLEAR-MOT
def clear_mot(
    series: CheckpointSeries,
    truth: ScenarioTruth,
    mode: RadiusMode | str = RadiusMode.NORMAL,
) -> list[ClearMotFrame]:
    """
    CLEAR-MOT scores over a checkpoint series, one frame per checkpoint.

    In every frame, ground-truth objects whose last matched estimate id is
    still present and within the gating radius keep that match. The
    remaining objects and estimates are assigned optimally. A ground-truth
    object matched to a different id than in its last match counts as an
    identity switch. Counts accumulate over frames, and every frame
    contributes all ground-truth objects to the normaliser of MOTA.

    :param series: estimates with persistent ids per checkpoint
    :param truth: ground truth, static over the whole series
    :param mode: radius used for gating
    :return: cumulative counts after each checkpoint
    :rtype: list of ClearMotFrame
    """
    mode = RadiusMode(mode)
    gt = sorted(truth.objects, key=lambda o: o.object_id)
    a_gt = np.array([[o.x, o.y] for o in gt], dtype=float).reshape(-1, 2)
    a_radius = _radii(gt, truth.object_types, mode)
    last_match: dict[int, int] = {}
    matches = misses = false_positives = idsw = n_gt = 0
    distance_sum = 0.0
    frames = []
    n_previous = -1
    for n_detections, estimates in series:
        if n_detections <= n_previous:
            raise ContractViolationError("checkpoint counts must increase strictly")
        n_previous = n_detections
        est = sorted(estimates, key=lambda e: e.id)
        column = {e.id: j for j, e in enumerate(est)}
        if len(column) != len(est):
            raise ContractViolationError(f"estimate ids repeat at checkpoint {n_detections}")
        a_dist = cdist(a_gt, _positions(est)) if gt and est else np.empty((len(gt), len(est)))

        pairs: dict[int, int] = {}
        for i in range(len(gt)):
            j = column.get(last_match.get(i, -1))
            if j is not None and a_dist[i, j] <= a_radius[i] and j not in pairs.values():
                pairs[i] = j
        free_rows = [i for i in range(len(gt)) if i not in pairs]
        used = set(pairs.values())
        free_cols = [j for j in range(len(est)) if j not in used]
        sub = _assign(a_dist[np.ix_(free_rows, free_cols)], a_radius[free_rows])
        for r, c in sub:
            i, j = free_rows[r], free_cols[c]
            pairs[i] = j
            if i in last_match and last_match[i] != est[j].id:
                idsw += 1

        for i, j in pairs.items():
            last_match[i] = est[j].id
            distance_sum += float(a_dist[i, j])
        matches += len(pairs)
        misses += len(gt) - len(pairs)
        false_positives += len(est) - len(pairs)
        n_gt += len(gt)
        frames.append(ClearMotFrame(n_detections, matches, distance_sum, misses, false_positives, idsw, n_gt))
    return frames


# -- Significance
def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> WilcoxonResult:
    """
    Two-sided Wilcoxon signed-rank test for paired samples.

    Zero differences are dropped, absolute differences are ranked with
    midranks for ties, and ``W = min(W+, W-)`` is compared with its normal
    approximation using a tie-corrected variance and a continuity
    correction.

    :param x: first sample
    :param y: second sample, paired with ``x``
    :return: statistic ``W``, two-sided p-value and number of non-zero
        differences
    :raises InsufficientSampleError: if fewer than 10 differences are non-zero
    """
    a_x = np.asarray(x, dtype=float)
    a_y = np.asarray(y, dtype=float)
    if a_x.shape != a_y.shape or a_x.ndim != 1:
        raise InvalidParameterError(f"paired samples need equal 1-d shapes, got {a_x.shape} and {a_y.shape}")
    a_diff = a_x - a_y
    if np.isnan(a_diff).any():
        raise InvalidParameterError("paired samples must not contain NaN")
    a_diff = a_diff[a_diff != 0]
    n = len(a_diff)
    if n == 0 and len(a_x) > 0:
        return WilcoxonResult(0.0, 1.0, 0)
    if n < MIN_WILCOXON_SAMPLES:
        raise InsufficientSampleError(
            f"Wilcoxon test needs at least {MIN_WILCOXON_SAMPLES} non-zero differences, got {n}"
        )
    a_rank = stats.rankdata(np.abs(a_diff), method="average")
    w_plus = float(a_rank[a_diff > 0].sum())
    w_minus = float(a_rank[a_diff < 0].sum())
    w = min(w_plus, w_minus)
    mean = n * (n + 1) / 4.0
    _, a_ties = np.unique(np.abs(a_diff), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(a_ties**3 - a_ties)) / 48.0
    deviation = w - mean
    z = (deviation - 0.5 * np.sign(deviation)) / math.sqrt(var)
    p_value = min(1.0, 2.0 * float(stats.norm.sf(abs(z))))
    return WilcoxonResult(w, p_value, n)


# -- Metric tables
def evaluate_checkpoints(
    series: CheckpointSeries,
    truth: ScenarioTruth,
    method: str,
    scenario: str,
    run_seed: int,
    assigns_ids: bool = True,
    runtime_ms: Sequence[float] | None = None,
) -> pd.DataFrame:
    """
    Metric table of a checkpoint series, one row per checkpoint.

    Detection counts and scores use the normal radius. ``idsw``, ``motp``
    and ``mota`` are cumulative CLEAR-MOT values and are NaN for methods
    that do not assign persistent ids. Undefined scores are written as NaN.

    :param runtime_ms: elapsed wall time at each checkpoint
    :return: table with columns :py:data:`METRIC_COLUMNS`
    :rtype: pandas.DataFrame
    """
    if runtime_ms is not None and len(runtime_ms) != len(series):
        raise InvalidParameterError("runtime_ms needs one value per checkpoint")
    frames = clear_mot(series, truth) if assigns_ids else [None] * len(series)
    rows = []
    for k, ((n_detections, estimates), frame) in enumerate(zip(series, frames)):
        m_normal = match(estimates, truth, RadiusMode.NORMAL)
        m_strict = match(estimates, truth, RadiusMode.STRICT)
        rows.append({
            "run_seed": run_seed,
            "method": method,
            "scenario": scenario,
            "checkpoint": k,
            "n_detections": n_detections,
            "tp": m_normal.tp,
            "fp": m_normal.fp,
            "fn": m_normal.fn,
            "idsw": float(frame.idsw) if frame is not None else math.nan,
            "f1": _or_nan(f1, m_normal),
            "precision": _or_nan(precision, m_normal),
            "recall": _or_nan(recall, m_normal),
            "rmse_normal": _or_nan(rmse, m_normal),
            "rmse_strict": _or_nan(rmse, m_strict),
            "motp": _or_nan(lambda f: f.motp, frame) if frame is not None else math.nan,
            "mota": _or_nan(lambda f: f.mota, frame) if frame is not None else math.nan,
            "runtime_ms": runtime_ms[k] if runtime_ms is not None else math.nan,
        })
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)
