#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Online clustering engine that associates a stream of heterogeneous sensor
detections with static objects.

Each detection either seeds a new potential object (micro-cluster) or is
absorbed by every potential object whose center lies within the clustering
radius. Absorption is an information-filter update weighted by the
detection confidence. Detections falling between several potential objects
accumulate shared density, and reclustering fuses potential objects whose
normalised shared density exceeds the intersection factor. Potential
objects whose weight reaches ``w_min`` are reported as estimated objects.

A simplified density-stream baseline is available through
:py:attr:`Mode.BASELINE`: every detection weighs 1 regardless of its
confidence, and positions are plain cluster means.
"""

# -- Coding Conventions
#    http://www.python.org/dev/peps/pep-0008/   -   Use the Python style guide
# http://sphinx.pocoo.org/rest.html          -   Use Restructured Text for
# docstrings

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Sequence
from enum import Enum

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from staticfuse import infofilter
from staticfuse.core import (
    DEFAULT_BETA,
    DEFAULT_W_MAX,
    Detection,
    EngineParams,
    EstimatedObject,
    IdSource,
    InvalidDetectionError,
    InvalidParameterError,
    PotentialObject,
    SharedDensityTable,
    UnrecoverableStateError,
)
from staticfuse.infofilter import InfoState, MeasurementContribution
from staticfuse.spatial import RadiusIndex

# -- Globals
logger = logging.getLogger(__name__)

# Configuration
STATE_FORMAT_VERSION = 1
DEFAULT_CURVE_BETAS = (3.0, 6.0, 9.0)
DEFAULT_CURVE_POINTS = 101

_IDENTITY = np.eye(2)
_IDENTITY.setflags(write=False)


# -- Classes
class Mode(str, Enum):
    """Engine flavour; the values double as command-line method names."""

    CONFIDENCE = "soda-citron"
    BASELINE = "dbstream-baseline"

    @property
    def assigns_ids(self) -> bool:
        # Only the confidence-weighted engine is scored as a tracker
        return self is Mode.CONFIDENCE


class SurvivorPolicy(str, Enum):
    """Which member id a fused component keeps."""

    OLDEST = "oldest"
    NEWEST = "newest"


# -- Functions
def confidence_weight(pi: float, beta: float = DEFAULT_BETA, w_max: float = DEFAULT_W_MAX) -> float:
    """
    Map a detection confidence to a detection weight:

    .. math::

        f(\\pi) = \\frac{e^{\\beta \\pi} - 1}{e^{\\beta} - 1} w_{max}

    The transformation is convex and strictly increasing, with ``f(0) = 0``
    and ``f(1) = w_max``, so low-confidence detections are strongly
    down-weighted while a single confident detection can reach ``w_max``.

    :param pi: detection confidence in [0, 1]
    :type pi: float
    :param beta: steepness factor, > 0
    :type beta: float
    :param w_max: weight of a detection with confidence 1
    :type w_max: float
    :return: detection weight in [0, w_max]
    :rtype: float
    """
    if not (0.0 <= pi <= 1.0):
        raise InvalidDetectionError(f"confidence pi must lie in [0, 1], got {pi!r}")
    if not beta > 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta!r}")
    return math.expm1(beta * pi) / math.expm1(beta) * w_max


def log_odds(pi: float, eps: float) -> float:
    """Log-odds of a confidence clamped to ``[eps, 1 - eps]``."""
    p = min(max(pi, eps), 1.0 - eps)
    return math.log(p / (1.0 - p))


def confidence_curve(
    betas: Sequence[float] = DEFAULT_CURVE_BETAS,
    w_max: float = DEFAULT_W_MAX,
    n_points: int = DEFAULT_CURVE_POINTS,
) -> pd.DataFrame:
    """
    Sample the confidence-to-weight transformation on an even grid over
    [0, 1] for several steepness factors.

    :return: long table with columns ``beta``, ``pi``, ``weight``
    :rtype: pandas.DataFrame
    """
    if n_points < 2:
        raise InvalidParameterError(f"n_points must be >= 2, got {n_points}")
    a_pi = np.linspace(0.0, 1.0, n_points)
    l_df = [
        pd.DataFrame({
            "beta": float(beta),
            "pi": a_pi,
            "weight": [confidence_weight(float(pi), beta, w_max) for pi in a_pi],
        })
        for beta in betas
    ]
    return pd.concat(l_df, ignore_index=True)


def _state_of(p: PotentialObject) -> InfoState:
    return InfoState(p.y_info, p.Y_info)


def _make_potential(id_: int, y_info: np.ndarray, Y_info: np.ndarray, w: float, l: float) -> PotentialObject:
    center = infofilter.recover(InfoState(y_info, Y_info)).x_hat
    return PotentialObject(id=id_, y_info=y_info, Y_info=Y_info, w=float(w), l=float(l), center=center)


class Engine:
    """
    Stateful clustering engine. Updates must be applied sequentially; use
    :py:meth:`clone` to take an independent snapshot for reading or for a
    non-destructive :py:meth:`recluster`.

    :param params: engine parameters, defaults when omitted
    :type params: EngineParams
    :param mode: confidence-weighted engine or unit-weight baseline
    :type mode: Mode or str
    :param survivor: id kept by a fused component; ``OLDEST`` keeps the
        smallest member id, ``NEWEST`` reproduces a literal reading of the
        fusion loop where the largest id absorbs the others
    :type survivor: SurvivorPolicy or str
    """

    def __init__(
        self,
        params: EngineParams | None = None,
        mode: Mode | str = Mode.CONFIDENCE,
        survivor: SurvivorPolicy | str = SurvivorPolicy.OLDEST,
    ):
        self.params = params if params is not None else EngineParams()
        self.mode = Mode(mode)
        self.survivor = SurvivorPolicy(survivor)
        # Insertion order is ascending id order: ids are issued monotonically
        # and deletions never reinsert.
        self.potentials: dict[int, PotentialObject] = {}
        self.density = SharedDensityTable()
        self.index = RadiusIndex(self.params.r)
        self.id_source = IdSource()
        self.n_updates = 0

    def __repr__(self):
        return (
            f"Engine(mode={self.mode.value}, potentials={len(self.potentials)}, "
            f"density_entries={len(self.density)}, updates={self.n_updates})"
        )

    # -- Accessors
    @property
    def n_potentials(self) -> int:
        return len(self.potentials)

    def total_weight(self) -> float:
        return math.fsum(p.w for p in self.potentials.values())

    def new_id(self) -> int:
        return self.id_source.new_id()

    def detection_weight(self, pi: float) -> float:
        if self.mode is Mode.BASELINE:
            return 1.0
        return confidence_weight(pi, self.params.beta, self.params.w_max)

    def _contribution(self, z: np.ndarray, R: np.ndarray) -> MeasurementContribution:
        # With unit measurement covariance the information state holds the
        # sum of absorbed positions and their count, so the recovered center
        # is the running mean x <- (w x + z) / (w + 1).
        if self.mode is Mode.BASELINE:
            return infofilter.contribution(z, _IDENTITY)
        return infofilter.contribution(z, R)

    # -- Update
    def update(self, detection: Detection) -> list[int]:
        """
        Process one detection.

        1. Find the potential objects whose center lies strictly within
           ``r`` of the measured position.
        2. Without neighbours, seed a new potential object from the
           detection alone.
        3. Otherwise add the detection's information contribution and weight
           to every neighbour, and add the weight to the shared density of
           every neighbour pair.
        4. Any neighbour pair whose updated centers are closer than ``r``
           is restored to its state before this detection. Shared density
           increments are kept.

        :param detection: validated detection; only position, confidence and
            covariance are read
        :type detection: Detection
        :return: ids the detection was assigned to, ascending
        :rtype: list of int
        """
        if not isinstance(detection, Detection):
            raise TypeError(f"expected a Detection, got {type(detection).__name__}")
        z, pi, R = detection.measurement()
        w = self.detection_weight(pi)
        c = self._contribution(z, R)
        neighbours = self.index.query_within(z, self.params.r)
        self.n_updates += 1

        if not neighbours:
            pid = self.new_id()
            p = _make_potential(pid, c.dy, c.dY, w, log_odds(pi, self.params.eps_odds))
            self.potentials[pid] = p
            self.index.insert(pid, p.center)
            return [pid]

        snapshots = {i: self.potentials[i] for i in neighbours}
        for i in neighbours:
            p = snapshots[i]
            self.potentials[i] = _make_potential(i, p.y_info + c.dy, p.Y_info + c.dY, p.w + w, p.l)
        for a, i in enumerate(neighbours):
            for j in neighbours[a + 1 :]:
                self.density.add(i, j, w)

        restored = self._collapsed_members(neighbours)
        for i in restored:
            self.potentials[i] = snapshots[i]
        for i in neighbours:
            if i not in restored:
                self.index.relocate(i, snapshots[i].center, self.potentials[i].center)
        if restored:
            logger.debug("Collapse prevention restored potentials %s", sorted(restored))
        return neighbours

    def _collapsed_members(self, neighbours: list[int]) -> set[int]:
        # Members of every pair whose updated centers are closer than r
        r = self.params.r
        members = set()
        for a, i in enumerate(neighbours):
            ci = self.potentials[i].center
            for j in neighbours[a + 1 :]:
                cj = self.potentials[j].center
                if math.hypot(ci[0] - cj[0], ci[1] - cj[1]) < r:
                    members.add(i)
                    members.add(j)
        return members

    def update_many(self, detections: Iterable[Detection]) -> int:
        n = 0
        for d in detections:
            self.update(d)
            n += 1
        return n

    # -- Reclustering
    def adjacency(self) -> list[tuple[int, int, float]]:
        """
        Weighted adjacency list: for each shared density entry between two
        potential objects that both weigh at least ``w_min``, the density
        normalised by their mean weight.
        """
        w_min = self.params.w_min
        edges = []
        for (i, j), d in self.density.items():
            wi = self.potentials[i].w
            wj = self.potentials[j].w
            if wi >= w_min and wj >= w_min:
                edges.append((i, j, d / ((wi + wj) / 2.0)))
        return edges

    def connected_groups(self) -> list[list[int]]:
        """
        Components of the graph whose edges are adjacency values
        ``>= alpha``. Isolated potentials are omitted; each group is sorted
        and groups are ordered by their smallest id.
        """
        edges = [(i, j) for i, j, v in self.adjacency() if v >= self.params.alpha]
        if not edges:
            return []
        nodes = sorted({k for edge in edges for k in edge})
        position = {k: n for n, k in enumerate(nodes)}
        rows = [position[i] for i, _ in edges]
        cols = [position[j] for _, j in edges]
        graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(len(nodes), len(nodes)))
        _, labels = connected_components(graph, directed=False)
        groups: dict[int, list[int]] = {}
        for k, label in zip(nodes, labels):
            groups.setdefault(int(label), []).append(k)
        return sorted(groups.values(), key=lambda g: g[0])

    def _fuse(self, members: list[int]) -> int:
        survivor = members[0] if self.survivor is SurvivorPolicy.OLDEST else members[-1]
        y_info = self.potentials[members[0]].y_info
        Y_info = self.potentials[members[0]].Y_info
        w = self.potentials[members[0]].w
        for m in members[1:]:
            p = self.potentials[m]
            y_info = y_info + p.y_info
            Y_info = Y_info + p.Y_info
            w = w + p.w
        for m in members:
            if m == survivor:
                continue
            p = self.potentials.pop(m)
            self.density.purge(m)
            self.index.remove(m, p.center)
        old = self.potentials[survivor]
        fused = _make_potential(survivor, y_info, Y_info, w, old.l)
        self.potentials[survivor] = fused
        self.index.relocate(survivor, old.center, fused.center)
        return survivor

    def recluster(self) -> list[EstimatedObject]:
        """
        Fuse connected potential objects and report the confirmed ones.

        Every connected component is merged into a single survivor holding
        the summed information state and weight; the other members are
        deleted together with their shared density entries. The method
        mutates the engine, so repeated calls without new detections return
        the same objects. Use :py:meth:`clone` first for a non-destructive
        reading.

        :return: estimated objects with weight ``>= w_min``, ascending id
        :rtype: list of EstimatedObject
        """
        groups = self.connected_groups()
        n_deleted = 0
        for members in groups:
            self._fuse(members)
            n_deleted += len(members) - 1
        logger.debug(
            "Reclustered %s components, deleted %s fused potentials, %s potentials remain",
            len(groups),
            n_deleted,
            len(self.potentials),
        )
        return self.estimates()

    def estimates(self) -> list[EstimatedObject]:
        """Potential objects that currently reach ``w_min``, without reclustering."""
        w_min = self.params.w_min
        return [self._estimate(p) for p in self.potentials.values() if p.w >= w_min]

    def _estimate(self, p: PotentialObject) -> EstimatedObject:
        try:
            P_cov = infofilter.recover(_state_of(p)).P_cov
        except UnrecoverableStateError as exc:
            raise UnrecoverableStateError(f"potential object {p.id} has no recoverable state") from exc
        if self.mode is Mode.BASELINE:
            # Cluster means carry no covariance; report a placeholder
            P_cov = _IDENTITY.copy()
        return EstimatedObject(id=p.id, x_hat=p.center.copy(), P_cov=P_cov, w=p.w)

    # -- Snapshots and export
    def clone(self) -> Engine:
        """Independent copy; potential objects are immutable and shared."""
        other = Engine(self.params, self.mode, self.survivor)
        other.potentials = dict(self.potentials)
        other.density = self.density.copy()
        other.index = self.index.copy()
        other.id_source = IdSource(self.id_source.next_id)
        other.n_updates = self.n_updates
        return other

    def to_dict(self) -> dict:
        return {
            "format": STATE_FORMAT_VERSION,
            "mode": self.mode.value,
            "survivor": self.survivor.value,
            "params": self.params.to_dict(),
            "next_id": self.id_source.next_id,
            "n_updates": self.n_updates,
            "potentials": [
                {
                    "id": p.id,
                    "y": p.y_info.tolist(),
                    "Y": p.Y_info.tolist(),
                    "w": p.w,
                    "l": p.l,
                }
                for p in self.potentials.values()
            ],
            "density": [[i, j, d] for (i, j), d in self.density.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Engine:
        """
        Rebuild an engine from :py:meth:`to_dict` output. Centers are
        recovered from the information states, so they match the exporting
        engine bit for bit.
        """
        if d.get("format") != STATE_FORMAT_VERSION:
            raise InvalidParameterError(f"unsupported engine state format {d.get('format')!r}")
        engine = cls(EngineParams(**d["params"]), d["mode"], d["survivor"])
        engine.id_source = IdSource(int(d["next_id"]))
        engine.n_updates = int(d["n_updates"])
        for record in sorted(d["potentials"], key=lambda r: r["id"]):
            pid = int(record["id"])
            if pid >= engine.id_source.next_id:
                raise InvalidParameterError(f"potential id {pid} was never issued")
            p = _make_potential(
                pid,
                np.array(record["y"], dtype=float),
                np.array(record["Y"], dtype=float),
                record["w"],
                record["l"],
            )
            engine.potentials[pid] = p
            engine.index.insert(pid, p.center)
        for i, j, value in d["density"]:
            if i not in engine.potentials or j not in engine.potentials:
                raise InvalidParameterError(f"density entry ({i}, {j}) references an unknown id")
            engine.density.add(int(i), int(j), float(value))
        return engine

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> Engine:
        return cls.from_dict(json.loads(text))
