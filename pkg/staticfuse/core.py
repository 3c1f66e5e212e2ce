#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Core domain types shared by the engine, the simulator and the evaluation
code: detections, parameter bundles, potential and estimated objects, the
shared density table and the detection stream format.
"""

# -- Coding Conventions
#    http://www.python.org/dev/peps/pep-0008/   -   Use the Python style guide
# http://sphinx.pocoo.org/rest.html          -   Use Restructured Text for
# docstrings

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

# -- Globals
logger = logging.getLogger(__name__)

# Configuration
DEFAULT_RADIUS = 1.1
DEFAULT_BETA = 6.0
DEFAULT_W_MAX = 10.0
DEFAULT_W_MIN = 4.0
DEFAULT_ALPHA = 0.3
DEFAULT_EPS_ODDS = 1e-9
SYMMETRY_RTOL = 1e-9
CONDITION_THRESHOLD = 1e-12
MAX_ID = 2**64 - 1


# -- Exception classes
class FusionError(Exception):
    """Root of all errors raised by staticfuse."""


class InvalidDetectionError(FusionError, ValueError):
    """A detection violates the confidence or covariance constraints."""


class InvalidParameterError(FusionError, ValueError):
    """A parameter bundle or configuration document is out of range."""


class StreamFormatError(FusionError, ValueError):
    """A line of a detection stream cannot be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnrecoverableStateError(FusionError, ArithmeticError):
    """An information matrix is singular, so no estimate can be recovered."""


class IndexConsistencyError(FusionError, RuntimeError):
    """The spatial index was asked to do something its contents forbid."""


class ContractViolationError(FusionError, RuntimeError):
    """A caller broke a documented precondition."""


class UndefinedMetricError(FusionError, ArithmeticError):
    """A metric has an empty denominator for the given inputs."""


class InsufficientSampleError(FusionError, ValueError):
    """A statistical test has too few usable samples."""


# -- Functions
def as_vector(value, name: str = "vector") -> np.ndarray:
    """
    Convert a 2-element sequence into a finite float vector of shape (2,).

    :param value: sequence with two numbers
    :param name: name used in error messages
    :return: new float64 array
    :raises InvalidDetectionError: wrong shape or non-finite entries
    """
    a = np.array(value, dtype=float)
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise InvalidDetectionError(f"{name} must be a finite 2-vector, got {value!r}")
    return a


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """
    Convert a nested sequence into a finite float matrix of shape (2, 2).

    :raises InvalidDetectionError: wrong shape or non-finite entries
    """
    a = np.array(value, dtype=float)
    if a.shape != (2, 2) or not np.all(np.isfinite(a)):
        raise InvalidDetectionError(f"{name} must be a finite 2x2 matrix, got {value!r}")
    return a


def is_symmetric(m: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(m))))
    return abs(m[0, 1] - m[1, 0]) <= SYMMETRY_RTOL * scale


def is_spd(m: np.ndarray) -> bool:
    """
    True if a 2x2 matrix is symmetric with both eigenvalues strictly positive
    and numerically invertible.

    For a symmetric 2x2 matrix both eigenvalues are positive exactly when
    the determinant and the trace are. The determinant must also exceed
    ``CONDITION_THRESHOLD * ||m||_F^2``, the test the information filter
    applies before inverting.
    """
    if m.shape != (2, 2) or not np.all(np.isfinite(m)) or not is_symmetric(m):
        return False
    a, b = float(m[0, 0]), float(m[0, 1])
    c, d = float(m[1, 0]), float(m[1, 1])
    det = a * d - b * c
    frobenius_sq = a * a + b * b + c * c + d * d
    return det > CONDITION_THRESHOLD * frobenius_sq and a + d > 0.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# -- Classes
class TruthKind(str, Enum):
    OBJECT = "object"
    CLUTTER = "clutter"


@dataclass(frozen=True)
class TruthLabel:
    """
    Ground-truth annotation of a detection. Only the simulator writes it and
    only the evaluation reads it.
    """

    kind: TruthKind
    object_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TruthKind(self.kind))
        if self.kind is TruthKind.OBJECT and self.object_id is None:
            raise InvalidDetectionError("object truth label requires an object id")
        if self.kind is TruthKind.CLUTTER and self.object_id is not None:
            raise InvalidDetectionError("clutter truth label cannot carry an object id")

    @classmethod
    def of_object(cls, object_id: int) -> TruthLabel:
        return cls(TruthKind.OBJECT, int(object_id))

    @classmethod
    def clutter(cls) -> TruthLabel:
        return cls(TruthKind.CLUTTER)

    def to_dict(self) -> dict:
        if self.kind is TruthKind.OBJECT:
            return {"kind": self.kind.value, "id": self.object_id}
        return {"kind": self.kind.value}

    @classmethod
    def from_dict(cls, d: dict) -> TruthLabel:
        kind = TruthKind(d["kind"])
        if kind is TruthKind.OBJECT:
            return cls.of_object(d["id"])
        return cls.clutter()


class Measurement(NamedTuple):
    """The only view of a detection the engine is allowed to read."""

    z: np.ndarray
    pi: float
    R: np.ndarray


@dataclass(frozen=True, eq=False)
class Detection:
    """
    One sensor measurement.

    ``z`` and ``R`` are stored as read-only float arrays. Construction
    validates ``pi`` in [0, 1] and ``R`` symmetric positive-definite, so an
    invalid detection never reaches the engine.
    """

    sensor_id: str
    z: np.ndarray
    pi: float
    R: np.ndarray
    truth: TruthLabel | None = None

    def __post_init__(self):
        z = _frozen(as_vector(self.z, "z"))
        R = _frozen(as_matrix(self.R, "R"))
        pi = float(self.pi)
        if not (0.0 <= pi <= 1.0):
            raise InvalidDetectionError(f"confidence pi must lie in [0, 1], got {self.pi!r}")
        if not is_spd(R):
            raise InvalidDetectionError(f"covariance R must be symmetric positive-definite, got {R.tolist()}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "sensor_id", str(self.sensor_id))

    def measurement(self) -> Measurement:
        return Measurement(self.z, self.pi, self.R)

    @property
    def is_clutter(self) -> bool:
        return self.truth is not None and self.truth.kind is TruthKind.CLUTTER

    def to_dict(self) -> dict:
        d = {
            "sensor": self.sensor_id,
            "x": float(self.z[0]),
            "y": float(self.z[1]),
            "pi": self.pi,
            "rxx": float(self.R[0, 0]),
            "rxy": float(self.R[0, 1]),
            "ryy": float(self.R[1, 1]),
        }
        if self.truth is not None:
            d["truth"] = self.truth.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Detection:
        """
        Build a detection from one stream record. Unknown keys are ignored;
        a missing ``truth`` means unannotated.
        """
        rxy = d["rxy"]
        truth = d.get("truth")
        return cls(
            sensor_id=d["sensor"],
            z=(d["x"], d["y"]),
            pi=d["pi"],
            R=((d["rxx"], rxy), (rxy, d["ryy"])),
            truth=TruthLabel.from_dict(truth) if truth is not None else None,
        )


@dataclass(frozen=True)
class EngineParams:
    """
    Parameters of the clustering engine.

    :param r: clustering radius [m]
    :param beta: steepness of the confidence-to-weight transformation
    :param w_max: weight of a detection with confidence 1
    :param w_min: minimum accumulated weight of a reported object
    :param alpha: intersection factor, threshold on normalised shared density
    :param eps_odds: confidence clamp used only for the stored log-odds
    """

    r: float = DEFAULT_RADIUS
    beta: float = DEFAULT_BETA
    w_max: float = DEFAULT_W_MAX
    w_min: float = DEFAULT_W_MIN
    alpha: float = DEFAULT_ALPHA
    eps_odds: float = DEFAULT_EPS_ODDS

    def __post_init__(self):
        for name in ("r", "beta", "w_max", "w_min", "alpha", "eps_odds"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite, got {value!r}")
        if self.r <= 0:
            raise InvalidParameterError(f"r must be > 0, got {self.r}")
        if self.beta <= 0:
            raise InvalidParameterError(f"beta must be > 0, got {self.beta}")
        if self.w_max <= 0:
            raise InvalidParameterError(f"w_max must be > 0, got {self.w_max}")
        if self.w_min <= 0:
            raise InvalidParameterError(f"w_min must be > 0, got {self.w_min}")
        if not (0 < self.alpha <= 1):
            raise InvalidParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0 < self.eps_odds < 0.5):
            raise InvalidParameterError(f"eps_odds must lie in (0, 0.5), got {self.eps_odds}")

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "beta": self.beta,
            "w_max": self.w_max,
            "w_min": self.w_min,
            "alpha": self.alpha,
            "eps_odds": self.eps_odds,
        }


@dataclass(frozen=True, eq=False)
class PotentialObject:
    """
    A micro-cluster: information-filter state, accumulated weight and the
    log-odds of the detection that created it. ``center`` caches the
    recovered position so neighbourhood checks need no matrix inversion.
    """

    id: int
    y_info: np.ndarray
    Y_info: np.ndarray
    w: float
    l: float
    center: np.ndarray

    def __post_init__(self):
        for name in ("y_info", "Y_info", "center"):
            a = getattr(self, name)
            if a.flags.writeable:
                object.__setattr__(self, name, _frozen(a.copy()))


@dataclass(frozen=True, eq=False)
class EstimatedObject:
    """A confirmed object: persistent id, position, covariance and weight."""

    id: int
    x_hat: np.ndarray
    P_cov: np.ndarray
    w: float

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "x": float(self.x_hat[0]),
            "y": float(self.x_hat[1]),
            "pxx": float(self.P_cov[0, 0]),
            "pxy": float(self.P_cov[0, 1]),
            "pyy": float(self.P_cov[1, 1]),
            "w": self.w,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EstimatedObject:
        pxy = d["pxy"]
        return cls(
            id=int(d["id"]),
            x_hat=np.array([d["x"], d["y"]], dtype=float),
            P_cov=np.array([[d["pxx"], pxy], [pxy, d["pyy"]]], dtype=float),
            w=float(d["w"]),
        )


class IdSource:
    """Monotone counter issuing unsigned 64-bit object identifiers."""

    def __init__(self, next_id: int = 0):
        if not (0 <= next_id <= MAX_ID + 1):
            raise InvalidParameterError(f"next_id out of range: {next_id}")
        self._next = next_id

    @property
    def next_id(self) -> int:
        return self._next

    def new_id(self) -> int:
        if self._next > MAX_ID:
            raise OverflowError("object identifier space exhausted")
        issued = self._next
        self._next += 1
        return issued


class SharedDensityTable:
    """
    Map from unordered id pairs to accumulated co-assignment weight.

    A partner index keeps purging a deleted id proportional to its number
    of entries.
    """

    def __init__(self):
        self._entries: dict[tuple[int, int], float] = {}
        self._partners: dict[int, set[int]] = {}

    @staticmethod
    def key(i: int, j: int) -> tuple[int, int]:
        if i == j:
            raise ContractViolationError(f"shared density needs two distinct ids, got {i} twice")
        return (i, j) if i < j else (j, i)

    def add(self, i: int, j: int, w: float) -> float:
        k = self.key(i, j)
        if k not in self._entries:
            self._entries[k] = 0.0
            self._partners.setdefault(k[0], set()).add(k[1])
            self._partners.setdefault(k[1], set()).add(k[0])
        self._entries[k] += w
        return self._entries[k]

    def get(self, i: int, j: int, default: float = 0.0) -> float:
        return self._entries.get(self.key(i, j), default)

    def partners(self, i: int) -> frozenset[int]:
        return frozenset(self._partners.get(i, ()))

    def purge(self, i: int) -> int:
        """Delete every entry referencing ``i``; return how many were removed."""
        partners = self._partners.pop(i, set())
        for j in partners:
            del self._entries[self.key(i, j)]
            others = self._partners[j]
            others.discard(i)
            if not others:
                del self._partners[j]
        return len(partners)

    def items(self) -> list[tuple[tuple[int, int], float]]:
        """Entries sorted by id pair."""
        return sorted(self._entries.items())

    def copy(self) -> SharedDensityTable:
        other = SharedDensityTable()
        other._entries = dict(self._entries)
        other._partners = {i: set(js) for i, js in self._partners.items()}
        return other

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, pair) -> bool:
        i, j = pair
        return i != j and self.key(i, j) in self._entries


# -- Stream I/O
def iter_detections(path: Path | str) -> Iterator[Detection]:
    """
    Lazily parse a JSONL detection stream. Blank lines are skipped.

    :raises StreamFormatError: on the first malformed line, naming it
    """
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise TypeError("record is not a JSON object")
                yield Detection.from_dict(record)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise StreamFormatError(str(exc), line_number) from exc


def read_detections(path: Path | str) -> list[Detection]:
    detections = list(iter_detections(path))
    logger.info("Read %s detections from %s", len(detections), path)
    return detections


def write_detections(path: Path | str, detections: Iterable[Detection]) -> int:
    """Write detections as one compact JSON object per line; return the count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for d in detections:
            f.write(json.dumps(d.to_dict(), separators=(",", ":")))
            f.write("\n")
            n += 1
    logger.info("Wrote %s detections to %s", n, path)
    return n
