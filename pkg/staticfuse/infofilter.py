#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Information-form state estimation for static planar objects.

The filter keeps the information matrix ``Y = P^-1`` and the information
vector ``y = P^-1 x``. Static targets need no prediction step, so every
measurement update and every track-to-track fusion is a plain sum, which
makes the state independent of the order in which contributions arrive.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from staticfuse.core import (
    CONDITION_THRESHOLD,
    InvalidDetectionError,
    UnrecoverableStateError,
    as_matrix,
    as_vector,
    is_spd,
)

logger = logging.getLogger(__name__)

# Configuration
INVERTIBILITY_THRESHOLD = CONDITION_THRESHOLD


def inverse_2x2(m: np.ndarray, threshold: float = INVERTIBILITY_THRESHOLD) -> np.ndarray:
    """
    Invert a 2x2 matrix through its adjugate.

    The matrix counts as invertible when ``|det| > threshold * ||m||_F^2``,
    a scale-free test that rejects numerically singular matrices.

    :param m: matrix with shape (2, 2)
    :param threshold: relative determinant threshold
    :return: the inverse
    :raises UnrecoverableStateError: if the matrix is (near-)singular
    """
    a, b = float(m[0, 0]), float(m[0, 1])
    c, d = float(m[1, 0]), float(m[1, 1])
    det = a * d - b * c
    frobenius_sq = a * a + b * b + c * c + d * d
    if not abs(det) > threshold * frobenius_sq:
        raise UnrecoverableStateError(
            f"matrix is singular or ill-conditioned (det={det!r}, |m|_F^2={frobenius_sq!r})"
        )
    return np.array([[d, -b], [-c, a]]) / det


@dataclass(frozen=True, eq=False)
class InfoState:
    """Information vector ``y_info`` and information matrix ``Y_info``."""

    y_info: np.ndarray
    Y_info: np.ndarray

    @classmethod
    def zero(cls) -> InfoState:
        return cls(np.zeros(2), np.zeros((2, 2)))

    @property
    def is_recoverable(self) -> bool:
        try:
            inverse_2x2(self.Y_info)
        except UnrecoverableStateError:
            return False
        return True


@dataclass(frozen=True, eq=False)
class MeasurementContribution:
    """Additive contribution ``dy = H^T R^-1 z``, ``dY = H^T R^-1 H`` of one measurement."""

    dy: np.ndarray
    dY: np.ndarray


class Estimate(NamedTuple):
    x_hat: np.ndarray
    P_cov: np.ndarray


def contribution(z, R, H=None) -> MeasurementContribution:
    """
    Information contribution of a measurement ``z`` with covariance ``R``.

    :param z: measured position, 2-vector
    :param R: measurement covariance, symmetric positive-definite 2x2
    :param H: measurement matrix, identity when omitted
    :return: the measurement contribution
    :raises InvalidDetectionError: if R is not SPD or the inputs are malformed
    """
    z = as_vector(z, "z")
    R = as_matrix(R, "R")
    if not is_spd(R):
        raise InvalidDetectionError(f"covariance R must be symmetric positive-definite, got {R.tolist()}")
    try:
        R_inv = inverse_2x2(R)
    except UnrecoverableStateError as exc:
        raise InvalidDetectionError(f"covariance R is numerically singular: {R.tolist()}") from exc
    if H is None:
        return MeasurementContribution(R_inv @ z, R_inv)
    H = as_matrix(H, "H")
    dY = H.T @ R_inv @ H
    return MeasurementContribution(H.T @ R_inv @ z, 0.5 * (dY + dY.T))


def update(s: InfoState, c: MeasurementContribution) -> InfoState:
    return InfoState(s.y_info + c.dy, s.Y_info + c.dY)


def fuse(a: InfoState, b: InfoState) -> InfoState:
    """Track-to-track fusion of two independent information states."""
    return InfoState(a.y_info + b.y_info, a.Y_info + b.Y_info)


def fuse_all(states: Iterable[InfoState]) -> InfoState:
    result = InfoState.zero()
    for s in states:
        result = fuse(result, s)
    return result


def recover(s: InfoState) -> Estimate:
    """
    Recover position estimate and covariance: ``P = Y^-1``, ``x = P y``.

    :raises UnrecoverableStateError: if ``Y_info`` is singular
    """
    P = inverse_2x2(s.Y_info)
    return Estimate(P @ s.y_info, P)


def from_measurements(zs, Rs, H=None) -> InfoState:
    """Accumulate a batch of measurements, starting from the zero state."""
    state = InfoState.zero()
    for z, R in zip(zs, Rs, strict=True):
        state = update(state, contribution(z, R, H))
    return state
