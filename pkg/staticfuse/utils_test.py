#
# License:          This module is released under the terms of the LICENSE file
#                   contained within this applications INSTALL directory

"""
Test case base class with assertions for arrays, dataframes and engine state
"""

# -- Coding Conventions
#    http://www.python.org/dev/peps/pep-0008/   -   Use the Python style guide
# http://sphinx.pocoo.org/rest.html          -   Use Restructured Text for
# docstrings

# -- Public Imports
import logging
import unittest

import numpy as np
import pandas.testing as pdt

from staticfuse.core import Detection, TruthLabel

# -- Globals
logger = logging.getLogger(__name__)

IDENTITY = np.eye(2)


# -- Functions
def logger_info(msg, data):
    # Convenience function for easier log typing
    logger.info(msg + "\n%s", data)


def make_detection(x, y, pi=1.0, R=None, sensor_id="S1", truth=None):
    """Detection with identity covariance unless ``R`` is given."""
    return Detection(sensor_id, (x, y), pi, IDENTITY if R is None else R, truth)


def make_object_detection(object_id, x, y, pi=1.0, R=None, sensor_id="S1"):
    return make_detection(x, y, pi, R, sensor_id, TruthLabel.of_object(object_id))


def random_spd(rng, scale=1.0):
    """Random symmetric positive-definite 2x2 matrix with eigenvalues in [0.1, 1] * scale."""
    a_eig = rng.uniform(0.1, 1.0, size=2) * scale
    angle = rng.uniform(0.0, np.pi)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    m = rot @ np.diag(a_eig) @ rot.T
    return 0.5 * (m + m.T)


# -- Classes
class FusionTest(unittest.TestCase):
    def assert_frame_equal(self, left, right, ignore_index=False, drop_columns=(), **kwargs):
        """
        Checks that 2 dataframes are equal

        :param left:
        :type left: pandas.DataFrame
        :param right:
        :type right: pandas.DataFrame
        :param ignore_index: compare after resetting both indices
        :type ignore_index: bool
        :param drop_columns: columns excluded from the comparison
        :type drop_columns: sequence of str
        """
        le = left.drop(columns=list(drop_columns))
        ri = right.drop(columns=list(drop_columns))
        if ignore_index:
            le = le.reset_index(drop=True)
            ri = ri.reset_index(drop=True)
        pdt.assert_frame_equal(le, ri, **kwargs)

    def assert_array_equal(self, left, right):
        np.testing.assert_array_equal(left, right)

    def assert_array_close(self, left, right, atol=1e-9, rtol=0.0):
        np.testing.assert_allclose(left, right, atol=atol, rtol=rtol)

    def assert_engines_equal(self, left, right):
        """Same potential objects, bit for bit, and the same shared density."""
        self.assertEqual(list(left.potentials), list(right.potentials))
        for pid, p in left.potentials.items():
            q = right.potentials[pid]
            self.assert_array_equal(p.y_info, q.y_info)
            self.assert_array_equal(p.Y_info, q.Y_info)
            self.assert_array_equal(p.center, q.center)
            self.assertEqual(p.w, q.w)
            self.assertEqual(p.l, q.l)
        self.assertEqual(left.density.items(), right.density.items())
        self.assertEqual(left.id_source.next_id, right.id_source.next_id)


# -- Main
