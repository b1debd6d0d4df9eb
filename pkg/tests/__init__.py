"""Tests for passcan"""

import numpy as np

# Six rows by nine binary columns, small enough to tally pairwise comparisons by hand
EXAMPLE_ROWS = (
    '010101001',
    '000010110',
    '100011001',
    '101110001',
    '111101110',
    '011000110',
)


def example_markers() -> np.ndarray:
    return np.array([[int(c) for c in row] for row in EXAMPLE_ROWS])


def example_matrix(dv_index=None):
    from passcan.core import DataMatrix
    return DataMatrix(example_markers(), (2,) * 9, dv_index)
