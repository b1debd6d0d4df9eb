"""Test cases for pairwise match counting and conditional sets"""

import itertools
import unittest

import numpy as np

from passcan.core import (
    DataMatrix,
    FrequencyScheme,
    RngStream,
    conditional_sets,
    generate_null_dm,
    hybrid_sets,
    pair_index,
    pm_column_fast,
    total_matches,
)
from passcan.exceptions import ValidationError
from tests import example_matrix


class TestPairIndex(unittest.TestCase):
    """Test cases for the lexicographic pair order"""

    def test_order(self):
        """Test pairs run (0,1), (0,2), ..., (R-2,R-1)"""
        first, second = pair_index(4)
        self.assertEqual(list(zip(first.tolist(), second.tolist())),
                         [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])

    def test_read_only(self):
        """Test the cached index cannot be modified"""
        first, _ = pair_index(5)
        with self.assertRaises(ValueError):
            first[0] = 3


class TestTotalMatches(unittest.TestCase):
    """Test cases for total_matches and pm_column_fast"""

    def test_pm_column_fast(self):
        """Test tract-by-tract match indicators of a binary column"""
        matches = pm_column_fast(np.array([1, 0, 0, 1, 0]))
        self.assertEqual(matches.tolist(), [0, 0, 1, 0, 1, 0, 1, 0, 1, 0])

    def test_pm_column_fast_trinary(self):
        """Test equality indicators of a column with more than two markers"""
        matches = pm_column_fast(np.array([2, 0, 2]))
        self.assertEqual(matches.tolist(), [0, 1, 0])

    def test_against_direct_comparison(self):
        """Test totals equal a direct row-by-row comparison"""
        dm = generate_null_dm(25, 7, FrequencyScheme.parse('o135', 'trinary-hw'), RngStream(4))
        summary = total_matches(dm)
        expected = [int((dm.markers[a] == dm.markers[b]).sum())
                    for a, b in itertools.combinations(range(dm.rows), 2)]
        self.assertEqual(summary.total_matches.tolist(), expected)
        self.assertEqual(summary.n_pairs, dm.n_pairs)

    def test_per_column_match_freq(self):
        """Test the fraction of matching pairs per column"""
        summary = total_matches(example_matrix())
        # Column 0 holds three 0s and three 1s: 6 of 15 pairs match
        self.assertAlmostEqual(summary.per_column_match_freq[0], 6 / 15)

    def test_replace_column(self):
        """Test an incremental column change equals recomputing from scratch"""
        dm = example_matrix()
        summary = total_matches(dm)
        new_values = np.array([1, 1, 0, 0, 1, 0])
        updated = summary.replace_column(2, dm.column(2), new_values)
        fresh = total_matches(dm.with_column(2, new_values))
        np.testing.assert_array_equal(updated.total_matches, fresh.total_matches)
        np.testing.assert_allclose(updated.per_column_match_freq, fresh.per_column_match_freq)


class TestConditionalSets(unittest.TestCase):
    """Test cases for conditional sets of the worked example"""

    def setUp(self):
        """Set up test fixtures"""
        self.dm = example_matrix()
        self.summary = total_matches(self.dm)

    def test_per_marker_counts(self):
        """Test state and match-number counts at focal column 0"""
        sets = conditional_sets(self.dm, self.summary, 0, 'per-marker')
        self.assertEqual(sets.state_labels, ('0/0', '1/1', 'mismatch'))
        self.assertEqual(sets.s_counts.tolist(), [3, 3, 9])
        self.assertEqual(sets.m_counts.tolist(), [0, 3, 3, 2, 3, 3, 1, 0, 0])
        self.assertEqual(sets.n_pairs, 15)

    def test_joint_counts(self):
        """Test joint counts pair every focal state with its match numbers"""
        sets = conditional_sets(self.dm, self.summary, 0, 'per-marker')
        self.assertEqual(sets.joint_counts[0].tolist(), [0, 1, 1, 0, 0, 1, 0, 0, 0])
        self.assertEqual(sets.joint_counts[1].tolist(), [0, 1, 1, 0, 0, 1, 0, 0, 0])
        self.assertEqual(sets.joint_counts[2].tolist(), [0, 1, 1, 2, 3, 1, 1, 0, 0])

    def test_collapsed_equals_generic(self):
        """Test pooling per-marker states reproduces the generic sets"""
        per_marker = conditional_sets(self.dm, self.summary, 0, 'per-marker').collapsed()
        generic = conditional_sets(self.dm, self.summary, 0, 'generic')
        np.testing.assert_array_equal(per_marker.joint_counts, generic.joint_counts)
        self.assertEqual(generic.match_distribution().tolist(), [0, 2, 2, 0, 0, 2, 0, 0, 0])

    def test_pairs_mode_labels(self):
        """Test the fully specified states of a binary column"""
        sets = conditional_sets(self.dm, self.summary, 3, 'pairs')
        self.assertEqual(sets.state_labels, ('0/0', '0/1', '1/1'))
        self.assertEqual(sets.match_states, (True, False, True))
        self.assertEqual(sets.n_pairs, 15)

    def test_invalid_arguments(self):
        """Test unknown modes and focal columns are rejected"""
        with self.assertRaises(ValidationError):
            conditional_sets(self.dm, self.summary, 0, 'everything')
        with self.assertRaises(ValidationError):
            conditional_sets(self.dm, self.summary, 9)


class TestHybridSets(unittest.TestCase):
    """Test cases for hybrid sets over two focal columns"""

    def setUp(self):
        """Set up test fixtures"""
        self.dm = example_matrix()
        self.summary = total_matches(self.dm)

    def test_shape_and_total(self):
        """Test joint counts cover every pair once"""
        hybrid = hybrid_sets(self.dm, self.summary, 0, 1, 'MM')
        self.assertEqual(hybrid.joint_counts.shape, (2, 2, 8))
        self.assertEqual(hybrid.n_pairs, 15)
        self.assertEqual(hybrid.s_counts.tolist(), [6, 9])

    def test_fragments_exclude_both_focal_columns(self):
        """Test M_m..E_k fragments equal E's sets on the matrix without S"""
        hybrid = hybrid_sets(self.dm, self.summary, 0, 1, 'ik')
        reduced = self.dm.drop_columns([0])
        sets = conditional_sets(reduced, total_matches(reduced), 0, 'per-marker')
        np.testing.assert_array_equal(hybrid.fragment_counts, sets.joint_counts)

    def test_same_column_rejected(self):
        """Test both focal columns must differ"""
        with self.assertRaises(ValidationError):
            hybrid_sets(self.dm, self.summary, 2, 2)

    def test_trinary_ijkl_states(self):
        """Test the number of fully specified states of a trinary column"""
        dm = DataMatrix(np.array([[0, 0], [1, 2], [0, 1], [1, 2]]), (2, 3))
        hybrid = hybrid_sets(dm, total_matches(dm), 0, 1, 'ijkl')
        self.assertEqual(len(hybrid.e_labels), 6)
        self.assertEqual(hybrid.n_pairs, 6)


if __name__ == '__main__':
    unittest.main()
