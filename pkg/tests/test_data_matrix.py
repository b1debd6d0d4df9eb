"""Test cases for data matrices, frequency schemes and seeded streams"""

import os
import tempfile
import unittest

import numpy as np

from passcan.core import (
    DataMatrix,
    FrequencyScheme,
    RngStream,
    as_generator,
    balanced_dv,
    column_ids_for,
    generate_null_dm,
    load_dm,
    multinomial_counts,
    null_column,
)
from passcan.exceptions import ValidationError


class TestRngStream(unittest.TestCase):
    """Test cases for RngStream"""

    def test_same_path_same_draws(self):
        """Test a (seed, path) pair always yields the same sequence"""
        a = RngStream(11, (2, 3)).generator().random(5)
        b = RngStream(11).child(2).child(3).generator().random(5)
        np.testing.assert_array_equal(a, b)

    def test_sibling_streams_differ(self):
        """Test sibling streams give different draws"""
        root = RngStream(11)
        self.assertFalse(np.array_equal(root.child(0).generator().random(5),
                                        root.child(1).generator().random(5)))

    def test_invalid_seed(self):
        """Test negative seeds and path entries are rejected"""
        with self.assertRaises(ValidationError):
            RngStream(-1)
        with self.assertRaises(ValidationError):
            RngStream(1, (-2,))

    def test_as_generator(self):
        """Test generators pass through and streams are converted"""
        gen = np.random.default_rng(0)
        self.assertIs(as_generator(gen), gen)
        self.assertIsInstance(as_generator(RngStream(3)), np.random.Generator)
        with self.assertRaises(ValidationError):
            as_generator(42)

    def test_from_entropy(self):
        """Test entropy-seeded streams carry a valid 64-bit seed"""
        stream = RngStream.from_entropy()
        self.assertTrue(0 <= stream.seed < 2 ** 64)


class TestFrequencyScheme(unittest.TestCase):
    """Test cases for FrequencyScheme"""

    def test_parse_written_forms(self):
        """Test punctuation in written schemes is ignored"""
        self.assertEqual(FrequencyScheme.parse('o12345').digits, (1, 2, 3, 4, 5))
        self.assertEqual(FrequencyScheme.parse('o1524,1234').digits, (1, 5, 2, 4, 1, 2, 3, 4))
        self.assertEqual(FrequencyScheme.parse('15241(23451)').digits,
                         (1, 5, 2, 4, 1, 2, 3, 4, 5, 1))

    def test_cycling_frequencies(self):
        """Test minor frequencies cycle over columns"""
        scheme = FrequencyScheme.parse('o12')
        self.assertAlmostEqual(scheme.minor_frequency(0), 0.1)
        self.assertAlmostEqual(scheme.minor_frequency(3), 0.2)
        np.testing.assert_allclose(scheme.column_frequencies(2), [0.1, 0.9])

    def test_hardy_weinberg_frequencies(self):
        """Test trinary-hw columns use p^2, 2pq, q^2"""
        scheme = FrequencyScheme.parse('o2', 'trinary-hw')
        self.assertEqual(scheme.arity, 3)
        np.testing.assert_allclose(scheme.column_frequencies(0), [0.04, 0.32, 0.64])
        self.assertEqual(str(scheme), 'o2-hw')

    def test_invalid_digits(self):
        """Test digits outside 1..5 are rejected"""
        with self.assertRaises(ValidationError):
            FrequencyScheme.parse('o16')
        with self.assertRaises(ValidationError):
            FrequencyScheme.parse('o')


class TestDataMatrix(unittest.TestCase):
    """Test cases for DataMatrix"""

    def setUp(self):
        """Set up test fixtures"""
        self.markers = np.array([[0, 1, 2], [1, 0, 0], [0, 1, 1], [1, 1, 0]])
        self.dm = DataMatrix(self.markers, (2, 2, 3))

    def test_shape_and_pairs(self):
        """Test rows, columns and pair count"""
        self.assertEqual(self.dm.rows, 4)
        self.assertEqual(self.dm.cols, 3)
        self.assertEqual(self.dm.n_pairs, 6)
        self.assertEqual(self.dm.column_ids, ('C1', 'C2', 'C3'))

    def test_markers_are_read_only(self):
        """Test the marker array cannot be modified in place"""
        with self.assertRaises(ValueError):
            self.dm.markers[0, 0] = 1

    def test_rejects_single_row(self):
        """Test a matrix needs two rows"""
        with self.assertRaises(ValidationError):
            DataMatrix(np.array([[0, 1]]), (2, 2))

    def test_rejects_marker_beyond_arity(self):
        """Test markers must lie below the column arity"""
        with self.assertRaises(ValidationError):
            DataMatrix(self.markers, (2, 2, 2))

    def test_dv_must_be_binary(self):
        """Test the DV must hold exactly the markers 0 and 1"""
        with self.assertRaises(ValidationError):
            DataMatrix(self.markers, (2, 2, 3), dv_index=2)
        with self.assertRaises(ValidationError):
            DataMatrix(np.array([[0, 1], [0, 0]]), (2, 2), dv_index=0)
        dm = DataMatrix(self.markers, (2, 2, 3), dv_index=0)
        self.assertEqual(dm.iv_indices, (1, 2))

    def test_column_index(self):
        """Test columns resolve by id or index"""
        self.assertEqual(self.dm.column_index('C2'), 1)
        self.assertEqual(self.dm.column_index('2'), 2)
        self.assertEqual(self.dm.column_index(0), 0)
        with self.assertRaises(ValidationError):
            self.dm.column_index('X')
        with self.assertRaises(ValidationError):
            self.dm.column_index(5)

    def test_with_dv_and_drop(self):
        """Test prepending a DV and dropping columns keeps the DV designation"""
        dm = self.dm.with_dv(np.array([0, 0, 1, 1]))
        self.assertEqual(dm.dv_index, 0)
        self.assertEqual(dm.column_ids[0], 'DV')
        dropped = dm.drop_columns([1])
        self.assertEqual(dropped.dv_index, 0)
        self.assertEqual(dropped.column_ids, ('DV', 'C2', 'C3'))

    def test_hstack_row_mismatch(self):
        """Test lateral joins need equal row counts"""
        other = DataMatrix(np.array([[0], [1]]), (2,))
        with self.assertRaises(ValidationError):
            self.dm.hstack(other)

    def test_marker_counts(self):
        """Test per-column marker counts"""
        np.testing.assert_array_equal(self.dm.marker_counts(2), [2, 1, 1])


class TestLoadDm(unittest.TestCase):
    """Test cases for reading matrices from TSV"""

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = tempfile.mkdtemp()

    def _write(self, text):
        path = os.path.join(self.temp_dir, 'dm.tsv')
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write(text)
        return path

    def test_header_and_dv(self):
        """Test a header row gives column ids and the DV resolves by id"""
        path = self._write('DV\tA\tB\n0\t1\t2\n1\t0\t1\n0\t0\t0\n')
        dm = load_dm(path, 'DV')
        self.assertEqual(dm.column_ids, ('DV', 'A', 'B'))
        self.assertEqual(dm.dv_index, 0)
        self.assertEqual(dm.arities, (2, 2, 3))

    def test_headerless(self):
        """Test headerless files get default ids"""
        dm = load_dm(self._write('0\t1\n1\t1\n'))
        self.assertEqual(dm.column_ids, ('C1', 'C2'))

    def test_ragged_rows(self):
        """Test ragged rows are rejected"""
        with self.assertRaises(ValidationError):
            load_dm(self._write('0\t1\n1\n0\t0\n'))

    def test_non_integer_cell(self):
        """Test non-integer cells are rejected"""
        with self.assertRaises(ValidationError):
            load_dm(self._write('0\t1\n1\tx\n0\t0\n'))

    def test_non_ascii_digit_cell(self):
        """Test superscript digits are rejected as non-integer cells"""
        with self.assertRaises(ValidationError):
            load_dm(self._write('0\t1\n1\t²\n0\t0\n'))

    def test_dv_recoded_to_binary(self):
        """Test a DV coded 1/2 is read as 0/1"""
        path = self._write('DV\tA\n1\t0\n2\t1\n2\t2\n1\t1\n')
        dm = load_dm(path, 'DV')
        np.testing.assert_array_equal(dm.dv, [0, 1, 1, 0])
        self.assertEqual(dm.arities, (2, 3))
        np.testing.assert_array_equal(dm.column(1), [0, 1, 2, 1])

    def test_dv_needs_two_markers(self):
        """Test a DV with three distinct markers is rejected"""
        with self.assertRaises(ValidationError):
            load_dm(self._write('DV\tA\n0\t0\n1\t1\n2\t1\n'), 'DV')

    def test_missing_file(self):
        """Test a missing file raises FileNotFoundError"""
        with self.assertRaises(FileNotFoundError):
            load_dm(os.path.join(self.temp_dir, 'absent.tsv'))


class TestNullGeneration(unittest.TestCase):
    """Test cases for null matrices"""

    def test_multinomial_counts(self):
        """Test multinomial draws sum to the number of trials"""
        counts = multinomial_counts(1000, [0.2, 0.3, 0.5], RngStream(1))
        self.assertEqual(counts.sum(), 1000)
        with self.assertRaises(ValidationError):
            multinomial_counts(10, [0.5, 0.6], RngStream(1))

    def test_null_column_exact_counts(self):
        """Test integer targets are met exactly"""
        column = null_column(100, [0.3, 0.7], np.random.default_rng(0))
        self.assertEqual(int((column == 0).sum()), 30)
        self.assertEqual(column.size, 100)

    def test_scheme_counts_per_column(self):
        """Test each column carries its scheme frequency"""
        dm = generate_null_dm(100, 10, FrequencyScheme.parse('o12345'), RngStream(5))
        for j in range(10):
            self.assertEqual(dm.marker_counts(j)[0], 10 * (j % 5 + 1))

    def test_columns_independent_of_width(self):
        """Test column j is the same whatever the number of columns"""
        scheme = FrequencyScheme.parse('o2')
        narrow = generate_null_dm(30, 2, scheme, RngStream(9))
        wide = generate_null_dm(30, 6, scheme, RngStream(9))
        np.testing.assert_array_equal(narrow.markers, wide.markers[:, :2])

    def test_balanced_dv(self):
        """Test a balanced DV splits the rows in half"""
        dv = balanced_dv(20, RngStream(2))
        self.assertEqual(int(dv.sum()), 10)

    def test_column_ids_for(self):
        """Test generated column ids"""
        self.assertEqual(column_ids_for('R', 3), ('R1', 'R2', 'R3'))
        self.assertEqual(column_ids_for('IV', 2, start=5), ('IV5', 'IV6'))


if __name__ == '__main__':
    unittest.main()
