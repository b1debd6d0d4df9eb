"""Test cases for single-focal-column scores"""

import math
import unittest

import numpy as np
from scipy import stats
from scipy.special import gammaln

from passcan.core import (
    FrequencyScheme,
    RngStream,
    ScoreSpec,
    chix,
    chix_dof,
    conditional_sets,
    generate_null_dm,
    ks,
    lkx,
    log_factorial,
    mee_pas,
    mom,
    total_matches,
)
from passcan.exceptions import ValidationError
from tests import example_matrix


class TestLogFactorial(unittest.TestCase):
    """Test cases for log_factorial"""

    def test_table_values(self):
        """Test tabulated values against exact factorials"""
        for k in (0, 1, 5, 20):
            self.assertAlmostEqual(log_factorial(k), math.log(math.factorial(k)), places=10)

    def test_stirling_range(self):
        """Test the series above the table matches gammaln"""
        k = 250000
        self.assertAlmostEqual(log_factorial(k) / gammaln(k + 1.0), 1.0, places=12)

    def test_array_input(self):
        """Test arrays come back with the same shape"""
        values = log_factorial(np.array([[1, 2], [3, 4]]))
        self.assertEqual(values.shape, (2, 2))
        self.assertAlmostEqual(values[1, 1], math.log(24))

    def test_negative(self):
        """Test negative arguments are rejected"""
        with self.assertRaises(ValidationError):
            log_factorial(-1)


class TestMoments(unittest.TestCase):
    """Test cases for Mom^n scores on the worked example"""

    def setUp(self):
        """Set up test fixtures"""
        self.dm = example_matrix()
        self.summary = total_matches(self.dm)
        self.generic = conditional_sets(self.dm, self.summary, 0, 'generic')
        self.per_marker = conditional_sets(self.dm, self.summary, 0, 'per-marker')

    def test_mean_given_match(self):
        """Test Mom1-M is the mean of m over focal matches"""
        score = mom(self.generic, 1)
        self.assertAlmostEqual(score.total, 16 / 6)

    def test_central_moment(self):
        """Test Mom2-M is the central second moment"""
        self.assertAlmostEqual(mom(self.generic, 2).total, 78 / 27)

    def test_per_marker(self):
        """Test Mom1-i gives one value per focal marker"""
        score = mom(self.per_marker, 1, 'i')
        self.assertEqual(score.labels, ('0/0', '1/1'))
        np.testing.assert_allclose(score.values, [8 / 3, 8 / 3])

    def test_per_marker_needs_marker_states(self):
        """Test Mom-i cannot use generic sets"""
        with self.assertRaises(ValidationError):
            mom(self.generic, 1, 'i')

    def test_empty_cell_undefined(self):
        """Test a marker without matching pairs gives an undefined cell"""
        dm = example_matrix().with_column(0, np.array([0, 1, 1, 1, 1, 1]))
        sets = conditional_sets(dm, total_matches(dm), 0, 'per-marker')
        score = mom(sets, 1, 'i')
        self.assertTrue(np.isnan(score.values[0]))
        self.assertFalse(score.undefined)


class TestChix(unittest.TestCase):
    """Test cases for CHIx"""

    def setUp(self):
        """Set up test fixtures"""
        self.dm = example_matrix()
        self.summary = total_matches(self.dm)

    def test_against_contingency_chi_square(self):
        """Test CHIx-M equals the plain chi-square of the populated table"""
        sets = conditional_sets(self.dm, self.summary, 0, 'generic')
        table = sets.joint_counts[:, sets.m_counts > 0]
        expected = stats.chi2_contingency(table, correction=False)[0]
        self.assertAlmostEqual(chix(sets, 'M'), expected)
        self.assertEqual(chix_dof(sets, 'M'), 5)

    def test_ij_needs_pairs_mode(self):
        """Test CHIx-ij needs fully specified states"""
        sets = conditional_sets(self.dm, self.summary, 0, 'per-marker')
        with self.assertRaises(ValidationError):
            chix(sets, 'ij')
        pairs = conditional_sets(self.dm, self.summary, 0, 'pairs')
        self.assertGreaterEqual(chix(pairs, 'ij'), 0.0)


class TestLkx(unittest.TestCase):
    """Test cases for the LKx family"""

    def test_worked_example(self):
        """Test LKx of focal column 0 against its factorial form"""
        dm = example_matrix()
        sets = conditional_sets(dm, total_matches(dm), 0, 'per-marker')
        bundle = lkx(sets)
        f = math.factorial
        expected = (f(3) * f(3) * f(9) * f(3) * f(3) * f(2) * f(3) * f(3)
                    / (f(15) * f(2) * f(3)))
        self.assertAlmostEqual(math.exp(bundle.log_lkx), expected, places=12)
        self.assertLessEqual(bundle.log_lkm, bundle.log_maxlkm + 1e-12)

    def test_probability_bound(self):
        """Test the hypergeometric likelihood never exceeds 1"""
        dm = generate_null_dm(30, 8, FrequencyScheme.parse('o25'), RngStream(3))
        summary = total_matches(dm)
        for focal in range(dm.cols):
            self.assertLessEqual(lkx(conditional_sets(dm, summary, focal)).log_lkx, 1e-12)


class TestKs(unittest.TestCase):
    """Test cases for KS"""

    def setUp(self):
        """Set up test fixtures"""
        dm = example_matrix()
        self.sets = conditional_sets(dm, total_matches(dm), 0, 'generic')

    def test_identical_cdf(self):
        """Test the distance to the observed c.d.f. itself is zero"""
        counts = self.sets.match_distribution()
        cdf = np.cumsum(counts) / counts.sum()
        self.assertAlmostEqual(ks(self.sets, {'M': cdf}), 0.0)

    def test_step_distance(self):
        """Test the sup-norm distance to a point mass at m = 0"""
        self.assertAlmostEqual(ks(self.sets, {'M': np.ones(9)}), 1.0)

    def test_missing_null(self):
        """Test a populated state without a null is rejected"""
        with self.assertRaises(ValidationError):
            ks(self.sets, {})


class TestMeePas(unittest.TestCase):
    """Test cases for meePAS"""

    def test_against_explicit_exclusion(self):
        """Test the largest change equals dropping each other column in turn"""
        dm = generate_null_dm(20, 6, FrequencyScheme.parse('o2345'), RngStream(8))
        for n in (1, 2, 3):
            result = mee_pas(dm, total_matches(dm), n)[0]
            baseline = mom(conditional_sets(dm, total_matches(dm), 0), n).total
            deltas = []
            for e in range(1, dm.cols):
                reduced = dm.drop_columns([e])
                deltas.append(mom(conditional_sets(reduced, total_matches(reduced), 0), n).total
                              - baseline)
            largest = float(np.max(np.abs(deltas)))
            self.assertAlmostEqual(abs(result.delta), largest, places=8)
            self.assertAlmostEqual(result.delta, deltas[result.excluded - 1], places=8)

    def test_block_size_invariance(self):
        """Test blocks far smaller than the pair count give the same results"""
        dm = generate_null_dm(30, 7, FrequencyScheme.parse('o2345'), RngStream(9))
        summary = total_matches(dm)
        whole = mee_pas(dm, summary, 2)
        blocked = mee_pas(dm, summary, 2, block_elements=3 * dm.cols + 1)
        for a, b in zip(whole, blocked):
            self.assertAlmostEqual(abs(a.delta), abs(b.delta), places=9)

    def test_needs_two_columns(self):
        """Test meePAS rejects a single column"""
        dm = example_matrix().select_columns([0])
        with self.assertRaises(ValidationError):
            mee_pas(dm, total_matches(dm), 2)


class TestScoreSpec(unittest.TestCase):
    """Test cases for score names"""

    def test_names_round_trip(self):
        """Test parsed names print back unchanged"""
        for name in ('mom1M', 'mom2i', 'mom1iz', 'chix-M', 'chix-ij', 'lkx', 'lkx-M',
                     'lkxm', 'maxlkm-M', 'ks-M', 'ks-i'):
            self.assertEqual(ScoreSpec.parse(name).name, name)

    def test_lkx_defaults_to_pair_states(self):
        """Test bare likelihood names condition on the fully specified pair states"""
        self.assertEqual(ScoreSpec.parse('lkx').sets_mode, 'pairs')
        self.assertEqual(ScoreSpec.parse('lkx-ij'), ScoreSpec.parse('lkx'))
        self.assertEqual(ScoreSpec.parse('maxlkm').conditioning, 'ij')
        self.assertEqual(ScoreSpec.parse('lkx-M').sets_mode, 'generic')

    def test_sets_modes(self):
        """Test each score asks for the conditional sets it needs"""
        self.assertEqual(ScoreSpec.parse('mom1M').sets_mode, 'generic')
        self.assertEqual(ScoreSpec.parse('mom2iz').sets_mode, 'per-marker')
        self.assertEqual(ScoreSpec.parse('chix-ij').sets_mode, 'pairs')
        self.assertTrue(ScoreSpec.parse('ks-i').needs_null_cdfs)

    def test_unknown_name(self):
        """Test unknown names are rejected"""
        for name in ('mom0M', 'chix-ijkl', 'dvmom1', 'entropy'):
            with self.assertRaises(ValidationError):
                ScoreSpec.parse(name)

    def test_score_function_matches_cells(self):
        """Test the closure scores the focal column like the sets do"""
        dm = example_matrix()
        summary = total_matches(dm)
        spec = ScoreSpec.parse('lkx')
        fn = spec.score_function(0, 2, dm.cols, summary.pairs)
        cells = fn(dm.column(0), summary.total_matches)
        expected = -lkx(conditional_sets(dm, summary, 0, 'pairs')).log_lkx
        self.assertAlmostEqual(float(cells[0]), expected)


if __name__ == '__main__':
    unittest.main()
