"""Test cases for PasScanner"""

import math
import unittest

import numpy as np
from scipy import stats

from passcan.core import DataMatrix, FrequencyScheme, RngStream, generate_null_dm
from passcan.exceptions import ValidationError
from passcan.scanner import PasScanner, ScanOutputRow, fisher_by_column, sidak_flags
from tests import example_matrix


def _row(column_id, score, p):
    return ScanOutputRow(column_id, score, 1.0, p, 0.0, 10)


class TestPasScanner(unittest.TestCase):
    """Test cases for single-column scans"""

    def setUp(self):
        """Set up test fixtures"""
        self.dm = generate_null_dm(16, 5, FrequencyScheme.parse('o2345'), RngStream(11))

    def test_scan_layout(self):
        """Test one row per column and score, columns outermost"""
        scanner = PasScanner(n_perms=9, seed=3)
        rows = scanner.scan(self.dm, ['mom1M', 'chix-M', 'ks-M'], columns=[0, 2])
        self.assertEqual([(r.column_id, r.score) for r in rows],
                         [('C1', 'mom1M'), ('C1', 'chix-M'), ('C1', 'ks-M'),
                          ('C3', 'mom1M'), ('C3', 'chix-M'), ('C3', 'ks-M')])
        for row in rows:
            self.assertTrue(0.0 < row.p <= 1.0)
            self.assertLessEqual(row.n_perms, 9)

    def test_scan_reproducible(self):
        """Test equal seeds and different thread counts give equal rows"""
        a = PasScanner(n_perms=12, threads=1, seed=5).scan(self.dm, ['lkx', 'mom2iz'])
        b = PasScanner(n_perms=12, threads=3, seed=5).scan(self.dm, ['lkx', 'mom2iz'])
        self.assertEqual([r.p for r in a], [r.p for r in b])

    def test_unknown_score(self):
        """Test unknown scores are rejected before any work"""
        with self.assertRaises(ValidationError):
            PasScanner(n_perms=5, seed=1).scan(self.dm, ['nonsense'])

    def test_invalid_permutations(self):
        """Test at least one permutation is required"""
        with self.assertRaises(ValidationError):
            PasScanner(n_perms=0)

    def test_seed_from_entropy(self):
        """Test a scanner without a seed still exposes the one it drew"""
        self.assertIsInstance(PasScanner(n_perms=1).seed, int)

    def test_mee(self):
        """Test meePAS rows name the excluded column"""
        rows = PasScanner(n_perms=1, seed=1).mee(example_matrix(), 1)
        self.assertEqual(len(rows), 9)
        self.assertTrue(all(r.score == 'mee1' for r in rows))
        self.assertTrue(all(math.isnan(r.p) for r in rows))
        self.assertTrue(rows[0].flags.startswith('excluded=C'))


class TestDvScan(unittest.TestCase):
    """Test cases for DV scans"""

    def setUp(self):
        """Set up test fixtures"""
        ivs = generate_null_dm(20, 3, FrequencyScheme.parse('o35'), RngStream(2))
        self.dm = ivs.with_dv(np.repeat([0, 1], 10))

    def test_rows(self):
        """Test one row per IV and score"""
        rows = PasScanner(n_perms=9, seed=4).dvscan(self.dm, ['dvmom1ik', 'dvlkx'])
        self.assertEqual([(r.column_id, r.score) for r in rows],
                         [('C1', 'dvmom1ik'), ('C1', 'dvlkx'), ('C2', 'dvmom1ik'),
                          ('C2', 'dvlkx'), ('C3', 'dvmom1ik'), ('C3', 'dvlkx')])

    def test_needs_dv(self):
        """Test scanning without a DV fails"""
        with self.assertRaises(ValidationError):
            PasScanner(n_perms=5, seed=1).dvscan(self.dm.select_columns([1, 2]), ['dvlkx'])

    def test_dv_not_an_iv(self):
        """Test the DV cannot be listed among the IVs"""
        with self.assertRaises(ValidationError):
            PasScanner(n_perms=5, seed=1).dvscan(self.dm, ['dvlkx'], ivs=[0, 1])


class TestStagedDvScan(unittest.TestCase):
    """Test cases for the order-by-order DV scan"""

    def setUp(self):
        """Set up test fixtures"""
        dv = np.repeat([0, 1], 100)
        marginal = np.concatenate([np.repeat([0, 1], [60, 40]), np.repeat([0, 1], [40, 60])])
        # Equal marker counts in both categories
        even = np.tile([0, 1], 100)
        paired = np.tile([0, 0, 1, 1], 50)
        self.dm = DataMatrix(np.column_stack([dv, marginal, even, paired]), (2, 2, 2, 2), 0,
                             ('DV', 'M', 'N1', 'N2'))

    def test_marginal_stage(self):
        """Test the marginal IV is flagged and erased"""
        result = PasScanner(n_perms=9, seed=6).staged_dvscan(self.dm, n_max=2,
                                                             erase_threshold=0.05,
                                                             stage_cutoff=0.0)
        marginal = [r for r in result.rows if r.score == 'marginal-chi2']
        self.assertEqual([r.column_id for r in marginal], ['M', 'N1', 'N2'])
        self.assertTrue(marginal[0].erased)
        self.assertEqual(marginal[0].flags, 'erased')
        self.assertEqual(result.toggles.treated_ivs, (1,))
        self.assertEqual(result.toggles.toggles(1, 0), 10)
        stage_two = [r for r in result.rows if r.score == 'dvmom2i']
        self.assertEqual(len(stage_two), 3)
        self.assertTrue(stage_two[0].erased)
        self.assertEqual([r.column_id for r in result.rows if r.score == 'dvmom1ik'],
                         ['M', 'N1', 'N2'])
        self.assertEqual(set(result.combined), {'M', 'N1', 'N2'})
        self.assertEqual(result.erased_at, {})

    def test_lenient_cutoff_erases(self):
        """Test a cutoff of 1 erases every IV at stage 2 and keeps scanning them"""
        result = PasScanner(n_perms=5, seed=6).staged_dvscan(self.dm, n_max=3, stage_cutoff=1.0)
        self.assertEqual(result.erased_at, {'M': 2, 'N1': 2, 'N2': 2})
        stage_three = [r for r in result.rows if r.score == 'dvmom3i']
        self.assertEqual([r.column_id for r in stage_three], ['M', 'N1', 'N2'])
        self.assertTrue(all(r.erased for r in stage_three))

    def test_dv_copy_combines(self):
        """Test an IV identical to a large DV gets a tiny combined P value"""
        dv = np.repeat([0, 1], 800)
        noise = np.tile([0, 1], 800)
        dm = DataMatrix(np.column_stack([dv, dv, noise]), (2, 2, 2), 0, ('DV', 'X', 'N'))
        result = PasScanner(n_perms=3, seed=1).staged_dvscan(dm, n_max=2)
        marginal = [r for r in result.rows if r.score == 'marginal-chi2']
        self.assertEqual(marginal[0].p, 0.0)
        self.assertTrue(marginal[0].erased)
        self.assertLess(result.combined['X'], 1e-300)
        self.assertGreater(result.combined['N'], 0.0)

    def test_random_ivs_uniform_after_erasure(self):
        """Test stage-2 P values of random IVs are uniform once a marginal IV is erased"""
        dv = np.repeat([0, 1], 100)
        pvalues = []
        for replicate in range(3):
            gen = np.random.default_rng(40 + replicate)
            marginal = np.concatenate([gen.permutation(np.repeat([0, 1], [70, 30])),
                                       gen.permutation(np.repeat([0, 1], [30, 70]))])
            randoms = generate_null_dm(200, 8, FrequencyScheme.parse('o5'),
                                       RngStream(replicate)).markers
            dm = DataMatrix(np.column_stack([dv, marginal, randoms]), (2,) * 10, 0)
            result = PasScanner(n_perms=19, seed=replicate).staged_dvscan(
                dm, n_max=2, erase_threshold=0.01, stage_cutoff=0.0)
            self.assertIn(1, result.toggles.treated_ivs)
            treated = {dm.column_ids[j] for j in result.toggles.treated_ivs}
            pvalues.extend(r.p for r in result.rows
                           if r.score == 'dvmom2i' and r.column_id not in treated)
        self.assertGreaterEqual(len(pvalues), 20)
        self.assertGreater(stats.kstest(pvalues, 'uniform').pvalue, 0.001)

    def test_needs_two_stages(self):
        """Test at least two stages are required"""
        with self.assertRaises(ValidationError):
            PasScanner(n_perms=5, seed=1).staged_dvscan(self.dm, n_max=1)


class TestMultipleTestingHelpers(unittest.TestCase):
    """Test cases for Sidak flags and Fisher combination of rows"""

    def test_sidak_families(self):
        """Test families are formed per score name"""
        rows = [_row('A', 'lkx', 0.01), _row('B', 'lkx', 0.5), _row('A', 'mom1M', 0.03)]
        flags = sidak_flags(rows, 0.05)
        self.assertAlmostEqual(flags[0][0], 1 - 0.95 ** 0.5)
        self.assertTrue(flags[0][1])
        self.assertFalse(flags[1][1])
        self.assertAlmostEqual(flags[2][0], 0.05)
        self.assertTrue(flags[2][1])

    def test_fisher_by_column(self):
        """Test P values are combined per column and undefined ones skipped"""
        rows = [_row('A', 'lkx', 0.05), _row('A', 'mom1M', float('nan')), _row('B', 'lkx', 0.2)]
        combined = fisher_by_column(rows)
        self.assertAlmostEqual(combined['A'], 0.05)
        self.assertAlmostEqual(combined['B'], 0.2)


if __name__ == '__main__':
    unittest.main()
