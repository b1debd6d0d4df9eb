"""Test cases for the passcan command-line interface"""

import io
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout

import numpy as np

from passcan.cli import EXIT_RESOURCE, EXIT_USAGE, EXIT_VALIDATION, main
from passcan.core import DataMatrix
from passcan.utils.tsv_handler import TsvHandler
from tests import example_matrix


def run_cli(*argv):
    """Run main and capture (exit code, stdout lines, stderr text)"""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue().splitlines(), err.getvalue()


class TestCLIBase(unittest.TestCase):
    """Shared temporary directory"""

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = tempfile.mkdtemp()
        self.matrix_path = self.path('example.tsv')
        with open(self.matrix_path, 'w', encoding='utf-8') as fh:
            TsvHandler.write_matrix(example_matrix(), fh)

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def path(self, name):
        return os.path.join(self.temp_dir, name)


class TestVerify(TestCLIBase):
    """Test cases for the reference tables"""

    def test_prob_m(self):
        """Test pair counts for L=7, S=2, three copies"""
        code, lines, _ = run_cli('verify', 'prob-m', '--L', '7', '--S', '2', '--n', '3', '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(lines[0], 'm\tcount\tprob')
        self.assertEqual(lines[8], '7\t384\t0.00522193')
        self.assertEqual(lines[-1], 'W\t73536')

    def test_expr10(self):
        """Test m1 and m2 at L=40, p=0.2"""
        code, lines, _ = run_cli('verify', 'expr10', '--L', '40', '--p', '0.2', '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(lines[-2:], ['m1\t27.2', 'm2\t8.704'])

    def test_formulas(self):
        """Test polynomial lines and moments of 3x3 binary matrices"""
        code, lines, _ = run_cli('verify', 'formulas', '--rl', '3x3', '--freqs', '0.8,0.2',
                                 '--seed', '1')
        self.assertEqual(code, 0)
        polynomials = [line for line in lines if line.startswith('Lik(')]
        self.assertEqual(len(polynomials), 7)
        self.assertIn('m1\t2.04\t0.3328', lines)
        self.assertIn('m2\t0.48\t0.2368', lines)

    def test_naive(self):
        """Test P, LP and LPQ of a trinary frequency vector"""
        code, lines, _ = run_cli('verify', 'naive', '--L', '40', '--freqs', '0.04,0.32,0.64',
                                 '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(lines[-3:], ['P\t0.5136', 'LP\t20.544', 'LPQ\t9.9926'])

    def test_diff_against_golden(self):
        """Test golden comparison passes on equal output and fails on a change"""
        golden_dir = self.path('golden')
        os.mkdir(golden_dir)
        _, lines, _ = run_cli('verify', 'prob-m', '--seed', '1')
        with open(os.path.join(golden_dir, 'prob-m.tsv'), 'w', encoding='utf-8') as fh:
            fh.write('\n'.join(lines) + '\n')
        code, _, _ = run_cli('verify', 'prob-m', '--seed', '1', '--diff', golden_dir)
        self.assertEqual(code, 0)
        code, _, err = run_cli('verify', 'prob-m', '--L', '6', '--seed', '1', '--diff', golden_dir)
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn('line', err)

    def test_resource_guard_exit(self):
        """Test an oversized enumeration exits with the resource status"""
        code, _, err = run_cli('verify', 'formulas', '--rl', '6x6', '--seed', '1')
        self.assertEqual(code, EXIT_RESOURCE)
        self.assertIn('Error', err)

    def test_validation_exit(self):
        """Test a malformed argument exits with the validation status"""
        code, _, _ = run_cli('verify', 'formulas', '--rl', '3by3', '--seed', '1')
        self.assertEqual(code, EXIT_VALIDATION)


class TestScanCommands(TestCLIBase):
    """Test cases for scan and dvscan"""

    def test_scan(self):
        """Test one row per column with Sidak and Fisher tables"""
        code, lines, _ = run_cli('scan', '--score', 'mom1M', '--perms', '9', '--seed', '2',
                                 '--threads', '1', '--sidak', '0.05', '--combine', 'fisher',
                                 self.matrix_path)
        self.assertEqual(code, 0)
        self.assertEqual(lines[0].split('\t'),
                         ['column', 'score', 'value', 'p', 'z', 'n_perms', 'flags',
                          'sidak_cutoff', 'sidak_pass'])
        self.assertEqual(len([line for line in lines if '\tmom1M\t' in line]), 9)
        self.assertIn('column\tcombined\tp', lines)

    def test_scan_reproducible(self):
        """Test the same seed gives the same output"""
        args = ('scan', '--score', 'lkx', '--perms', '9', '--seed', '4', '--columns', 'C1,C2',
                self.matrix_path)
        self.assertEqual(run_cli(*args)[1], run_cli(*args)[1])

    def test_seed_reported(self):
        """Test a drawn seed is reported on stderr"""
        code, _, err = run_cli('scan', '--score', 'mom1M', '--perms', '2', '--columns', '0',
                               self.matrix_path)
        self.assertEqual(code, 0)
        self.assertIn('seed: ', err)

    def test_config_defaults(self):
        """Test option defaults come from a config file"""
        config = self.path('scan.cfg')
        with open(config, 'w', encoding='utf-8') as fh:
            fh.write("# scan defaults\nperms=3\nscore=chix-M\ncolumns=0\n")
        code, lines, _ = run_cli('scan', '--config', config, '--seed', '1', self.matrix_path)
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[1].startswith('C1\tchix-M\t'))

    def test_config_unknown_option(self):
        """Test unknown config keys are rejected"""
        config = self.path('bad.cfg')
        with open(config, 'w', encoding='utf-8') as fh:
            fh.write("speed=fast\n")
        code, _, _ = run_cli('scan', '--config', config, self.matrix_path)
        self.assertEqual(code, EXIT_VALIDATION)

    def test_dvscan(self):
        """Test dvscan against column 0"""
        code, lines, _ = run_cli('dvscan', '--dv', 'C1', '--score', 'dvmom1ik', '--perms', '5',
                                 '--seed', '3', '--ivs', 'C2,C5', self.matrix_path)
        self.assertEqual(code, 0)
        self.assertEqual([line.split('\t')[0] for line in lines[1:]], ['C2', 'C5'])

    def test_output_file(self):
        """Test -o writes the table to a file"""
        target = self.path('rows.tsv')
        code, lines, _ = run_cli('scan', '--score', 'mom1M', '--perms', '2', '--seed', '1',
                                 '--columns', '0', '-o', target, self.matrix_path)
        self.assertEqual(code, 0)
        self.assertEqual(lines, [])
        with open(target, encoding='utf-8') as fh:
            self.assertEqual(len(fh.read().splitlines()), 2)

    def test_missing_input(self):
        """Test a missing matrix file exits with status 1"""
        code, _, err = run_cli('scan', '--seed', '1', self.path('absent.tsv'))
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn('not found', err)

    def test_superscript_cell_exit(self):
        """Test a superscript digit in the matrix exits with the validation status"""
        path = self.path('superscript.tsv')
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write('A\tB\n0\t1\n1\t²\n0\t0\n')
        code, _, _ = run_cli('scan', '--score', 'mom1M', '--perms', '2', '--seed', '1', path)
        self.assertEqual(code, EXIT_VALIDATION)

    def test_usage_error(self):
        """Test an unknown subcommand exits with status 1"""
        code, _, _ = run_cli('transmogrify')
        self.assertEqual(code, EXIT_USAGE)


class TestSimulateCommands(TestCLIBase):
    """Test cases for simulate, encounter, erase and experiment"""

    def test_simulate_null(self):
        """Test a seeded null matrix is reproducible"""
        args = ('simulate', 'null', '--rows', '10', '--cols', '3', '--seed', '2', '--with-dv')
        code, lines, _ = run_cli(*args)
        self.assertEqual(code, 0)
        self.assertEqual(lines[0], 'DV\tC1\tC2\tC3')
        self.assertEqual(len(lines), 11)
        self.assertEqual(lines, run_cli(*args)[1])

    def test_simulate_pure_nway(self):
        """Test a pure 3-way model with random columns"""
        code, lines, _ = run_cli('simulate', 'pure-nway', '--order', '3', '--random-cols', '2',
                                 '--scheme', 'o5', '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(lines[0], 'IV1\tIV2\tIV3\tR1\tR2')
        self.assertEqual(len(lines), 5)

    def test_simulate_run_enriched_source(self):
        """Test the run-enriched source is written one sequence per line"""
        code, lines, _ = run_cli('simulate', 'run-enriched-source', '--sites', '4', '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 400 + 16)
        self.assertEqual(lines[0], '0000')

    def test_simulate_constant_synthetic_source(self):
        """Test fully correlated sources are written when anchor diversity is waived"""
        code, lines, _ = run_cli('simulate', 'synthetic-source', '--sequences', '20',
                                 '--length', '8', '--correlation', '1', '--no-anchor-diversity',
                                 '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 20)
        self.assertTrue(all(line in ('0' * 8, '1' * 8) for line in lines))

    def test_encounter_exhausted(self):
        """Test an unreachable cutoff prints diagnostics and exits with status 1"""
        code, _, err = run_cli('encounter', '--rows', '10', '--cols', '2', '--cutoff', '1e-6',
                               '--perms', '9', '--max-attempts', '2', '--seed', '1')
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn('attempts: 2', err)

    def test_encounter_writes_model(self):
        """Test -o writes the model and its record"""
        target = self.path('model.tsv')
        code, _, _ = run_cli('encounter', '--rows', '10', '--cols', '2', '--cutoff', '1',
                             '--perms', '9', '--seed', '1', '-o', target)
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(target + '.meta'))
        code, lines, _ = run_cli('simulate', 'model', '--model', target, '--rows', '0',
                                 '--seed', '1')
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 11)

    def test_erase(self):
        """Test erasure writes the matrix and the toggle log"""
        dv = np.repeat([0, 1], 100)
        iv = np.concatenate([np.repeat([0, 1], [60, 40]), np.repeat([0, 1], [40, 60])])
        path = self.path('marginal.tsv')
        with open(path, 'w', encoding='utf-8') as fh:
            TsvHandler.write_matrix(DataMatrix(np.column_stack([dv, iv]), (2, 2), 0, ('DV', 'IV')), fh)
        toggles = self.path('toggles.tsv')
        code, lines, _ = run_cli('erase', '--threshold', '0.05', '--toggles', toggles,
                                 '--seed', '1', path)
        self.assertEqual(code, 0)
        self.assertEqual(len(lines), 201)
        with open(toggles, encoding='utf-8') as fh:
            log = fh.read().splitlines()
        self.assertEqual(log[0], 'column\tdv\tfrom\tto\tcount')
        self.assertEqual(sum(int(line.split('\t')[-1]) for line in log[1:]), 20)

    def test_staged_dvscan(self):
        """Test the staged scan writes stage rows and the combined table"""
        dv = np.repeat([0, 1], 100)
        iv = np.concatenate([np.repeat([0, 1], [60, 40]), np.repeat([0, 1], [40, 60])])
        path = self.path('staged.tsv')
        with open(path, 'w', encoding='utf-8') as fh:
            TsvHandler.write_matrix(DataMatrix(np.column_stack([dv, iv]), (2, 2), 0, ('DV', 'IV')), fh)
        code, lines, _ = run_cli('dvscan', '--dv', 'DV', '--staged', '2', '--perms', '5',
                                 '--seed', '1', path)
        self.assertEqual(code, 0)
        self.assertEqual([line.split('\t')[1] for line in lines[1:4]],
                         ['marginal-chi2', 'dvmom2i', 'dvmom1ik'])
        self.assertIn('column\tcombined\tp\terased_at_stage', lines)

    def test_experiment_type1(self):
        """Test a type I experiment from a config file"""
        config = self.path('type1.cfg')
        with open(config, 'w', encoding='utf-8') as fh:
            fh.write("generator=null\nreplicates=20\ncols=4\nscored_columns=0,1\n"
                     "uniform_scores=true\nscores=mom1M\n")
        code, lines, _ = run_cli('experiment', 'type1', config, '--seed', '5')
        self.assertEqual(code, 0)
        self.assertEqual(lines[0], 'kind\tlabel\tn\tstatistic\tp')
        self.assertTrue(any(line.startswith('cdf\tmom1M:pooled\t40\t') for line in lines))


if __name__ == '__main__':
    unittest.main()
