"""Command-line interface for passcan"""

import argparse
import io
import logging
import os
import sys
from typing import Dict, List, Optional, TextIO

import numpy as np

from . import __version__
from .core.data_matrix import (
    ARITY_MODES,
    DataMatrix,
    FrequencyScheme,
    RngStream,
    balanced_dv,
    generate_null_dm,
    load_dm,
)
from .core.inference import DEFAULT_THRESHOLD_GRID, erase_marginals, tune_erasure
from .core.dvpas_scores import DvScoreSpec
from .core.simulators import (
    BlockSourceSet,
    ModelKind,
    block_dm,
    dilute_model,
    embed,
    encounter_model,
    expand_model,
    extended_2way,
    load_model,
    pure_dv_model,
    pure_nway,
    run_enriched_source,
    save_model,
    synthetic_source,
    trinary_from_haplotypes,
)
from .core.theory import (
    brute_force_likelihoods,
    contingency_reference_tests,
    direct_pm_moments,
    likelihood_moments,
    naive_binomial,
    prob_m_binary,
    reference_matrix,
    two_step_numeric,
    uniform_match_counts,
)
from .exceptions import ResourceGuardError, SearchExhaustedError, ValidationError
from .experiments import ExperimentConfig, power_experiment, type1_experiment
from .scanner import PasScanner, ScanOutputRow, fisher_by_column, sidak_flags
from .utils.tsv_handler import TsvHandler

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RESOURCE = 3


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _split_list(values: Optional[List[str]]) -> List[str]:
    items = []
    for value in values or []:
        items.extend(v for v in value.split(',') if v)
    return items


def _columns(dm: DataMatrix, values: Optional[List[str]]) -> Optional[List[int]]:
    items = _split_list(values)
    return [dm.column_index(v) for v in items] if items else None


def _write_scan_rows(rows: List[ScanOutputRow], args, out: TextIO) -> None:
    header = list(ScanOutputRow.HEADER)
    table = [list(row.as_row()) for row in rows]
    if args.sidak is not None:
        header += ['sidak_cutoff', 'sidak_pass']
        for line, (cutoff, passed) in zip(table, sidak_flags(rows, args.sidak)):
            line += [cutoff, 'pass' if passed else 'fail']
    TsvHandler.write_rows(table, header, out)
    if args.combine == 'fisher':
        TsvHandler.write_rows([(column, 'fisher', p) for column, p in fisher_by_column(rows).items()],
                              ('column', 'combined', 'p'), out)


def cmd_scan(args, out: TextIO) -> int:
    dm = load_dm(args.input)
    scanner = PasScanner(args.perms, args.threads, args.tail, args.seed)
    scores = _split_list(args.score) or ['mom1iz']
    rows = scanner.scan(dm, scores, _columns(dm, args.columns))
    if args.mee:
        rows += scanner.mee(dm, args.mee)
    _write_scan_rows(rows, args, out)
    return EXIT_OK


def cmd_dvscan(args, out: TextIO) -> int:
    dm = load_dm(args.input, args.dv)
    scanner = PasScanner(args.perms, args.threads, args.tail, args.seed)
    if args.staged:
        result = scanner.staged_dvscan(dm, args.staged, args.erase_threshold, args.stage_cutoff)
        _write_scan_rows(result.rows, args, out)
        TsvHandler.write_rows(
            [(column, 'fisher', p, result.erased_at.get(column, 'NA'))
             for column, p in result.combined.items()],
            ('column', 'combined', 'p', 'erased_at_stage'), out)
        return EXIT_OK
    scores = _split_list(args.score) or ['dvmom1ik']
    rows = scanner.dvscan(dm, scores, _columns(dm, args.ivs))
    _write_scan_rows(rows, args, out)
    return EXIT_OK


def _scheme(args) -> FrequencyScheme:
    return FrequencyScheme.parse(args.scheme, args.arity_mode)


def cmd_simulate(args, out: TextIO) -> int:
    rng = RngStream(args.seed)
    kind = args.kind
    if kind in ('haplotype-pairs', 'synthetic-source', 'run-enriched-source'):
        if kind == 'haplotype-pairs':
            source = trinary_from_haplotypes(BlockSourceSet.load(_require(args.source, '--source')))
        elif kind == 'synthetic-source':
            source = synthetic_source(args.sequences, args.length, args.correlation, rng,
                                      anchor_diversity=args.anchor_diversity)
        else:
            source = run_enriched_source(args.sites)
        TsvHandler.write_source(source.sequences, out)
        return EXIT_OK

    if kind == 'null':
        dm = generate_null_dm(args.rows, args.cols, _scheme(args), rng.child(0))
        if args.with_dv:
            dm = dm.with_dv(balanced_dv(args.rows, rng.child(1)))
    elif kind == 'pure-nway':
        dm = pure_nway(args.order, args.copies).matrix
    elif kind == 'pure-dv':
        dm = pure_dv_model(args.order, args.mode, args.copies, rng.child(0)).matrix
    elif kind == 'extended-2way':
        dm = extended_2way(args.order, args.phase, args.boost, args.arity_mode,
                           args.base_rows, rng.child(0)).matrix
    elif kind == 'blocks':
        source = BlockSourceSet.load(_require(args.source, '--source'))
        if args.repair_anchors:
            source = source.with_anchor_combinations()
        dv = balanced_dv(args.rows, rng.child(1)) if args.with_dv else None
        dm = block_dm(source, args.blocks, args.rows, None, rng.child(0), dv, args.threads)
    else:
        model = load_model(_require(args.model, '--model'))
        dm = model.matrix
        if args.dilute:
            dm = dilute_model(dm, args.dilute, model.scheme or _scheme(args), rng.child(2))
        if args.rows:
            dm = expand_model(dm, args.rows, dm.dv_index is not None, rng.child(0))
    if args.random_cols:
        dm = embed(dm, args.random_cols, _scheme(args), rng.child(3))
    TsvHandler.write_matrix(dm, out)
    return EXIT_OK


def _require(value, flag: str):
    if not value:
        raise ValidationError(f"This command needs {flag}")
    return value


def cmd_encounter(args, out: TextIO) -> int:
    model = encounter_model(args.rows, args.cols, _scheme(args), args.cutoff, args.model_kind,
                            args.perms, RngStream(args.seed), args.max_attempts, args.iv_perms)
    if args.output:
        save_model(model, args.output)
        logger.info("Model written to %s after %d attempt(s)", args.output, model.attempts)
    else:
        TsvHandler.write_matrix(model.matrix, out)
    return EXIT_OK


def cmd_erase(args, out: TextIO) -> int:
    dm = load_dm(args.input, args.dv)
    erased, log = erase_marginals(dm, args.threshold, RngStream(args.seed))
    TsvHandler.write_matrix(erased, out)
    if args.toggles:
        with open(args.toggles, 'w', encoding='utf-8') as fh:
            TsvHandler.write_rows(
                [(dm.column_ids[e.iv], e.category, e.from_marker, e.to_marker, e.count)
                 for e in log.entries],
                ('column', 'dv', 'from', 'to', 'count'), fh)
    return EXIT_OK


def cmd_tune(args, out: TextIO) -> int:
    dm = load_dm(args.input, args.dv)
    grid = [float(v) for v in _split_list(args.grid)] or list(DEFAULT_THRESHOLD_GRID)
    score = DvScoreSpec.parse(args.score) if args.score else None
    try:
        result = tune_erasure(dm, args.added, _scheme(args), args.level, args.trials,
                              RngStream(args.seed), score, args.perms, grid, args.threads)
    except SearchExhaustedError as exc:
        TsvHandler.write_rows(sorted(exc.diagnostics.get('ks_pvalues', {}).items(), reverse=True),
                              ('threshold', 'ks_p'), sys.stderr)
        raise
    TsvHandler.write_rows(sorted(result.diagnostics.items(), reverse=True), ('threshold', 'ks_p'), out)
    TsvHandler.write_rows([('chosen', result.threshold, result.ks_pvalue)], None, out)
    return EXIT_OK


def _verify_prob_m(args, out: TextIO) -> None:
    counts = uniform_match_counts(args.L, args.S, args.n)
    total = sum(counts)
    TsvHandler.write_rows([(m, c, c / total) for m, c in enumerate(counts)],
                          ('m', 'count', 'prob'), out)
    TsvHandler.write_rows([('W', total)], None, out)


def _verify_expr10(args, out: TextIO) -> None:
    dist = prob_m_binary(args.L, args.p)
    TsvHandler.write_rows(enumerate(dist.probs), ('m', 'prob'), out)
    TsvHandler.write_rows([('m1', dist.m1), ('m2', dist.m2)], None, out)


def _verify_formulas(args, out: TextIO) -> None:
    try:
        rows, cols = (int(v) for v in args.rl.lower().split('x'))
    except ValueError:
        raise ValidationError(f"--rl expects RxL, got '{args.rl}'")
    table = brute_force_likelihoods(rows, cols, args.S)
    out.write(table.to_text())
    if args.freqs:
        freqs = [float(v) for v in _split_list([args.freqs])]
        moments = likelihood_moments(table, freqs)
        TsvHandler.write_rows([('m1', moments.m1, moments.var_m1),
                               ('m2', moments.m2, moments.var_m2),
                               ('total', table.total(freqs), 'NA')],
                              ('moment', 'expected', 'variance'), out)


def _verify_naive(args, out: TextIO) -> None:
    freqs = [float(v) for v in _split_list([args.freqs])]
    dist = naive_binomial(args.L, freqs)
    match = float(np.sum(np.square(freqs)))
    TsvHandler.write_rows(enumerate(dist.probs), ('m', 'prob'), out)
    TsvHandler.write_rows([('P', match), ('LP', args.L * match),
                           ('LPQ', args.L * match * (1.0 - match))], None, out)


def _verify_two_step(args, out: TextIO) -> None:
    rng = RngStream(args.seed)
    rows = []
    for label, estimate in (('two-step', two_step_numeric(args.R, args.L, args.p, args.iters,
                                                          rng.child(0))),
                            ('direct', direct_pm_moments(args.R, args.L, args.p, args.iters,
                                                         rng.child(1)))):
        rows.append((label, estimate.m1, estimate.var_m1, estimate.m2, estimate.var_m2))
    TsvHandler.write_rows(rows, ('method', 'm1', 'var_m1', 'm2', 'var_m2'), out)


def _verify_reference(args, out: TextIO) -> None:
    dm = reference_matrix()
    result = contingency_reference_tests(dm, 0, args.perms, RngStream(args.seed), args.iv_perms)
    rows = [('chi2', result.chi2), ('dof', result.dof), ('table_p', result.table_pvalue),
            ('dv_p', result.dv_pvalue)]
    rows += [(f"iv_p:{dm.column_ids[iv]}", p) for iv, p in result.iv_pvalues.items()]
    TsvHandler.write_rows(rows, None, out)


_VERIFIERS = {
    'prob-m': _verify_prob_m,
    'expr10': _verify_expr10,
    'formulas': _verify_formulas,
    'naive': _verify_naive,
    'two-step': _verify_two_step,
    'reference': _verify_reference,
}


def cmd_verify(args, out: TextIO) -> int:
    if not args.diff:
        _VERIFIERS[args.table](args, out)
        return EXIT_OK
    buffer = io.StringIO()
    _VERIFIERS[args.table](args, buffer)
    golden_path = os.path.join(args.diff, f"{args.table}.tsv")
    with open(golden_path, 'r', encoding='utf-8') as fh:
        golden = fh.read().splitlines()
    produced = buffer.getvalue().splitlines()
    for line_no in range(max(len(golden), len(produced))):
        expected = golden[line_no] if line_no < len(golden) else '<missing>'
        actual = produced[line_no] if line_no < len(produced) else '<missing>'
        if expected != actual:
            print(f"{golden_path}, line {line_no + 1}: expected '{expected}', got '{actual}'",
                  file=sys.stderr)
            return EXIT_USAGE
    out.write(buffer.getvalue())
    return EXIT_OK


def cmd_experiment(args, out: TextIO) -> int:
    mapping: Dict[str, str] = TsvHandler.read_config(args.experiment_config)
    if args.seed_given or 'seed' not in mapping:
        mapping['seed'] = str(args.seed)
    mapping['threads'] = str(args.threads)
    config = ExperimentConfig.from_mapping(mapping)
    if args.experiment == 'type1':
        report = type1_experiment(config)
        TsvHandler.write_rows(report.rows(), report.HEADER, out)
        return EXIT_OK
    result = power_experiment(config)
    TsvHandler.write_rows(
        [(rows, fraction, result.false_positive_rates.get(rows))
         for rows, fraction in result.curve.items()],
        ('rows', 'detection', 'false_positive_rate'), out)
    TsvHandler.write_rows([('detection_rows', result.detection_rows)], None, out)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--seed', type=int, help='Seed of every random stream. Default: from entropy')
    parser.add_argument('--threads', type=int, default=os.cpu_count() or 1,
                        help='Worker threads; results do not depend on it. Default: all cores')
    parser.add_argument('--config', help='key=value file of option defaults')
    parser.add_argument('-o', '--output', help='Output file. Default: stdout')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for debug detail')


def _add_scheme(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--scheme', default='o12345',
                        help='Cycling minor-marker frequencies in tenths. Default: o12345')
    parser.add_argument('--arity-mode', choices=ARITY_MODES, default='binary',
                        help='binary, or trinary-hw for Hardy-Weinberg trinary columns')


def _add_scan_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--perms', type=int, default=100, help='Permutations. Default: 100')
    parser.add_argument('--tail', choices=['upper', 'two-sided'], default='upper')
    parser.add_argument('--sidak', type=float, metavar='ALPHA',
                        help='Append the Sidak family cutoff and pass/fail')
    parser.add_argument('--combine', choices=['fisher'],
                        help='Append a Fisher-combined P value per column')


def build_parser() -> _Parser:
    parser = _Parser(
        prog='passcan',
        description='Pairwise-comparison association scans of categorical data matrices',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Mom1-iz and CHIx-ij P values of every column
  passcan scan --score mom1iz,chix-ij --perms 100 --seed 7 in.tsv

  # dvPAS scan against the DV column named 'DV'
  passcan dvscan --dv DV --score dvchix-ijkl,dvmom1ik in.tsv

  # Staged scan: marginal chi-square, erasure, then dvMom2-i and dvMom3-i
  passcan dvscan --dv DV --staged 3 in.tsv

  # Exact pair counts for L=7, S=2, three copies
  passcan verify prob-m --L 7 --S 2 --n 3

  # Likelihood polynomials of all 3x3 binary matrices
  passcan verify formulas --rl 3x3

Output is TSV on stdout; floats carry six significant digits.
        """
    )
    parser.add_argument('--version', action='version', version=f'passcan {__version__}')
    commands = parser.add_subparsers(dest='command', parser_class=_Parser)
    commands.required = True

    scan = commands.add_parser('scan', help='PAS scan of single columns')
    scan.add_argument('input', help='TSV data matrix')
    scan.add_argument('--score', action='append', help='Score names, comma separated or repeated')
    scan.add_argument('--columns', action='append', help='Column ids or 0-based indices')
    scan.add_argument('--mee', type=int, metavar='N', help='Append meePAS rows of order N')
    _add_scan_output(scan)

    dvscan = commands.add_parser('dvscan', help='dvPAS scan of IVs against the DV')
    dvscan.add_argument('input', help='TSV data matrix')
    dvscan.add_argument('--dv', default='0', help='DV column id or index. Default: 0')
    dvscan.add_argument('--score', action='append', help='dv score names')
    dvscan.add_argument('--ivs', action='append', help='IV ids or indices. Default: all')
    dvscan.add_argument('--staged', type=int, metavar='N_MAX', help='Run the staged scan up to N_MAX')
    dvscan.add_argument('--erase-threshold', type=float, default=0.01)
    dvscan.add_argument('--stage-cutoff', type=float)
    _add_scan_output(dvscan)

    simulate = commands.add_parser('simulate', help='Generate null, model or block matrices')
    simulate.add_argument('kind', choices=['null', 'pure-nway', 'pure-dv', 'extended-2way',
                                           'blocks', 'model', 'haplotype-pairs',
                                           'synthetic-source', 'run-enriched-source'])
    simulate.add_argument('--rows', type=int, default=200)
    simulate.add_argument('--cols', type=int, default=20)
    simulate.add_argument('--order', type=int, default=3, help='Model IVs')
    simulate.add_argument('--copies', type=int, default=1)
    simulate.add_argument('--mode', choices=['vs_controls', 'vs_randoms'], default='vs_controls')
    simulate.add_argument('--phase', choices=['in', 'off'], default='in')
    simulate.add_argument('--boost', type=float, default=0.1)
    simulate.add_argument('--base-rows', type=int, default=64)
    simulate.add_argument('--random-cols', type=int, default=0)
    simulate.add_argument('--with-dv', action='store_true', help='Prepend a balanced DV')
    simulate.add_argument('--source', help='Source-set file for blocks and haplotype pairs')
    simulate.add_argument('--repair-anchors', action='store_true')
    simulate.add_argument('--blocks', type=int, default=1)
    simulate.add_argument('--model', help='Model file written by encounter')
    simulate.add_argument('--dilute', type=float, default=0.0)
    simulate.add_argument('--sequences', type=int, default=116)
    simulate.add_argument('--length', type=int, default=100)
    simulate.add_argument('--correlation', type=float, default=0.8)
    simulate.add_argument('--no-anchor-diversity', dest='anchor_diversity', action='store_false',
                          help='Accept synthetic sources missing anchor combinations')
    simulate.add_argument('--sites', type=int, default=13, help='Sites of the run-enriched source')
    _add_scheme(simulate)

    encounter = commands.add_parser('encounter', help='Search random matrices for a model')
    encounter.add_argument('--rows', type=int, default=100)
    encounter.add_argument('--cols', type=int, default=5)
    encounter.add_argument('--cutoff', type=float, default=0.01)
    encounter.add_argument('--model-kind', default=ModelKind.COLUMNS.value,
                           choices=[ModelKind.COLUMNS.value, ModelKind.DV_MARGINAL.value,
                                    ModelKind.DV_NOMARGINAL.value])
    encounter.add_argument('--perms', type=int, default=200)
    encounter.add_argument('--iv-perms', type=int)
    encounter.add_argument('--max-attempts', type=int, default=10000)
    _add_scheme(encounter)

    erase = commands.add_parser('erase', help='Erase marginal effects of IVs')
    erase.add_argument('input', help='TSV data matrix')
    erase.add_argument('--dv', default='0')
    erase.add_argument('--threshold', type=float, default=0.01)
    erase.add_argument('--toggles', help='Write the toggle log to this file')

    tune = commands.add_parser('tune', help='Tune the erasure threshold')
    tune.add_argument('input', help='TSV data matrix')
    tune.add_argument('--dv', default='0')
    tune.add_argument('--added', type=int, default=10, help='Random IVs added per trial')
    tune.add_argument('--level', type=float, default=0.05)
    tune.add_argument('--trials', type=int, default=5)
    tune.add_argument('--perms', type=int, default=100)
    tune.add_argument('--grid', action='append', help='Candidate thresholds')
    tune.add_argument('--score', help='dv score. Default: dvmom2i')
    _add_scheme(tune)

    verify = commands.add_parser('verify', help='Print exact and numeric reference tables')
    verify.add_argument('table', choices=sorted(_VERIFIERS))
    verify.add_argument('--L', type=int, default=5)
    verify.add_argument('--S', type=int, default=2)
    verify.add_argument('--n', type=int, default=1)
    verify.add_argument('--p', type=float, default=0.2)
    verify.add_argument('--R', type=int, default=10)
    verify.add_argument('--iters', type=int, default=1000)
    verify.add_argument('--rl', default='3x3', help='Rows x columns for formulas')
    verify.add_argument('--freqs', default='', help='Marker frequencies by code')
    verify.add_argument('--perms', type=int, default=1000)
    verify.add_argument('--iv-perms', type=int, default=200)
    verify.add_argument('--diff', metavar='GOLDEN_DIR', help='Compare against <table>.tsv there')

    experiment = commands.add_parser('experiment', help='Run a type-I or power experiment')
    experiment.add_argument('experiment', choices=['type1', 'power'])
    experiment.add_argument('experiment_config', help='key=value experiment file')

    for sub in commands.choices.values():
        _add_common(sub)
    parser.commands = commands.choices
    return parser


def _apply_config(parser: _Parser, args, argv: List[str]):
    """Re-parse with the config file's values as defaults of the chosen subcommand"""
    subparser = parser.commands[args.command]
    known = {action.dest: action for action in subparser._actions}
    defaults = {}
    for key, value in TsvHandler.read_config(args.config).items():
        if key not in known or key in ('config', 'command'):
            raise ValidationError(f"Unknown option '{key}' in {args.config}")
        action = known[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = value.lower() in ('1', 'true', 'yes')
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [value]
        elif isinstance(action, argparse._CountAction):
            defaults[key] = int(value)
        else:
            defaults[key] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


_COMMANDS = {
    'scan': cmd_scan,
    'dvscan': cmd_dvscan,
    'simulate': cmd_simulate,
    'encounter': cmd_encounter,
    'erase': cmd_erase,
    'tune': cmd_tune,
    'verify': cmd_verify,
    'experiment': cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            args = _apply_config(parser, args, argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except ValidationError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = RngStream.from_entropy().seed
        print(f"seed: {args.seed}", file=sys.stderr)

    command = _COMMANDS[args.command]
    writes_model = args.command == 'encounter'
    try:
        if args.output and not writes_model:
            with open(args.output, 'w', encoding='utf-8') as fh:
                return command(args, fh)
        return command(args, sys.stdout)

    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        return 130

    except ValidationError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    except ResourceGuardError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE

    except SearchExhaustedError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        for key, value in exc.diagnostics.items():
            print(f"  {key}: {value}", file=sys.stderr)
        return EXIT_USAGE

    except FileNotFoundError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    except Exception as e:
        print(f"\nError: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
