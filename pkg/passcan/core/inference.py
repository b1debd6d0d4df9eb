"""Permutation P values, multiple-testing helpers and marginal-effect erasure"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..exceptions import SearchExhaustedError, ValidationError
from .data_matrix import DataMatrix, FrequencyScheme, RngStream, generate_null_dm, column_ids_for
from .dvpas_scores import DvScoreSpec
from .pairwise import (
    ConditionalSets,
    PairwiseSummary,
    conditional_sets_from,
    pm_column_fast,
    total_matches,
)
from .pas_scores import NullCdfs, ScoreFunction, null_cdf_states

logger = logging.getLogger(__name__)

# Sub-stream tags below a target's stream
PVALUE_STREAM = 0
NULL_STREAM = 1

DEFAULT_PERMUTATIONS = 100
DEFAULT_THRESHOLD_GRID = (0.05, 0.019, 0.01, 0.005, 0.001, 0.0005, 0.00015, 0.0001, 1e-5)

_MAX_REDRAWS = 100

SetsBuilder = Callable[[np.ndarray, np.ndarray], ConditionalSets]


class Tail(str, Enum):
    """Which side of the permutation distribution counts as extreme"""
    UPPER = 'upper'
    TWO_SIDED = 'two-sided'


@dataclass
class PValueEstimate:
    """
    Permutation P value of one score

    Attributes:
        score: observed score (summed cells, or summed Z values for z aggregation)
        p: (1 + replicates at least as extreme) / (1 + replicates)
        z: Z value of the observed score against its replicates
        n_perms: replicates that produced a defined score
        tail: 'upper' or 'two-sided'
        undetectable: the score was undefined on the data or on every replicate
        cell_z: per-cell Z values, z aggregation only
    """
    score: float
    p: float
    z: float
    n_perms: int
    tail: str = Tail.UPPER.value
    undetectable: bool = False
    cell_z: Optional[np.ndarray] = None


def _draw_permutation(original: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Vertical shuffle of a column, redrawn while it reproduces the original"""
    permuted = gen.permutation(original)
    if np.all(original == original[0]):
        return permuted
    for _ in range(_MAX_REDRAWS):
        if not np.array_equal(permuted, original):
            break
        permuted = gen.permutation(original)
    return permuted


def _map_replicates(replicate: Callable[[int], object], n_perms: int, threads: int) -> list:
    if threads <= 1 or n_perms <= 1:
        return [replicate(k) for k in range(n_perms)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(replicate, range(n_perms)))


def _run_replicates(original: np.ndarray, summary: PairwiseSummary,
                    score_fns: Sequence[ScoreFunction], n_perms: int,
                    stream: RngStream, threads: int) -> List[List[np.ndarray]]:
    pairs = summary.pairs
    base_totals = summary.total_matches.astype(np.int32) - pm_column_fast(original, pairs)

    def replicate(k: int) -> List[np.ndarray]:
        permuted = _draw_permutation(original, stream.child(k).generator())
        totals = base_totals + pm_column_fast(permuted, pairs)
        return [np.atleast_1d(np.asarray(fn(permuted, totals), dtype=np.float64))
                for fn in score_fns]

    return _map_replicates(replicate, n_perms, threads)


def _sum_or_nan(cells: np.ndarray) -> float:
    if cells.size == 0 or np.all(np.isnan(cells)):
        return float('nan')
    return float(np.nansum(cells))


def _cell_moments(replicates: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell mean and sample sd over replicates, ignoring NaN"""
    present = ~np.isnan(replicates)
    counts = present.sum(axis=0)
    filled = np.where(present, replicates, 0.0)
    mean = np.divide(filled.sum(axis=0), counts, out=np.zeros(replicates.shape[1]),
                     where=counts > 0)
    squares = np.where(present, (replicates - mean) ** 2, 0.0).sum(axis=0)
    variance = np.divide(squares, counts - 1, out=np.zeros(replicates.shape[1]),
                         where=counts > 1)
    return mean, np.sqrt(variance)


def _z_cells(cells: np.ndarray, mean: np.ndarray, sd: np.ndarray) -> np.ndarray:
    usable = (sd > 0) & ~np.isnan(cells)
    return np.where(usable, (np.nan_to_num(cells) - mean) / np.where(sd > 0, sd, 1.0), 0.0)


def _extreme_count(observed: float, replicates: np.ndarray, tail: Tail) -> int:
    tolerance = 1e-12 * max(1.0, abs(observed))
    if tail == Tail.UPPER:
        return int(np.count_nonzero(replicates >= observed - tolerance))
    center = float(replicates.mean())
    return int(np.count_nonzero(np.abs(replicates - center) >= abs(observed - center) - tolerance))


def estimate_from_replicates(observed: np.ndarray, replicates: Sequence[np.ndarray],
                             aggregation: str = 'raw',
                             tail: Union[str, Tail] = Tail.UPPER) -> PValueEstimate:
    """
    P and Z values of an observed score from its permutation replicates

    Args:
        observed: observed per-cell values, NaN for empty cells
        replicates: per-cell values of every replicate
        aggregation: 'raw' sums cells; 'z' sums signed per-cell Z values
        tail: 'upper' or 'two-sided'

    Returns:
        PValueEstimate; replicates whose score is undefined are dropped
    """
    tail = Tail(tail)
    observed = np.atleast_1d(np.asarray(observed, dtype=np.float64))
    matrix = (np.vstack([np.atleast_1d(r) for r in replicates])
              if len(replicates) else np.empty((0, observed.size)))

    cell_z = None
    if aggregation == 'raw':
        observed_score = _sum_or_nan(observed)
        scores = np.array([_sum_or_nan(row) for row in matrix])
    elif aggregation == 'z':
        mean, sd = _cell_moments(matrix) if matrix.shape[0] else (np.zeros(observed.size),) * 2
        cell_z = _z_cells(observed, mean, sd)
        observed_score = float('nan') if np.all(np.isnan(observed)) else float(cell_z.sum())
        scores = np.array([float('nan') if np.all(np.isnan(row)) else float(_z_cells(row, mean, sd).sum())
                           for row in matrix])
    else:
        raise ValidationError(f"Unknown aggregation '{aggregation}'")

    scores = scores[~np.isnan(scores)] if scores.size else scores
    if np.isnan(observed_score) or scores.size == 0:
        logger.warning("Score undefined on the data or on every replicate")
        return PValueEstimate(observed_score, 1.0, float('nan'), int(scores.size),
                              tail.value, True, cell_z)

    extreme = _extreme_count(observed_score, scores, tail)
    p = (1.0 + extreme) / (1.0 + scores.size)
    if aggregation == 'z':
        z = observed_score
    else:
        spread = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
        z = (observed_score - float(scores.mean())) / spread if spread > 0 else 0.0
    return PValueEstimate(observed_score, p, z, int(scores.size), tail.value, False, cell_z)


def permute_pvalues(dm: DataMatrix, target: int, score_fns: Sequence[ScoreFunction],
                    n_perms: int = DEFAULT_PERMUTATIONS,
                    aggregations: Union[str, Sequence[str]] = 'raw',
                    tail: Union[str, Tail] = Tail.UPPER,
                    rng: Optional[RngStream] = None, threads: int = 1,
                    summary: Optional[PairwiseSummary] = None) -> List[PValueEstimate]:
    """
    Permutation P values of several scores sharing one permuted target column

    Each replicate shuffles the target column vertically, updates the total
    matches incrementally and evaluates every score function on the result.
    Replicate k draws from rng.child(PVALUE_STREAM, k), so results do not
    depend on the number of threads.

    Args:
        dm: data matrix
        target: column permuted (the focal column, or the DV)
        score_fns: callables (target values, total matches) -> cells
        n_perms: number of replicates, at least 1
        aggregations: one aggregation for all scores, or one per score
        tail: 'upper' or 'two-sided'
        rng: stream for this target
        threads: worker threads
        summary: precomputed pairwise summary of dm

    Returns:
        One PValueEstimate per score function
    """
    if n_perms < 1:
        raise ValidationError(f"At least one permutation is needed, got {n_perms}")
    if isinstance(aggregations, str):
        aggregations = [aggregations] * len(score_fns)
    if len(aggregations) != len(score_fns):
        raise ValidationError("One aggregation per score function is needed")
    rng = rng if rng is not None else RngStream.from_entropy()
    summary = summary if summary is not None else total_matches(dm)

    original = np.array(dm.column(target))
    observed = [np.atleast_1d(np.asarray(fn(original, summary.total_matches), dtype=np.float64))
                for fn in score_fns]
    replicates = _run_replicates(original, summary, score_fns, n_perms,
                                 rng.child(PVALUE_STREAM), threads)
    logger.debug("Ran %d permutations of column %d for %d score(s)",
                 n_perms, target, len(score_fns))
    return [
        estimate_from_replicates(observed[j], [rep[j] for rep in replicates], aggregations[j], tail)
        for j in range(len(score_fns))
    ]


def permute_pvalue(dm: DataMatrix, target: int, score_fn: ScoreFunction,
                   n_perms: int = DEFAULT_PERMUTATIONS, aggregation: str = 'raw',
                   tail: Union[str, Tail] = Tail.UPPER, rng: Optional[RngStream] = None,
                   threads: int = 1, summary: Optional[PairwiseSummary] = None) -> PValueEstimate:
    """Permutation P value of a single score; see permute_pvalues"""
    return permute_pvalues(dm, target, [score_fn], n_perms, aggregation, tail, rng,
                           threads, summary)[0]


def null_cdfs(dm: DataMatrix, target: int, builders: Sequence[SetsBuilder], mode: str = 'M',
              n_perms: int = DEFAULT_PERMUTATIONS, rng: Optional[RngStream] = None,
              threads: int = 1, summary: Optional[PairwiseSummary] = None) -> List[NullCdfs]:
    """
    Null c.d.f.s of m per conditioning state, estimated from permutations

    The replicates come from rng.child(NULL_STREAM, k), a batch independent
    of the one used for P values.

    Args:
        dm: data matrix
        target: permuted column (focal column, or the DV for dvKS)
        builders: callables (target values, total matches) -> ConditionalSets
        mode: 'M' or 'i'
        n_perms: number of replicates

    Returns:
        One {state label: c.d.f. over m} mapping per builder
    """
    rng = rng if rng is not None else RngStream.from_entropy()
    summary = summary if summary is not None else total_matches(dm)
    original = np.array(dm.column(target))
    pairs = summary.pairs
    base_totals = summary.total_matches.astype(np.int32) - pm_column_fast(original, pairs)
    stream = rng.child(NULL_STREAM)

    def replicate(k: int) -> List[List[Tuple[str, np.ndarray]]]:
        permuted = _draw_permutation(original, stream.child(k).generator())
        totals = base_totals + pm_column_fast(permuted, pairs)
        return [null_cdf_states(build(permuted, totals), mode) for build in builders]

    results = _map_replicates(replicate, n_perms, threads)
    cdfs = []
    for j in range(len(builders)):
        pooled: Dict[str, np.ndarray] = {}
        for rep in results:
            for label, counts in rep[j]:
                counts = np.asarray(counts, dtype=np.float64)
                pooled[label] = pooled.get(label, 0.0) + counts
        cdfs.append({label: np.cumsum(counts) / counts.sum()
                     for label, counts in pooled.items() if counts.sum() > 0})
    return cdfs


def sidak_cutoff(alpha: float, n_tests: int) -> float:
    """
    Per-test cutoff 1 - (1 - alpha)^(1/n) for a family of n tests

    Raises:
        ValidationError: unless 0 < alpha < 1 and n_tests >= 1
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"Family error must lie in (0, 1), got {alpha}")
    if n_tests < 1:
        raise ValidationError(f"Family size must be at least 1, got {n_tests}")
    return float(-np.expm1(np.log1p(-alpha) / n_tests))


def fisher_statistic(pvals: Sequence[float]) -> float:
    """
    Sum of -2 ln p_i

    P values that underflowed to 0 count as the smallest positive double.
    """
    values = np.asarray(pvals, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("Fisher combination needs at least one P value")
    if not np.all((values >= 0.0) & (values <= 1.0)):
        raise ValidationError("Fisher combination needs P values in [0, 1]")
    values = np.maximum(values, np.finfo(np.float64).tiny)
    return float(-2.0 * np.log(values).sum())


def fisher_combine(pvals: Sequence[float]) -> float:
    """
    Combined P value: upper tail of chi-square with 2n d.f. at sum -2 ln p_i

    Raises:
        ValidationError: on an empty list or any P value outside [0, 1]
    """
    statistic = fisher_statistic(pvals)
    return float(stats.chi2.sf(statistic, 2 * len(pvals)))


def marginal_chi2(dm: DataMatrix, iv: int, dv: Optional[int] = None) -> Tuple[float, float]:
    """
    Classical contingency chi-square of IV markers against DV categories

    Markers absent from both categories are skipped, so d.f. = (present markers - 1).

    Returns:
        (chi-square, standard P value)
    """
    dv = dm.dv_index if dv is None else dv
    if dv is None:
        raise ValidationError("Marginal chi-square needs a designated DV")
    table = _category_table(dm, iv, dv)
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 0.0, 1.0
    chi2, p, _, _ = stats.chi2_contingency(table, correction=False)
    return float(chi2), float(p)


def _category_table(dm: DataMatrix, iv: int, dv: int) -> np.ndarray:
    arity = dm.arities[iv]
    dv_values = dm.column(dv)
    iv_values = dm.column(iv)
    return np.vstack([np.bincount(iv_values[dv_values == g], minlength=arity) for g in (0, 1)])


@dataclass(frozen=True)
class ToggleEntry:
    """Markers at one IV and DV category switched from one marker to another"""
    iv: int
    category: int
    from_marker: int
    to_marker: int
    count: int


@dataclass
class ToggleLog:
    """Every toggle applied by one erasure pass"""
    entries: List[ToggleEntry] = field(default_factory=list)

    @property
    def treated_ivs(self) -> Tuple[int, ...]:
        return tuple(sorted({entry.iv for entry in self.entries}))

    def toggles(self, iv: Optional[int] = None, category: Optional[int] = None) -> int:
        return sum(e.count for e in self.entries
                   if (iv is None or e.iv == iv) and (category is None or e.category == category))


def _largest_remainder(total: int, freqs: np.ndarray) -> np.ndarray:
    target = total * freqs
    counts = np.floor(target).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        order = np.lexsort((np.arange(freqs.size), -(target - counts)))
        counts[order[:remainder]] += 1
    return counts


def erase_marginals(dm: DataMatrix, p_threshold: float, rng: RngStream,
                    ivs: Optional[Sequence[int]] = None) -> Tuple[DataMatrix, ToggleLog]:
    """
    Toggle excess markers until each treated IV has no marginal effect

    An IV is treated when its marginal chi-square P value is at most
    p_threshold. Within each DV category, randomly chosen cells holding a
    marker in excess of the pooled-frequency expectation are switched to
    markers in deficit. IV j draws from rng.child(j).

    Args:
        dm: data matrix with a designated binary DV
        p_threshold: marginal P value at or below which an IV is treated
        rng: stream for the random cell choices
        ivs: IVs to consider, all by default

    Returns:
        Tuple of (modified matrix, ToggleLog)
    """
    if dm.dv_index is None:
        raise ValidationError("Marginal erasure needs a designated DV")
    dv_values = dm.dv
    markers = np.array(dm.markers)
    log = ToggleLog()
    for iv in (dm.iv_indices if ivs is None else ivs):
        _, p = marginal_chi2(dm, iv)
        if p > p_threshold:
            continue
        gen = rng.child(iv).generator()
        column = markers[:, iv]
        pooled = np.bincount(column, minlength=dm.arities[iv]) / dm.rows
        for category in (0, 1):
            members = np.flatnonzero(dv_values == category)
            counts = np.bincount(column[members], minlength=dm.arities[iv])
            excess = counts - _largest_remainder(members.size, pooled)
            deficit_slots = np.repeat(np.arange(excess.size), np.clip(-excess, 0, None))
            deficit_slots = gen.permutation(deficit_slots)
            position = 0
            for marker in np.flatnonzero(excess > 0):
                holders = members[column[members] == marker]
                chosen = gen.choice(holders, size=int(excess[marker]), replace=False)
                replacements = deficit_slots[position:position + chosen.size]
                position += chosen.size
                column[chosen] = replacements
                for to_marker in np.unique(replacements):
                    log.entries.append(ToggleEntry(iv, category, int(marker), int(to_marker),
                                                   int(np.count_nonzero(replacements == to_marker))))
        logger.debug("Erased marginal effect at column %d (P=%.3g)", iv, p)
    erased = DataMatrix(markers, dm.arities, dm.dv_index, dm.column_ids)
    logger.info("Erased marginal effects at %d of %d IVs", len(log.treated_ivs), len(dm.iv_indices))
    return erased, log


def erase_interactions(dm: DataMatrix, ivs: Sequence[int], rng: RngStream) -> DataMatrix:
    """
    Shuffle each listed IV within each DV category

    Per-category marker counts of the IV are unchanged, so an erased
    marginal effect stays erased, while every joint effect the IV shares
    with other columns and the DV is broken. IV j draws from rng.child(j).

    Args:
        dm: data matrix with a designated DV
        ivs: IVs whose effects are erased
        rng: stream for the shuffles

    Returns:
        Modified copy of dm
    """
    if dm.dv_index is None:
        raise ValidationError("Interaction erasure needs a designated DV")
    if dm.dv_index in ivs:
        raise ValidationError("The DV cannot be erased")
    dv_values = dm.dv
    markers = np.array(dm.markers)
    for iv in ivs:
        gen = rng.child(iv).generator()
        for category in (0, 1):
            members = np.flatnonzero(dv_values == category)
            markers[members, iv] = gen.permutation(markers[members, iv])
    logger.info("Erased joint effects at %d IV(s)", len(ivs))
    return DataMatrix(markers, dm.arities, dm.dv_index, dm.column_ids)


def dv_scan_pvalues(dm: DataMatrix, specs: Sequence[DvScoreSpec], ivs: Sequence[int],
                    n_perms: int = DEFAULT_PERMUTATIONS,
                    rng: Optional[RngStream] = None, tail: Union[str, Tail] = Tail.UPPER,
                    threads: int = 1,
                    summary: Optional[PairwiseSummary] = None) -> Dict[Tuple[int, str], PValueEstimate]:
    """
    DV-permutation P values of every (IV, dv score) pair

    One batch of DV permutations is shared by all IVs and scores; dvKS
    nulls come from a second, independent batch.

    Returns:
        Mapping (IV index, score name) -> PValueEstimate
    """
    if dm.dv_index is None:
        raise ValidationError("DV scores need a designated DV")
    rng = rng if rng is not None else RngStream.from_entropy()
    summary = summary if summary is not None else total_matches(dm)
    dv = dm.dv_index
    pairs = summary.pairs

    cdfs: Dict[Tuple[int, str], NullCdfs] = {}
    ks_specs = [spec for spec in specs if spec.needs_null_cdfs]
    for spec in ks_specs:
        builders = [_iv_sets_builder(dm, iv, spec.sets_mode, pairs) for iv in ivs]
        for iv, cdf in zip(ivs, null_cdfs(dm, dv, builders, spec.conditioning, n_perms,
                                          rng, threads, summary)):
            cdfs[(iv, spec.name)] = cdf

    fns, aggregations, keys = [], [], []
    for iv in ivs:
        for spec in specs:
            fns.append(spec.dv_score_function(iv, dm.column(iv), dm.arities[iv], dv, dm.cols,
                                              pairs, cdfs.get((iv, spec.name))))
            aggregations.append(spec.aggregation)
            keys.append((iv, spec.name))
    estimates = permute_pvalues(dm, dv, fns, n_perms, aggregations, tail, rng, threads, summary)
    return dict(zip(keys, estimates))


def _iv_sets_builder(dm: DataMatrix, iv: int, mode: str, pairs) -> SetsBuilder:
    values = np.array(dm.column(iv))
    arity = dm.arities[iv]

    def build(_dv_values: np.ndarray, totals: np.ndarray) -> ConditionalSets:
        return conditional_sets_from(values, arity, totals, dm.cols, mode, iv, pairs)

    return build


@dataclass
class TuningResult:
    """Chosen erasure threshold and the uniformity check behind it"""
    threshold: float
    ks_pvalue: float
    diagnostics: Dict[float, float]


def tune_erasure(dm: DataMatrix, n_added_random: int, scheme: FrequencyScheme,
                 target_level: float, n_trials: int, rng: RngStream,
                 score: Optional[DvScoreSpec] = None, n_perms: int = DEFAULT_PERMUTATIONS,
                 grid: Sequence[float] = DEFAULT_THRESHOLD_GRID,
                 threads: int = 1) -> TuningResult:
    """
    Largest erasure threshold that leaves added random IVs with uniform P values

    For each threshold, from the largest down, n_trials times: random IVs
    are appended, marginal effects are erased, and the added IVs are
    scored against the DV. The threshold is accepted when the pooled P
    values of the added IVs pass a KS test against uniform at target_level.

    Args:
        dm: data matrix with a designated binary DV
        n_added_random: random IVs appended per trial
        scheme: frequency scheme of the added IVs
        target_level: KS P value the pooled P values must exceed
        n_trials: re-additions per threshold
        rng: stream; trial t of threshold g uses rng.child(g, t)
        score: dv score, dvMom^2-i by default
        n_perms: DV permutations per trial
        grid: candidate thresholds

    Returns:
        TuningResult

    Raises:
        SearchExhaustedError: if no threshold passes
    """
    if dm.dv_index is None:
        raise ValidationError("Erasure tuning needs a designated DV")
    if n_added_random < 1 or n_trials < 1:
        raise ValidationError("Tuning needs at least one added IV and one trial")
    score = score if score is not None else DvScoreSpec('mom', 2, 'i')
    diagnostics: Dict[float, float] = {}

    for g, threshold in enumerate(sorted(grid, reverse=True)):
        pooled = []
        for t in range(n_trials):
            trial = rng.child(g, t)
            added = generate_null_dm(dm.rows, n_added_random, scheme, trial.child(0))
            added = DataMatrix(added.markers, added.arities, None,
                               column_ids_for('R', n_added_random))
            work = dm.hstack(added)
            erased, _ = erase_marginals(work, threshold, trial.child(1))
            ivs = list(range(dm.cols, work.cols))
            estimates = dv_scan_pvalues(erased, [score], ivs, n_perms, trial.child(2),
                                        threads=threads)
            pooled.extend(est.p for est in estimates.values())
        ks_p = float(stats.kstest(pooled, 'uniform').pvalue)
        diagnostics[threshold] = ks_p
        logger.info("Threshold %.3g: added-IV uniformity KS P=%.3g", threshold, ks_p)
        if ks_p > target_level:
            return TuningResult(threshold, ks_p, diagnostics)

    raise SearchExhaustedError(
        f"No erasure threshold in the grid passes uniformity at level {target_level}",
        {'ks_pvalues': diagnostics},
    )
