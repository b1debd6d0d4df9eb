"""Single-focal-column scores: Mom^n, CHIx, the LKx family, KS and meePAS"""

import logging
import math
import re
from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from ..exceptions import ValidationError
from .data_matrix import DataMatrix
from .pairwise import (
    ConditionalSets,
    PairIndex,
    PairwiseSummary,
    conditional_sets_from,
    pair_index,
)

logger = logging.getLogger(__name__)

UNDEFINED = float('nan')

# log(k!) is tabulated up to this k; larger arguments use the Stirling series
LOG_FACTORIAL_TABLE_MAX = 20000
_LOG_FACTORIAL_TABLE = gammaln(np.arange(LOG_FACTORIAL_TABLE_MAX + 1, dtype=np.float64) + 1.0)
_HALF_LOG_TWO_PI = 0.9189385332046727

# Pair-by-column elements held at once by mee_pas
MEE_BLOCK_ELEMENTS = 1 << 22

ScoreFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
NullCdfs = Mapping[str, np.ndarray]


def log_factorial(k):
    """
    Natural log of k!

    Args:
        k: non-negative integer or array of integers

    Returns:
        float, or float array shaped like k
    """
    values = np.asarray(k, dtype=np.int64)
    if np.any(values < 0):
        raise ValidationError("log_factorial needs non-negative arguments")
    small = values <= LOG_FACTORIAL_TABLE_MAX
    result = np.empty(values.shape, dtype=np.float64)
    result[small] = _LOG_FACTORIAL_TABLE[values[small]]
    if not np.all(small):
        x = values[~small].astype(np.float64)
        result[~small] = (_HALF_LOG_TWO_PI + (x + 0.5) * np.log(x) - x
                          + 1.0 / (12.0 * x) - 1.0 / (360.0 * x ** 3) + 1.0 / (1260.0 * x ** 5))
    if np.ndim(k) == 0:
        return float(result)
    return result


def _xlogx_over(counts: np.ndarray, total: int) -> float:
    """Sum of c log(c / total) over non-zero counts"""
    counts = np.asarray(counts, dtype=np.float64).ravel()
    counts = counts[counts > 0]
    return float((counts * np.log(counts / total)).sum())


def moment_of_counts(counts: np.ndarray, n: int, standardized: bool = False) -> float:
    """
    n-th moment of m given the count of pairs at each m = 0, 1, ...

    Mean for n = 1, central moment for n >= 2, optionally divided by sd^n.
    Empty distributions give the undefined sentinel.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return UNDEFINED
    m = np.arange(counts.size, dtype=np.float64)
    mean = float((counts * m).sum() / total)
    if n == 1:
        return mean
    centered = m - mean
    value = float((counts * centered ** n).sum() / total)
    if standardized and n >= 3:
        variance = float((counts * centered ** 2).sum() / total)
        if variance <= 0:
            return UNDEFINED
        return value / variance ** (n / 2.0)
    return value


@dataclass
class MomentScore:
    """
    Moments of m for one focal column

    Attributes:
        order: moment order n
        conditioning: 'M', 'i', or for dv scores 'plain', 'MM', 'ik'
        values: one value per conditioning cell, NaN where the cell is empty
        labels: cell labels, e.g. ('M',) or ('0/0', '1/1')
    """
    order: int
    conditioning: str
    values: np.ndarray
    labels: Tuple[str, ...]

    @property
    def total(self) -> float:
        """Sum over cells; empty cells count 0, all-empty gives NaN"""
        if np.all(np.isnan(self.values)):
            return UNDEFINED
        return float(np.nansum(self.values))

    @property
    def undefined(self) -> bool:
        return bool(np.all(np.isnan(self.values)))


def mom(sets: ConditionalSets, n: int, conditioning: str = 'M',
        standardized: bool = False) -> MomentScore:
    """
    n-th moment of non-focal matches conditional on a focal match

    Args:
        sets: conditional sets of the focal column
        n: moment order, at least 1
        conditioning: 'M' pools every match state; 'i' gives one value per
                      focal marker i, over pairs with an (i,i) match
        standardized: divide central moments of order >= 3 by sd^n

    Returns:
        MomentScore
    """
    if n < 1:
        raise ValidationError(f"Moment order must be at least 1, got {n}")
    if conditioning == 'M':
        value = moment_of_counts(sets.match_distribution(), n, standardized)
        return MomentScore(n, 'M', np.array([value]), ('M',))
    if conditioning == 'i':
        if sets.mode == 'generic':
            raise ValidationError("Per-marker moments need per-marker or pairs conditional sets")
        rows = [k for k, is_match in enumerate(sets.match_states) if is_match]
        values = np.array([moment_of_counts(sets.joint_counts[k], n, standardized) for k in rows])
        return MomentScore(n, 'i', values, tuple(sets.state_labels[k] for k in rows))
    raise ValidationError(f"Unknown moment conditioning '{conditioning}'")


def _chi2_of_table(observed: np.ndarray, row_totals: np.ndarray, col_totals: np.ndarray,
                   n_pairs: int) -> float:
    expected = np.outer(row_totals, col_totals).astype(np.float64) / n_pairs
    populated = expected > 0
    diff = observed[populated] - expected[populated]
    return float((diff * diff / expected[populated]).sum())


def _chix_table(sets: ConditionalSets, mode: str) -> np.ndarray:
    if mode == 'M':
        return sets.collapsed().joint_counts
    if mode == 'ij':
        if sets.mode != 'pairs':
            raise ValidationError("CHIx-ij needs conditional sets built in 'pairs' mode")
        return sets.joint_counts
    raise ValidationError(f"Unknown CHIx mode '{mode}'")


def chix(sets: ConditionalSets, mode: str = 'M') -> float:
    """
    Chi-square departure of {S_i..M_m} from the product of its margins

    Expected counts are S_i * M_m / W; cells with expected 0 are skipped.

    Args:
        sets: conditional sets of the focal column
        mode: 'M' (match/mismatch states) or 'ij' (fully specified pair states)

    Returns:
        CHIx score
    """
    table = _chix_table(sets, mode)
    if sets.n_pairs == 0:
        return 0.0
    return _chi2_of_table(table, table.sum(axis=1), table.sum(axis=0), sets.n_pairs)


def chix_dof(sets: ConditionalSets, mode: str = 'M') -> int:
    """Degrees of freedom (populated states - 1)(populated m values - 1)"""
    table = _chix_table(sets, mode)
    states = int(np.count_nonzero(table.sum(axis=1)))
    support = int(np.count_nonzero(table.sum(axis=0)))
    return max(states - 1, 0) * max(support - 1, 0)


@dataclass(frozen=True)
class LkxBundle:
    """Log-likelihoods of the observed pairing of focal states with match fragments"""
    log_lkx: float
    log_lkm: float
    log_maxlkm: float


def lkx_from_table(joint: np.ndarray, left: np.ndarray, right: np.ndarray) -> LkxBundle:
    """
    Hypergeometric and multinomial likelihoods of a pairing table

    Args:
        joint: observed pairing counts, any shape (rows are the left categories)
        left: counts of the left categories
        right: counts of the right fragments, flattened

    Returns:
        LkxBundle
    """
    n_pairs = int(np.asarray(joint).sum())
    if n_pairs == 0:
        return LkxBundle(0.0, 0.0, 0.0)
    joint = np.asarray(joint).ravel()
    log_lkx = (float(np.sum(log_factorial(np.asarray(left))))
               + float(np.sum(log_factorial(np.asarray(right).ravel())))
               - log_factorial(n_pairs)
               - float(np.sum(log_factorial(joint))))
    log_lkm = log_lkx + _xlogx_over(left, n_pairs) + _xlogx_over(right, n_pairs)
    log_maxlkm = (log_factorial(n_pairs) - float(np.sum(log_factorial(joint)))
                  + _xlogx_over(joint, n_pairs))
    return LkxBundle(log_lkx, log_lkm, log_maxlkm)


def lkx(sets: ConditionalSets) -> LkxBundle:
    """
    LKx, LKm and maxLKm of the conditional sets in log space

    LKx is the probability of the observed {S_i..M_m} when the S_i's pair
    at random with the M_m's; LKm samples both with replacement at their PM
    frequencies; maxLKm is the multinomial likelihood at P_im = (S_i..M_m)/W.
    """
    return lkx_from_table(sets.joint_counts, sets.s_counts, sets.m_counts)


def _observed_cdf(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return np.cumsum(counts) / counts.sum()


def _ks_states(sets: ConditionalSets, mode: str) -> List[Tuple[str, np.ndarray]]:
    if mode == 'M':
        return [('M', sets.match_distribution())]
    if mode == 'i':
        return [(label, sets.joint_counts[k])
                for k, (label, is_match) in enumerate(zip(sets.state_labels, sets.match_states))
                if is_match]
    raise ValidationError(f"Unknown KS mode '{mode}'")


def ks_cells(sets: ConditionalSets, null_cdfs: NullCdfs, mode: str = 'M') -> np.ndarray:
    """Per-state sup-norm distances; empty states give NaN"""
    cells = []
    for label, counts in _ks_states(sets, mode):
        if counts.sum() == 0:
            cells.append(UNDEFINED)
            continue
        if label not in null_cdfs:
            raise ValidationError(f"No null c.d.f. for populated state '{label}'")
        null = np.asarray(null_cdfs[label], dtype=np.float64)
        observed = _observed_cdf(counts)
        width = max(null.size, observed.size)
        observed = np.pad(observed, (0, width - observed.size), constant_values=1.0)
        null = np.pad(null, (0, width - null.size), constant_values=1.0)
        cells.append(float(np.max(np.abs(observed - null))))
    return np.array(cells)


def ks(sets: ConditionalSets, null_cdfs: NullCdfs, mode: str = 'M') -> float:
    """
    Summed Kolmogorov-Smirnov departure of m given each focal state

    Args:
        sets: conditional sets of the focal column
        null_cdfs: c.d.f. of m per state label ('M', or '0/0', '1/1', ...)
        mode: 'M' or 'i'

    Returns:
        Sum of sup |observed c.d.f. - null c.d.f.| over populated states

    Raises:
        ValidationError: if a populated state has no null c.d.f.
    """
    return float(np.nansum(ks_cells(sets, null_cdfs, mode)))


def null_cdf_states(sets: ConditionalSets, mode: str = 'M') -> List[Tuple[str, np.ndarray]]:
    """State labels and m-count vectors that a KS null is estimated from"""
    return _ks_states(sets, mode)


@dataclass(frozen=True)
class MeeResult:
    """Largest change of one column's Mom^n-M caused by excluding another column"""
    column: int
    delta: float
    excluded: Optional[int]

    @property
    def sign(self) -> int:
        if math.isnan(self.delta):
            return 0
        return int(np.sign(self.delta))


def _central_from_raw(raw: np.ndarray, n: int, shift: float) -> float:
    """Moment of order n from raw moments about `shift` (raw[0] = 1)"""
    if n == 1:
        return float(raw[1] + shift)
    mean = raw[1]
    value = 0.0
    for j in range(n + 1):
        value += math.comb(n, j) * raw[j] * (-mean) ** (n - j)
    return float(value)


def mee_pas(dm: DataMatrix, summary: PairwiseSummary, n: int = 3,
            block_elements: int = MEE_BLOCK_ELEMENTS) -> List[MeeResult]:
    """
    Maximal exclusion effect of every column on every other column's Mom^n-M

    Power sums of m over pairs matching at two columns at once are collected
    block by block over the pairwise comparisons; the moment of column c with
    column e removed then follows from a binomial expansion.

    Args:
        dm: data matrix, at least 2 columns
        summary: its pairwise summary
        n: moment order
        block_elements: pairs times columns compared per block

    Returns:
        One MeeResult per column, ties broken toward the lowest excluded index
    """
    if dm.cols < 2:
        raise ValidationError("meePAS needs at least 2 columns")
    if n < 1:
        raise ValidationError(f"Moment order must be at least 1, got {n}")

    first, second = summary.pairs
    shift = float(summary.total_matches.mean()) - 1.0
    sums = np.zeros((n + 1, dm.cols, dm.cols), dtype=np.float64)
    block = max(1, block_elements // dm.cols)
    for start in range(0, summary.n_pairs, block):
        stop = min(summary.n_pairs, start + block)
        matches = (dm.markers[first[start:stop]] == dm.markers[second[start:stop]]).astype(np.float64)
        centered = summary.total_matches[start:stop] - 1.0 - shift
        weight = np.ones_like(centered)
        for k in range(n + 1):
            sums[k] += matches.T @ (matches * weight[:, None])
            weight = weight * centered

    results = []
    for c in range(dm.cols):
        count = sums[0, c, c]
        if count == 0:
            results.append(MeeResult(c, UNDEFINED, None))
            continue
        base_raw = np.array([sums[k, c, c] for k in range(n + 1)]) / count
        baseline = _central_from_raw(base_raw, n, shift)
        deltas = np.full(dm.cols, np.nan)
        for e in range(dm.cols):
            if e == c:
                continue
            raw = np.empty(n + 1)
            for k in range(n + 1):
                total = sums[k, c, c]
                for j in range(1, k + 1):
                    total += math.comb(k, j) * (-1) ** j * sums[k - j, c, e]
                raw[k] = total / count
            deltas[e] = _central_from_raw(raw, n, shift) - baseline
        excluded = int(np.nanargmax(np.abs(deltas)))
        results.append(MeeResult(c, float(deltas[excluded]), excluded))
    logger.debug("meePAS of order %d over %d columns", n, dm.cols)
    return results


_MOMENT_NAME = re.compile(r'^mom(\d+)(s?)(M|iz|i)?$')
_CONDITIONING_MODES = {'M': 'generic', 'i': 'per-marker', 'ij': 'pairs'}


@dataclass(frozen=True)
class ScoreSpec:
    """
    A named single-focal-column score

    Attributes:
        family: 'mom', 'chix', 'lkx', 'lkxm', 'maxlkm' or 'ks'
        order: moment order (mom only)
        conditioning: 'M', 'i' or 'ij'
        aggregation: 'raw' sums the cells; 'z' sums per-cell Z values
        standardized: standardized rather than central moments
    """
    family: str
    order: int = 1
    conditioning: str = 'M'
    aggregation: str = 'raw'
    standardized: bool = False

    @classmethod
    def parse(cls, text: str) -> 'ScoreSpec':
        """
        Parse names such as mom1M, mom2i, mom1iz, mom3s, chix-M, chix-ij,
        lkx, lkx-M, lkxm, maxlkm, ks-M, ks-i

        The likelihood family conditions on the fully specified pair states
        (0/0, 1/1, ..., mismatch) unless '-M' asks for match/mismatch only;
        'lkx-ij' is accepted as a synonym of 'lkx'.

        Raises:
            ValidationError: on unknown names
        """
        name = text.strip()
        match = _MOMENT_NAME.match(name)
        if match:
            order = int(match.group(1))
            if order < 1:
                raise ValidationError(f"Moment order must be at least 1 in '{text}'")
            suffix = match.group(3) or 'M'
            conditioning = 'i' if suffix.startswith('i') else 'M'
            aggregation = 'z' if suffix == 'iz' else 'raw'
            return cls('mom', order, conditioning, aggregation, bool(match.group(2)))
        family, _, mode = name.partition('-')
        if family == 'chix' and mode in ('M', 'ij'):
            return cls('chix', conditioning=mode)
        if family in ('lkx', 'lkxm', 'maxlkm') and mode in ('', 'M', 'ij'):
            return cls(family, conditioning=mode or 'ij')
        if family == 'ks' and mode in ('M', 'i'):
            return cls('ks', conditioning=mode)
        raise ValidationError(f"Unknown score '{text}'")

    @property
    def name(self) -> str:
        if self.family == 'mom':
            suffix = 'iz' if self.aggregation == 'z' else self.conditioning
            return f"mom{self.order}{'s' if self.standardized else ''}{suffix}"
        if self.family in ('lkx', 'lkxm', 'maxlkm') and self.conditioning == 'ij':
            return self.family
        return f"{self.family}-{self.conditioning}"

    @property
    def sets_mode(self) -> str:
        """Conditional-set mode the score needs"""
        if self.family == 'mom' and self.conditioning == 'i':
            return 'per-marker'
        return _CONDITIONING_MODES[self.conditioning]

    @property
    def needs_null_cdfs(self) -> bool:
        return self.family == 'ks'

    def cells(self, sets: ConditionalSets, null_cdfs: Optional[NullCdfs] = None) -> np.ndarray:
        """
        Per-cell raw values of this score

        The permutation machinery sums the cells ('raw') or their Z values ('z').
        Likelihood scores are negated so that larger values are more extreme.
        """
        if self.family == 'mom':
            return mom(sets, self.order, self.conditioning, self.standardized).values
        if self.family == 'chix':
            return np.array([chix(sets, self.conditioning)])
        if self.family == 'ks':
            if null_cdfs is None:
                raise ValidationError(f"Score {self.name} needs null c.d.f.s")
            return ks_cells(sets, null_cdfs, self.conditioning)
        bundle = lkx(sets)
        if self.family == 'lkx':
            return np.array([-bundle.log_lkx])
        if self.family == 'lkxm':
            return np.array([-bundle.log_lkm])
        return np.array([bundle.log_maxlkm])

    def score_function(self, focal: int, arity: int, n_cols: int,
                       pairs: Optional[PairIndex] = None,
                       null_cdfs: Optional[NullCdfs] = None) -> ScoreFunction:
        """
        Closure scoring a (possibly permuted) focal column

        The closure takes the focal marker vector and the matching total
        matches and returns this score's cells.
        """
        mode = self.sets_mode

        def score(values: np.ndarray, totals: np.ndarray) -> np.ndarray:
            index = pairs if pairs is not None else pair_index(len(values))
            sets = conditional_sets_from(values, arity, totals, n_cols, mode, focal, index)
            return self.cells(sets, null_cdfs)

        return score
