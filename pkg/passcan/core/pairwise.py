"""Implicit pairwise matrix: total matches, fast pairwise columns and conditional sets"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from ..exceptions import ValidationError
from .data_matrix import DataMatrix

logger = logging.getLogger(__name__)

CONDITIONING_MODES = ('generic', 'per-marker', 'pairs')
HYBRID_MODES = ('MM', 'ik', 'ijkl')

# Bytes allowed for one block of the one-hot Gram product
_GRAM_BLOCK_BYTES = 1 << 25

PairIndex = Tuple[np.ndarray, np.ndarray]


@lru_cache(maxsize=8)
def pair_index(rows: int) -> PairIndex:
    """
    Row indices (a, b), a < b, of every pairwise comparison in lexicographic order

    Returns:
        Two read-only arrays of length R(R-1)/2
    """
    first, second = np.triu_indices(rows, k=1)
    first = first.astype(np.int32)
    second = second.astype(np.int32)
    first.setflags(write=False)
    second.setflags(write=False)
    return first, second


def _one_hot(markers: np.ndarray, arities: Tuple[int, ...]) -> np.ndarray:
    offsets = np.concatenate([[0], np.cumsum(arities)[:-1]]).astype(np.int64)
    encoded = np.zeros((markers.shape[0], int(sum(arities))), dtype=np.float64)
    encoded[np.arange(markers.shape[0])[:, None], markers + offsets[None, :]] = 1.0
    return encoded


@dataclass(frozen=True, eq=False)
class PairwiseSummary:
    """
    Total matches of every pairwise comparison, scored once per data matrix

    Attributes:
        rows: rows R of the data matrix
        cols: columns L of the data matrix
        total_matches: length-W vector, pair (a, b) in lexicographic order
        per_column_match_freq: fraction of the W pairs that match at each column
    """
    rows: int
    cols: int
    total_matches: np.ndarray
    per_column_match_freq: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.total_matches.size

    @property
    def pairs(self) -> PairIndex:
        return pair_index(self.rows)

    def replace_column(self, j: int, old_values: np.ndarray,
                       new_values: np.ndarray) -> 'PairwiseSummary':
        """Summary after column j changes from old_values to new_values"""
        pairs = self.pairs
        totals = (self.total_matches - pm_column_fast(old_values, pairs)
                  + pm_column_fast(new_values, pairs)).astype(np.int32)
        freq = np.array(self.per_column_match_freq)
        freq[j] = _match_fraction(np.asarray(new_values), self.n_pairs)
        return PairwiseSummary(self.rows, self.cols, totals, freq)


def _match_fraction(column: np.ndarray, n_pairs: int) -> float:
    counts = np.bincount(column).astype(np.int64)
    return float((counts * (counts - 1) // 2).sum()) / n_pairs


def total_matches(dm: DataMatrix) -> PairwiseSummary:
    """
    Count matching columns for every pair of rows

    The one-hot encoded matrix is multiplied with its own transpose in row
    blocks, so memory stays bounded while the full W x L pairwise matrix is
    never built.

    Args:
        dm: data matrix

    Returns:
        PairwiseSummary for dm
    """
    n_rows = dm.rows
    encoded = _one_hot(dm.markers, dm.arities)
    block = max(1, _GRAM_BLOCK_BYTES // (8 * n_rows))
    totals = np.empty(dm.n_pairs, dtype=np.int32)
    position = 0
    for start in range(0, n_rows - 1, block):
        stop = min(n_rows - 1, start + block)
        gram = encoded[start:stop] @ encoded[start:].T
        for a in range(start, stop):
            segment = gram[a - start, a - start + 1:]
            totals[position:position + segment.size] = np.rint(segment)
            position += segment.size

    freq = np.array([_match_fraction(dm.column(j), dm.n_pairs) for j in range(dm.cols)])
    logger.debug("Scored %d pairwise comparisons over %d columns", dm.n_pairs, dm.cols)
    return PairwiseSummary(n_rows, dm.cols, totals, freq)


def pm_column_fast(column: np.ndarray, pairs: Optional[PairIndex] = None) -> np.ndarray:
    """
    Pairwise match indicators of one column, tract by tract

    Tract i holds the comparisons of row i with rows i+1..R. For a binary
    column the tract is a copy of markers i+1..R when marker i is 1 and the
    negated copy otherwise; other columns use an equality mask.

    Args:
        column: marker vector of length R
        pairs: cached pair index for R rows

    Returns:
        int8 vector of length W, 1 = match
    """
    column = np.asarray(column)
    first, second = pairs if pairs is not None else pair_index(column.size)
    head = column[first]
    tail = column[second]
    if column.size and column.max() <= 1:
        return np.where(head == 1, tail, 1 - tail).astype(np.int8)
    return (head == tail).astype(np.int8)


def _state_codes(column: np.ndarray, arity: int, match: np.ndarray,
                 pairs: PairIndex, mode: str) -> Tuple[np.ndarray, Tuple[str, ...], Tuple[bool, ...]]:
    """Focal pairwise state of every pair plus state labels and match flags"""
    head = column[pairs[0]].astype(np.int64)
    if mode in ('generic', 'MM'):
        return (1 - match).astype(np.int64), ('match', 'mismatch'), (True, False)
    if mode in ('per-marker', 'ik'):
        codes = np.where(match == 1, head, arity)
        labels = tuple(f"{i}/{i}" for i in range(arity)) + ('mismatch',)
        return codes, labels, (True,) * arity + (False,)
    if mode in ('pairs', 'ijkl'):
        tail = column[pairs[1]].astype(np.int64)
        low = np.minimum(head, tail)
        high = np.maximum(head, tail)
        codes = low * arity - low * (low - 1) // 2 + (high - low)
        labels, flags = [], []
        for i in range(arity):
            for j in range(i, arity):
                labels.append(f"{i}/{j}")
                flags.append(i == j)
        return codes, tuple(labels), tuple(flags)
    raise ValidationError(f"Unknown conditioning mode '{mode}'")


@dataclass(frozen=True, eq=False)
class ConditionalSets:
    """
    Counts {S_i}, {M_m} and {S_i..M_m} for one focal column

    joint_counts has one row per focal pairwise state and one column per
    number m = 0..L-1 of non-focal matches.
    """
    focal: int
    mode: str
    state_labels: Tuple[str, ...]
    match_states: Tuple[bool, ...]
    joint_counts: np.ndarray

    @property
    def s_counts(self) -> np.ndarray:
        return self.joint_counts.sum(axis=1)

    @property
    def m_counts(self) -> np.ndarray:
        return self.joint_counts.sum(axis=0)

    @property
    def n_pairs(self) -> int:
        return int(self.joint_counts.sum())

    def match_distribution(self) -> np.ndarray:
        """Counts of m over pairs matching at the focal column, any marker"""
        flags = np.array(self.match_states)
        return self.joint_counts[flags].sum(axis=0)

    def collapsed(self) -> 'ConditionalSets':
        """The same counts with states pooled into generic match/mismatch"""
        flags = np.array(self.match_states)
        joint = np.vstack([self.joint_counts[flags].sum(axis=0),
                           self.joint_counts[~flags].sum(axis=0)])
        return ConditionalSets(self.focal, 'generic', ('match', 'mismatch'), (True, False), joint)


def conditional_sets_from(column: np.ndarray, arity: int, totals: np.ndarray, n_cols: int,
                          mode: str = 'generic', focal: int = 0,
                          pairs: Optional[PairIndex] = None) -> ConditionalSets:
    """ConditionalSets from a focal column and precomputed total matches"""
    column = np.asarray(column)
    pairs = pairs if pairs is not None else pair_index(column.size)
    match = pm_column_fast(column, pairs)
    m = totals.astype(np.int64) - match
    codes, labels, flags = _state_codes(column, arity, match, pairs, mode)
    joint = np.bincount(codes * n_cols + m, minlength=len(labels) * n_cols)
    return ConditionalSets(focal, mode, labels, flags, joint.reshape(len(labels), n_cols))


def conditional_sets(dm: DataMatrix, summary: PairwiseSummary, focal: int,
                     mode: str = 'generic') -> ConditionalSets:
    """
    Joint counts of focal pairwise states and non-focal match numbers

    Args:
        dm: data matrix
        summary: its pairwise summary
        focal: focal column index
        mode: 'generic' (match/mismatch), 'per-marker' ((i,i) matches plus one
              pooled mismatch state) or 'pairs' (every unordered marker pair)

    Returns:
        ConditionalSets for the focal column
    """
    if not 0 <= focal < dm.cols:
        raise ValidationError(f"Focal column {focal} out of range")
    if mode not in CONDITIONING_MODES:
        raise ValidationError(f"Unknown conditioning mode '{mode}'")
    return conditional_sets_from(dm.column(focal), dm.arities[focal], summary.total_matches,
                                 dm.cols, mode, focal, summary.pairs)


@dataclass(frozen=True, eq=False)
class HybridSets:
    """
    Counts over (state at S, state at E, m) with m excluding both focal spots

    joint_counts has shape (S states, E states, L-1).
    """
    s_col: int
    e_col: int
    mode: str
    s_labels: Tuple[str, ...]
    e_labels: Tuple[str, ...]
    s_match_states: Tuple[bool, ...]
    e_match_states: Tuple[bool, ...]
    joint_counts: np.ndarray

    @property
    def s_counts(self) -> np.ndarray:
        return self.joint_counts.sum(axis=(1, 2))

    @property
    def fragment_counts(self) -> np.ndarray:
        """The set {M_m..E_k}, shape (E states, L-1)"""
        return self.joint_counts.sum(axis=0)

    @property
    def m_counts(self) -> np.ndarray:
        return self.joint_counts.sum(axis=(0, 1))

    @property
    def n_pairs(self) -> int:
        return int(self.joint_counts.sum())


def hybrid_sets_from(s_column: np.ndarray, s_arity: int, e_column: np.ndarray, e_arity: int,
                     totals: np.ndarray, n_cols: int, mode: str = 'MM',
                     s_col: int = 0, e_col: int = 1,
                     pairs: Optional[PairIndex] = None) -> HybridSets:
    """HybridSets from the two focal columns and precomputed total matches"""
    pairs = pairs if pairs is not None else pair_index(len(s_column))
    s_column = np.asarray(s_column)
    e_column = np.asarray(e_column)
    s_match = pm_column_fast(s_column, pairs)
    e_match = pm_column_fast(e_column, pairs)
    m = totals.astype(np.int64) - s_match - e_match
    width = max(n_cols - 1, 1)
    s_codes, s_labels, s_flags = _state_codes(s_column, s_arity, s_match, pairs, mode)
    e_codes, e_labels, e_flags = _state_codes(e_column, e_arity, e_match, pairs, mode)
    cells = (s_codes * len(e_labels) + e_codes) * width + m
    joint = np.bincount(cells, minlength=len(s_labels) * len(e_labels) * width)
    return HybridSets(s_col, e_col, mode, s_labels, e_labels, s_flags, e_flags,
                      joint.reshape(len(s_labels), len(e_labels), width))


def hybrid_sets(dm: DataMatrix, summary: PairwiseSummary, s_col: int, e_col: int,
                mode: str = 'MM') -> HybridSets:
    """
    Joint counts of pairwise states at two focal columns and the remaining matches

    Double mismatches are pooled; their phase is not distinguished.

    Args:
        dm: data matrix
        summary: its pairwise summary
        s_col: first focal column, usually the DV
        e_col: second focal column, usually an IV
        mode: 'MM' (generic), 'ik' (per-marker matches) or 'ijkl' (every marker pair)

    Returns:
        HybridSets for the column pair

    Raises:
        ValidationError: if s_col equals e_col or the mode is unknown
    """
    if s_col == e_col:
        raise ValidationError("Hybrid sets need two distinct focal columns")
    if mode not in HYBRID_MODES:
        raise ValidationError(f"Unknown hybrid mode '{mode}'")
    return hybrid_sets_from(dm.column(s_col), dm.arities[s_col], dm.column(e_col),
                            dm.arities[e_col], summary.total_matches, dm.cols, mode,
                            s_col, e_col, summary.pairs)
