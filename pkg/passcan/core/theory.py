"""Exact and numeric predictions for pairwise-match counts and the reference contingency tests"""

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import gammaln

from ..exceptions import ResourceGuardError, ValidationError
from .data_matrix import DataMatrix, RngStream, as_generator, generate_null_dm, multinomial_counts
from .pairwise import pair_index, total_matches

logger = logging.getLogger(__name__)

MAX_EXPRESSION_LENGTH = 400
MAX_ENUMERATED_DMS = 10 ** 7
MAX_ENUMERATED_ROWS = 5000
MAX_CONTINGENCY_CELLS = 10 ** 6
DEFAULT_PURE_CHI2_BUDGET = 5 * 10 ** 6

# Polynomial variable for marker code S-1, S-2, S-3
_VARIABLES = ('p', 'q', 'r')

# Observed counts of the 16 IV combinations (IV1 most significant) in the
# reference matrix, affecteds then controls
REFERENCE_AFFECTED_COUNTS = (0, 0, 0, 6, 0, 0, 3, 1, 4, 9, 18, 13, 4, 3, 11, 28)
REFERENCE_CONTROL_COUNTS = (0, 2, 2, 0, 1, 0, 0, 5, 1, 7, 21, 17, 2, 7, 13, 22)


@dataclass(frozen=True)
class MatchDistribution:
    """Probability of every number m = 0..L of matches in a pairwise comparison"""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if abs(probs.sum() - 1.0) > 1e-10:
            raise ValidationError(f"Match probabilities sum to {probs.sum():.12g}, not 1")
        object.__setattr__(self, 'probs', probs)

    @property
    def m1(self) -> float:
        return float((np.arange(self.probs.size) * self.probs).sum())

    @property
    def m2(self) -> float:
        m = np.arange(self.probs.size)
        return float(((m - self.m1) ** 2 * self.probs).sum())


def uniform_match_counts(L: int, S: int, n_copies: int) -> List[int]:
    """
    Exact pair counts per m for a DM holding n copies of every S-marker sequence

    Returns:
        Integer counts for m = 0..L, summing to W = N(N-1)/2 with N = n S^L
    """
    if S < 2 or n_copies < 1 or L < 1:
        raise ValidationError("Need L >= 1, S >= 2 and at least one copy")
    sequences = S ** L
    counts = [n_copies * n_copies * sequences * math.comb(L, m) * (S - 1) ** (L - m) // 2
              for m in range(L)]
    counts.append(sequences * math.comb(n_copies, 2))
    return counts


def prob_m_uniform(L: int, S: int, n_copies: int, m: Optional[int] = None):
    """
    Exact probability of m matches among all pairs of such a DM

    Args:
        L: columns
        S: markers per column
        n_copies: copies of each distinct sequence
        m: a single m, or None for the whole distribution

    Returns:
        Probability of m, or a MatchDistribution
    """
    counts = uniform_match_counts(L, S, n_copies)
    n_pairs = sum(counts)
    if m is not None:
        if not 0 <= m <= L:
            raise ValidationError(f"m must lie in 0..{L}, got {m}")
        return float(Fraction(counts[m], n_pairs))
    return MatchDistribution(np.array([float(Fraction(c, n_pairs)) for c in counts]))


def enumerate_uniform_counts(L: int, S: int, n_copies: int) -> List[int]:
    """Pair counts per m by comparing every pair of rows of the DM explicitly"""
    n_rows = n_copies * S ** L
    if n_rows > MAX_ENUMERATED_ROWS:
        raise ResourceGuardError(f"{n_rows} rows exceed the enumeration limit {MAX_ENUMERATED_ROWS}")
    rows = np.repeat(np.array(list(itertools.product(range(S), repeat=L))), n_copies, axis=0)
    dm = DataMatrix(rows, (S,) * L)
    return np.bincount(total_matches(dm).total_matches, minlength=L + 1).tolist()


def _log_comb(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def prob_m_binary(L: int, p: float, m: Optional[int] = None):
    """
    Match-count distribution of two random binary sequences

    Every pair of sequences is visited once, first sequence with r ones and
    second with at least as many, weighting comparisons whose sequences
    differ in their number of ones twice.

    Args:
        L: sequence length
        p: frequency of marker 0
        m: a single m, or None for the whole distribution

    Raises:
        ResourceGuardError: when L exceeds MAX_EXPRESSION_LENGTH
    """
    if not 0.0 < p < 1.0:
        raise ValidationError(f"Marker frequency must lie in (0, 1), got {p}")
    if L > MAX_EXPRESSION_LENGTH:
        raise ResourceGuardError(f"L={L} exceeds the evaluation limit {MAX_EXPRESSION_LENGTH}")
    log_p, log_q = math.log(p), math.log1p(-p)
    probs = np.zeros(L + 1)
    for r in range(L + 1):
        k = np.arange(r + 1)[:, None]
        j = np.arange(L - r + 1)[None, :]
        visited = j >= k
        log_terms = (_log_comb(L, r) + _log_comb(r, k) + _log_comb(L - r, j)
                     + (2 * (L - r) - j + k) * log_p + (2 * r + j - k) * log_q
                     + np.where(j != k, math.log(2.0), 0.0))
        matches = np.broadcast_to(L - k - j, visited.shape)[visited]
        np.add.at(probs, matches, np.exp(log_terms[visited]))
    if m is not None:
        return float(probs[m])
    return MatchDistribution(probs)


def naive_binomial(L: int, freqs: Sequence[float]) -> MatchDistribution:
    """Binomial match distribution with per-column match probability sum f_s^2"""
    freqs = np.asarray(freqs, dtype=np.float64)
    if abs(freqs.sum() - 1.0) > 1e-12:
        raise ValidationError(f"Marker frequencies sum to {freqs.sum():.15g}, not 1")
    match = float((freqs ** 2).sum())
    return MatchDistribution(stats.binom.pmf(np.arange(L + 1), L, match))


def _match_histogram(dm: DataMatrix) -> np.ndarray:
    return np.bincount(total_matches(dm).total_matches, minlength=dm.cols + 1)


@dataclass
class CovarianceContrast:
    """Empirical against multinomial covariances of per-m pair counts"""
    empirical: np.ndarray
    multinomial: np.ndarray
    expected_freqs: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return self.empirical - self.multinomial


def multinomial_covariance_contrast(R: int, L: int, freqs: Sequence[float], iters: int,
                                    rng: RngStream) -> CovarianceContrast:
    """
    Covariances of the per-m pair counts across simulated PMs vs a multinomial

    Simulation k draws its null DM from rng.child(k).

    Returns:
        CovarianceContrast with (L+1) x (L+1) matrices
    """
    if iters < 2:
        raise ValidationError("At least two iterations are needed for covariances")
    histograms = np.array([_match_histogram(generate_null_dm(R, L, freqs, rng.child(k)))
                           for k in range(iters)], dtype=np.float64)
    n_pairs = R * (R - 1) // 2
    empirical = np.cov(histograms, rowvar=False, ddof=1)
    expected = histograms.mean(axis=0) / n_pairs
    multinomial = n_pairs * (np.diag(expected) - np.outer(expected, expected))
    return CovarianceContrast(empirical, multinomial, expected)


@dataclass(frozen=True)
class MomentEstimate:
    """Across-iteration means and sample variances of the PM mean m1 and variance m2"""
    m1: float
    m2: float
    var_m1: float
    var_m2: float


def _pm_moments(markers: np.ndarray) -> Tuple[float, float]:
    first, second = pair_index(markers.shape[0])
    totals = (markers[first] == markers[second]).sum(axis=1)
    return float(totals.mean()), float(totals.var(ddof=1)) if totals.size > 1 else 0.0


def _summarize(samples: List[Tuple[float, float]]) -> MomentEstimate:
    values = np.array(samples)
    return MomentEstimate(float(values[:, 0].mean()), float(values[:, 1].mean()),
                          float(values[:, 0].var(ddof=1)), float(values[:, 1].var(ddof=1)))


def two_step_numeric(R: int, L: int, p: float, iters: int, rng: RngStream) -> MomentEstimate:
    """
    m1 and m2 from two rounds of sampling

    First, the number of columns holding i ones (i = 0..R) is drawn
    multinomially with class probabilities C(R,i) p^i q^(R-i); then every
    column of class i gets its ones at a random i-subset of rows.

    Args:
        R: rows
        L: columns
        p: frequency of marker 1
        iters: iterations, at least 2
        rng: iteration k draws from rng.child(k)
    """
    if iters < 2:
        raise ValidationError("At least two iterations are needed for sample variances")
    class_probs = stats.binom.pmf(np.arange(R + 1), R, p)
    class_probs = class_probs / class_probs.sum()
    samples = []
    for k in range(iters):
        gen = rng.child(k).generator()
        per_class = multinomial_counts(L, class_probs, gen)
        markers = np.zeros((R, L), dtype=np.int8)
        column = 0
        for ones, count in enumerate(per_class):
            for _ in range(int(count)):
                markers[gen.choice(R, size=ones, replace=False), column] = 1
                column += 1
        samples.append(_pm_moments(markers))
    return _summarize(samples)


def direct_pm_moments(R: int, L: int, p: float, iters: int, rng: RngStream) -> MomentEstimate:
    """m1 and m2 from DMs whose cells are drawn independently"""
    if iters < 2:
        raise ValidationError("At least two iterations are needed for sample variances")
    samples = []
    for k in range(iters):
        markers = (rng.child(k).generator().random((R, L)) < p).astype(np.int8)
        samples.append(_pm_moments(markers))
    return _summarize(samples)


Polynomial = Dict[Tuple[int, ...], int]


@dataclass
class VectorLikelihoodTable:
    """
    Likelihood of every sorted vector of pair match counts under independent markers

    Attributes:
        rows: rows of the enumerated DMs
        cols: columns of the enumerated DMs
        arity: markers per column
        terms: sorted m-vector -> {marker-count exponents by code: coefficient}
    """
    rows: int
    cols: int
    arity: int
    terms: Dict[Tuple[int, ...], Polynomial]

    @property
    def vectors(self) -> List[Tuple[int, ...]]:
        return sorted(self.terms)

    def evaluate(self, freqs: Sequence[float]) -> Dict[Tuple[int, ...], float]:
        """Probability of each vector given marker frequencies by code"""
        freqs = np.asarray(freqs, dtype=np.float64)
        if freqs.size != self.arity:
            raise ValidationError(f"Expected {self.arity} frequencies, got {freqs.size}")
        return {vector: float(sum(coef * np.prod(freqs ** np.array(exps))
                                  for exps, coef in poly.items()))
                for vector, poly in self.terms.items()}

    def total(self, freqs: Sequence[float]) -> float:
        return float(sum(self.evaluate(freqs).values()))

    def _variable_exponents(self, exps: Tuple[int, ...]) -> Tuple[int, ...]:
        return tuple(exps[self.arity - 1 - v] for v in range(self.arity))

    def _monomial_text(self, exps: Tuple[int, ...], coef: int) -> str:
        factors = []
        for name, power in zip(_VARIABLES, self._variable_exponents(exps)):
            if power == 1:
                factors.append(name)
            elif power > 1:
                factors.append(f"{name}^{power}")
        body = ''.join(factors)
        return body if coef == 1 else f"{coef}{body}"

    def to_text(self) -> str:
        """Canonical text form, one 'Lik(vector)<TAB>polynomial' line per vector"""
        lines = []
        for vector in self.vectors:
            label = (''.join(str(v) for v in vector) if max(vector, default=0) < 10
                     else ','.join(str(v) for v in vector))
            poly = self.terms[vector]
            ordered = sorted(poly, key=self._variable_exponents)
            lines.append(f"Lik({label})\t" + ' + '.join(self._monomial_text(e, poly[e])
                                                         for e in ordered))
        return '\n'.join(lines) + '\n'


def brute_force_likelihoods(R: int, L: int, S: int = 2) -> VectorLikelihoodTable:
    """
    Enumerate every R x L DM over S markers and collect exact vector likelihoods

    Columns are added one at a time; partial states pair the running match
    count of every row pair with the marker-count monomials reaching it.

    Raises:
        ResourceGuardError: when S^(R L) exceeds MAX_ENUMERATED_DMS
    """
    if R < 2 or L < 1 or S < 2 or S > len(_VARIABLES):
        raise ValidationError(f"Unsupported enumeration R={R}, L={L}, S={S}")
    if S ** (R * L) > MAX_ENUMERATED_DMS:
        raise ResourceGuardError(f"{S}^{R * L} DMs exceed the enumeration limit {MAX_ENUMERATED_DMS}")

    first, second = pair_index(R)
    columns = []
    for column in itertools.product(range(S), repeat=R):
        column = np.array(column)
        matches = tuple((column[first] == column[second]).astype(int).tolist())
        exps = tuple(np.bincount(column, minlength=S).tolist())
        columns.append((matches, exps))

    states: Dict[Tuple[int, ...], Polynomial] = {tuple([0] * len(first)): {tuple([0] * S): 1}}
    for _ in range(L):
        grown: Dict[Tuple[int, ...], Polynomial] = defaultdict(lambda: defaultdict(int))
        for vector, poly in states.items():
            for matches, exps in columns:
                target = grown[tuple(a + b for a, b in zip(vector, matches))]
                for key, coef in poly.items():
                    target[tuple(a + b for a, b in zip(key, exps))] += coef
        states = grown

    terms: Dict[Tuple[int, ...], Polynomial] = defaultdict(lambda: defaultdict(int))
    for vector, poly in states.items():
        target = terms[tuple(sorted(vector))]
        for key, coef in poly.items():
            target[key] += coef
    logger.debug("%dx%d DMs over %d markers give %d vectors", R, L, S, len(terms))
    return VectorLikelihoodTable(R, L, S, {v: dict(p) for v, p in terms.items()})


def likelihood_moments(table: VectorLikelihoodTable, freqs: Sequence[float]) -> MomentEstimate:
    """Expected m1 and m2 (sample variance) and their variances over the vector distribution"""
    probs = table.evaluate(freqs)
    vectors = list(probs)
    weights = np.array([probs[v] for v in vectors])
    m1 = np.array([np.mean(v) for v in vectors])
    m2 = np.array([np.var(v, ddof=1) if len(v) > 1 else 0.0 for v in vectors])
    e1 = float((weights * m1).sum())
    e2 = float((weights * m2).sum())
    return MomentEstimate(e1, e2, float((weights * (m1 - e1) ** 2).sum()),
                          float((weights * (m2 - e2) ** 2).sum()))


def _contingency_chi2(markers: np.ndarray, freqs: Sequence[np.ndarray]) -> float:
    """Plain chi-square of the full marker-combination table, expected = R prod f"""
    n_rows = markers.shape[0]
    codes = np.zeros(n_rows, dtype=np.int64)
    expected = np.full(n_rows, float(n_rows))
    for j, f in enumerate(freqs):
        codes = codes * f.size + markers[:, j]
        expected *= f[markers[:, j]]
    _, first_rows, observed = np.unique(codes, return_index=True, return_counts=True)
    return float((observed.astype(np.float64) ** 2 / expected[first_rows]).sum() - n_rows)


class PureChi2Partition:
    """
    Pure n-way chi-squares of column subsets, each computed once

    The pure chi-square of a subset is its plain chi-square minus the pure
    chi-squares of all its internal subsets of two or more columns.
    """

    def __init__(self, dm: DataMatrix, budget: int = DEFAULT_PURE_CHI2_BUDGET):
        self.dm = dm
        self.budget = budget
        self._freqs = [dm.marker_counts(j) / dm.rows for j in range(dm.cols)]
        self._pure: Dict[Tuple[int, ...], float] = {}

    def plain(self, columns: Sequence[int]) -> float:
        columns = tuple(sorted(columns))
        return _contingency_chi2(self.dm.markers[:, columns], [self._freqs[j] for j in columns])

    def pure(self, columns: Sequence[int]) -> float:
        key = tuple(sorted(columns))
        if key not in self._pure:
            value = self.plain(key)
            for size in range(2, len(key)):
                for subset in itertools.combinations(key, size):
                    value -= self.pure(subset)
            self._pure[key] = value
        return self._pure[key]

    def _guard(self, n_subsets: int) -> None:
        if n_subsets > self.budget:
            raise ResourceGuardError(f"{n_subsets} column subsets exceed the budget {self.budget}")

    def sums(self, n: int) -> np.ndarray:
        """Per column, the sum of pure n-way chi-squares of every n-subset holding it"""
        if n not in (2, 3, 4):
            raise ValidationError(f"Pure chi-square order must be 2, 3 or 4, got {n}")
        self._guard(math.comb(self.dm.cols, n))
        totals = np.zeros(self.dm.cols)
        for subset in itertools.combinations(range(self.dm.cols), n):
            value = self.pure(subset)
            totals[list(subset)] += value
        return totals


def pure_chi2_sums(dm: DataMatrix, focal: int, n: int,
                   partition: Optional[PureChi2Partition] = None) -> float:
    """
    Sum of pure n-way chi-squares over every (n-1)-subset of the other columns joined with focal

    Raises:
        ResourceGuardError: when the subsets exceed the partition budget
    """
    if n not in (2, 3, 4):
        raise ValidationError(f"Pure chi-square order must be 2, 3 or 4, got {n}")
    partition = partition if partition is not None else PureChi2Partition(dm)
    others = [j for j in range(dm.cols) if j != focal]
    partition._guard(math.comb(len(others), n - 1))
    return float(sum(partition.pure((focal,) + subset)
                     for subset in itertools.combinations(others, n - 1)))


def reference_matrix() -> DataMatrix:
    """The 200-row DV + 4 IV reference matrix, DV 0 = affected"""
    rows = []
    for dv, counts in ((0, REFERENCE_AFFECTED_COUNTS), (1, REFERENCE_CONTROL_COUNTS)):
        for combination, count in enumerate(counts):
            bits = [(combination >> shift) & 1 for shift in (3, 2, 1, 0)]
            rows.extend([[dv] + bits] * count)
    return DataMatrix(np.array(rows), (2,) * 5, 0, ('DV', 'IV1', 'IV2', 'IV3', 'IV4'))


class _ContingencyTable:
    """Full marker-combination chi-square with one column swappable"""

    def __init__(self, markers: np.ndarray, arities: Sequence[int]):
        n_cells = int(np.prod([int(a) for a in arities], dtype=object))
        if n_cells > MAX_CONTINGENCY_CELLS:
            raise ResourceGuardError(f"{n_cells} contingency cells exceed {MAX_CONTINGENCY_CELLS}")
        self.rows = markers.shape[0]
        self.n_cells = n_cells
        self.weights = np.array([int(np.prod(arities[j + 1:])) for j in range(len(arities))],
                                dtype=np.int64)
        self.codes = (markers.astype(np.int64) * self.weights).sum(axis=1)
        expected = np.array([float(self.rows)])
        for j, arity in enumerate(arities):
            freqs = np.bincount(markers[:, j], minlength=arity) / self.rows
            expected = np.multiply.outer(expected, freqs).ravel()
        self.expected = expected
        self.markers = markers.astype(np.int64)

    def chi2(self, codes: np.ndarray) -> float:
        observed = np.bincount(codes, minlength=self.n_cells).astype(np.float64)
        present = observed > 0
        return float((observed[present] ** 2 / self.expected[present]).sum() - self.rows)

    def codes_with(self, j: int, values: np.ndarray, base: Optional[np.ndarray] = None) -> np.ndarray:
        base = self.codes if base is None else base
        return base - self.markers[:, j] * self.weights[j] + values.astype(np.int64) * self.weights[j]


def _permutation_pvalue(table: _ContingencyTable, codes: np.ndarray, column: np.ndarray,
                        j: int, orders: np.ndarray, markers_j: np.ndarray) -> Tuple[float, float]:
    observed = table.chi2(codes)
    base = codes - markers_j * table.weights[j]
    exceed = sum(table.chi2(base + column[order] * table.weights[j]) >= observed - 1e-9
                 for order in orders)
    return observed, (1.0 + exceed) / (1.0 + len(orders))


def dv_permutation_pvalue(dm: DataMatrix, column: int, perms: int,
                          rng: RngStream) -> Tuple[float, float]:
    """
    Overall contingency chi-square and its P value from permuting one column

    Returns:
        (chi-square, P value)
    """
    table = _ContingencyTable(dm.markers, dm.arities)
    gen = as_generator(rng)
    orders = np.array([gen.permutation(dm.rows) for _ in range(perms)])
    values = table.markers[:, column]
    return _permutation_pvalue(table, table.codes, values, column, orders, values)


@dataclass
class ReferenceTestResult:
    """Overall chi-square of the combination table and its P values"""
    chi2: float
    dof: int
    table_pvalue: float
    dv_pvalue: float
    iv_pvalues: Dict[int, float]


def contingency_reference_tests(dm: DataMatrix, dv_index: Optional[int] = None,
                                perms: int = 1000, rng: Optional[RngStream] = None,
                                iv_perms: Optional[int] = None) -> ReferenceTestResult:
    """
    Chi-square of all marker combinations, with DV and nested IV permutation P values

    Expected counts are R times the product of the per-column marker
    frequencies. The DV P value permutes the DV; the IV-dependent P value of
    an IV permutes that IV iv_perms times, re-estimates the DV P value on
    each permuted matrix with the same DV permutations, and counts how often
    it is no larger than the original.

    Args:
        dm: data matrix
        dv_index: DV column, dm.dv_index by default
        perms: DV permutations
        rng: stream; DV permutations use rng.child(0), IV j uses rng.child(1, j)
        iv_perms: IV permutations per IV, perms by default

    Returns:
        ReferenceTestResult

    Raises:
        ResourceGuardError: when the combination table is too large
    """
    dv = dm.dv_index if dv_index is None else dv_index
    if dv is None:
        raise ValidationError("Reference tests need a DV column")
    rng = rng if rng is not None else RngStream.from_entropy()
    iv_perms = perms if iv_perms is None else iv_perms

    table = _ContingencyTable(dm.markers, dm.arities)
    dof = table.n_cells - dm.cols - 1
    dv_gen = rng.child(0).generator()
    orders = np.array([dv_gen.permutation(dm.rows) for _ in range(perms)])
    dv_values = table.markers[:, dv]
    chi2, dv_p = _permutation_pvalue(table, table.codes, dv_values, dv, orders, dv_values)
    table_p = float(stats.chi2.sf(chi2, dof)) if dof > 0 else float('nan')

    iv_pvalues = {}
    for iv in (j for j in range(dm.cols) if j != dv):
        gen = rng.child(1, iv).generator()
        iv_values = table.markers[:, iv]
        no_larger = 0
        for _ in range(iv_perms):
            codes = table.codes_with(iv, gen.permutation(iv_values))
            _, permuted_p = _permutation_pvalue(table, codes, dv_values, dv, orders, dv_values)
            no_larger += permuted_p <= dv_p + 1e-12
        iv_pvalues[iv] = (1.0 + no_larger) / (1.0 + iv_perms)
    logger.debug("Reference tests: chi2=%.4f on %d d.f., DV P=%.4g", chi2, dof, dv_p)
    return ReferenceTestResult(chi2, dof, table_p, dv_p, iv_pvalues)
