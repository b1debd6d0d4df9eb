"""Data matrices of categorical markers, frequency schemes and seeded streams"""

import logging
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import ValidationError
from ..utils.tsv_handler import TsvHandler

logger = logging.getLogger(__name__)

MARKER_DTYPE = np.int16
MAX_MARKER_CODE = np.iinfo(MARKER_DTYPE).max


@dataclass(frozen=True)
class RngStream:
    """
    Reproducible random stream identified by a seed and a hierarchical path

    Streams with different paths are independent; the same (seed, path)
    always yields the same sequence, whichever thread draws from it.
    """
    seed: int
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError(f"Seed must be an unsigned 64-bit value, got {self.seed}")
        path = tuple(int(i) for i in self.path)
        if any(i < 0 for i in path):
            raise ValidationError(f"Stream path entries must be non-negative, got {path}")
        object.__setattr__(self, 'seed', int(self.seed))
        object.__setattr__(self, 'path', path)

    def child(self, *indices: int) -> 'RngStream':
        """Stream one or more levels below this one"""
        return RngStream(self.seed, self.path + tuple(indices))

    def generator(self) -> np.random.Generator:
        """Fresh counter-based generator positioned at the start of this stream"""
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(sequence))

    @classmethod
    def from_entropy(cls) -> 'RngStream':
        """Stream seeded from operating-system entropy"""
        return cls(int(np.random.SeedSequence().entropy) % 2 ** 64)


RandomSource = Union[RngStream, np.random.Generator]


def as_generator(rng: RandomSource) -> np.random.Generator:
    """Accept either a stream or an already positioned generator"""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ValidationError(f"Expected RngStream or numpy Generator, got {type(rng).__name__}")


ARITY_MODES = ('binary', 'trinary-hw')


@dataclass(frozen=True)
class FrequencyScheme:
    """
    Minor-marker frequencies in tenths, cycling over columns

    A scheme written "o12345" gives column 0 frequency 0.1, column 1 0.2 and so
    on, starting again at column 5. In trinary-hw mode each p becomes the
    three Hardy-Weinberg frequencies p^2, 2pq, q^2.
    """
    digits: Tuple[int, ...] = (1, 2, 3, 4, 5)
    arity_mode: str = 'binary'

    def __post_init__(self):
        digits = tuple(int(d) for d in self.digits)
        if not digits:
            raise ValidationError("Frequency scheme needs at least one digit")
        if any(d < 1 or d > 5 for d in digits):
            raise ValidationError(f"Scheme digits must lie in 1..5, got {digits}")
        if self.arity_mode not in ARITY_MODES:
            raise ValidationError(f"Unknown arity mode '{self.arity_mode}'")
        object.__setattr__(self, 'digits', digits)

    @classmethod
    def parse(cls, text: str, arity_mode: str = 'binary') -> 'FrequencyScheme':
        """
        Normalize written schemes such as "o12345", "o1524,1234" or "15241(23451)"

        Every digit is kept in reading order; letters and punctuation are ignored.
        """
        digits = [int(c) for c in re.sub(r'[^0-9]', '', text)]
        return cls(tuple(digits), arity_mode)

    @property
    def arity(self) -> int:
        return 2 if self.arity_mode == 'binary' else 3

    def minor_frequency(self, column: int) -> float:
        return self.digits[column % len(self.digits)] / 10.0

    def column_frequencies(self, column: int) -> np.ndarray:
        """Marker frequencies by marker code for the given column"""
        p = self.minor_frequency(column)
        q = 1.0 - p
        if self.arity_mode == 'binary':
            return np.array([p, q])
        return np.array([p * p, 2.0 * p * q, 1.0 - p * p - 2.0 * p * q])

    def __str__(self) -> str:
        text = 'o' + ''.join(str(d) for d in self.digits)
        return text if self.arity_mode == 'binary' else f"{text}-hw"


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """
    R x L matrix of small-integer markers

    Attributes:
        markers: read-only array of marker codes, rows are observations
        arities: number of possible markers per column
        dv_index: column holding the binary dependent variable, if any
        column_ids: per-column labels
    """
    markers: np.ndarray
    arities: Tuple[int, ...]
    dv_index: Optional[int] = None
    column_ids: Tuple[str, ...] = ()

    def __post_init__(self):
        raw = np.asarray(self.markers)
        if raw.ndim != 2:
            raise ValidationError(f"Markers must form a 2-D matrix, got {raw.ndim} dimension(s)")
        n_rows, n_cols = raw.shape
        if n_rows < 2:
            raise ValidationError(f"A data matrix needs at least 2 rows, got {n_rows}")
        if n_cols < 1:
            raise ValidationError("A data matrix needs at least 1 column")
        if raw.size and (raw.min() < 0 or raw.max() > MAX_MARKER_CODE):
            raise ValidationError("Marker codes must be non-negative small integers")
        markers = np.array(raw, dtype=MARKER_DTYPE, copy=True)
        markers.setflags(write=False)

        arities = tuple(int(a) for a in self.arities)
        if len(arities) != n_cols:
            raise ValidationError(f"Expected {n_cols} arities, got {len(arities)}")
        observed_max = markers.max(axis=0)
        for j, (arity, top) in enumerate(zip(arities, observed_max)):
            if arity < 1 or top >= arity:
                raise ValidationError(
                    f"Column {j} holds marker {int(top)} but its arity is {arity}"
                )

        column_ids = tuple(str(c) for c in self.column_ids) or tuple(
            f"C{j + 1}" for j in range(n_cols)
        )
        if len(column_ids) != n_cols:
            raise ValidationError(f"Expected {n_cols} column ids, got {len(column_ids)}")

        if self.dv_index is not None:
            dv_index = int(self.dv_index)
            if not 0 <= dv_index < n_cols:
                raise ValidationError(f"DV index {dv_index} out of range")
            present = np.unique(markers[:, dv_index])
            if present.size != 2 or present[0] != 0 or present[1] != 1:
                raise ValidationError(
                    f"DV column '{column_ids[dv_index]}' must hold exactly the markers 0 and 1, "
                    f"found {present.tolist()}"
                )
            object.__setattr__(self, 'dv_index', dv_index)

        object.__setattr__(self, 'markers', markers)
        object.__setattr__(self, 'arities', arities)
        object.__setattr__(self, 'column_ids', column_ids)

    @property
    def rows(self) -> int:
        return self.markers.shape[0]

    @property
    def cols(self) -> int:
        return self.markers.shape[1]

    @property
    def n_pairs(self) -> int:
        """W = R(R-1)/2 pairwise comparisons"""
        return self.rows * (self.rows - 1) // 2

    @property
    def dv(self) -> Optional[np.ndarray]:
        return None if self.dv_index is None else self.markers[:, self.dv_index]

    @property
    def iv_indices(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.cols) if j != self.dv_index)

    def column(self, j: int) -> np.ndarray:
        return self.markers[:, j]

    def marker_counts(self, j: int) -> np.ndarray:
        return np.bincount(self.markers[:, j], minlength=self.arities[j])

    def column_index(self, designator: Union[int, str]) -> int:
        """
        Resolve a column by id or by 0-based index

        Args:
            designator: column id, or an integer (or digit string) index

        Returns:
            0-based column index

        Raises:
            ValidationError: if no column matches
        """
        if isinstance(designator, str):
            if designator in self.column_ids:
                return self.column_ids.index(designator)
            if not designator.lstrip('-').isdigit():
                raise ValidationError(f"No column named '{designator}'")
            designator = int(designator)
        index = int(designator)
        if not 0 <= index < self.cols:
            raise ValidationError(f"Column index {index} out of range 0..{self.cols - 1}")
        return index

    def with_column(self, j: int, values: np.ndarray) -> 'DataMatrix':
        """Copy of this matrix with column j replaced"""
        values = np.asarray(values)
        markers = np.array(self.markers)
        markers[:, j] = values
        arities = list(self.arities)
        arities[j] = max(arities[j], int(values.max()) + 1)
        return DataMatrix(markers, tuple(arities), self.dv_index, self.column_ids)

    def select_columns(self, indices: Sequence[int]) -> 'DataMatrix':
        indices = [int(j) for j in indices]
        dv_index = indices.index(self.dv_index) if self.dv_index in indices else None
        return DataMatrix(
            self.markers[:, indices],
            tuple(self.arities[j] for j in indices),
            dv_index,
            tuple(self.column_ids[j] for j in indices),
        )

    def drop_columns(self, indices: Iterable[int]) -> 'DataMatrix':
        dropped = set(int(j) for j in indices)
        return self.select_columns([j for j in range(self.cols) if j not in dropped])

    def take_rows(self, indices: Sequence[int]) -> 'DataMatrix':
        return DataMatrix(self.markers[np.asarray(indices)], self.arities,
                          self.dv_index, self.column_ids)

    def hstack(self, other: 'DataMatrix') -> 'DataMatrix':
        """Join another matrix laterally to the right of this one"""
        if other.rows != self.rows:
            raise ValidationError(f"Cannot join {self.rows}-row and {other.rows}-row matrices")
        if self.dv_index is not None and other.dv_index is not None:
            raise ValidationError("Both matrices designate a DV column")
        dv_index = self.dv_index
        if other.dv_index is not None:
            dv_index = self.cols + other.dv_index
        return DataMatrix(
            np.hstack([self.markers, other.markers]),
            self.arities + other.arities,
            dv_index,
            self.column_ids + other.column_ids,
        )

    def vstack(self, other: 'DataMatrix') -> 'DataMatrix':
        """Stack another matrix with the same columns below this one"""
        if other.cols != self.cols:
            raise ValidationError(f"Cannot stack {self.cols}- and {other.cols}-column matrices")
        arities = tuple(max(a, b) for a, b in zip(self.arities, other.arities))
        return DataMatrix(np.vstack([self.markers, other.markers]), arities,
                          self.dv_index, self.column_ids)

    def with_dv(self, values: np.ndarray, column_id: str = 'DV') -> 'DataMatrix':
        """Prepend a binary DV column"""
        if self.dv_index is not None:
            raise ValidationError("Matrix already designates a DV column")
        values = np.asarray(values).reshape(-1, 1)
        dv = DataMatrix(values, (2,), 0, (column_id,))
        return dv.hstack(self)

    def __repr__(self) -> str:
        return (f"DataMatrix(rows={self.rows}, cols={self.cols}, "
                f"dv_index={self.dv_index})")


def load_dm(path: str, dv_designator: Optional[Union[int, str]] = None) -> DataMatrix:
    """
    Load a data matrix from a TSV file

    Args:
        path: UTF-8 TSV file, optional header row of column ids
        dv_designator: DV column id or 0-based index

    Returns:
        Validated DataMatrix with arities inferred as 1 + max observed code.
        A DV holding two markers other than 0 and 1 is recoded, the smaller
        marker to 0 and the larger to 1.

    Raises:
        FileNotFoundError: if the file does not exist
        ValidationError: on malformed cells, ragged rows or a DV without
            exactly two distinct markers
    """
    markers, header = TsvHandler.read_matrix(path)
    arities = tuple(int(a) + 1 for a in markers.max(axis=0))
    dm = DataMatrix(markers, arities, None, tuple(header) if header else ())
    if dv_designator is None:
        return dm
    dv_index = dm.column_index(dv_designator)
    logger.debug("Designating column %s as DV", dm.column_ids[dv_index])
    present = np.unique(markers[:, dv_index])
    if present.size != 2:
        raise ValidationError(
            f"DV column '{dm.column_ids[dv_index]}' must hold exactly two distinct markers, "
            f"found {present.tolist()}"
        )
    if present.tolist() != [0, 1]:
        logger.info("Recoding DV markers %d/%d as 0/1", int(present[0]), int(present[1]))
        markers = np.array(markers)
        markers[:, dv_index] = markers[:, dv_index] == present[1]
        arities = arities[:dv_index] + (2,) + arities[dv_index + 1:]
    return DataMatrix(markers, arities, dv_index, dm.column_ids)


def multinomial_counts(n_trials: int, probs: Sequence[float], rng: RandomSource) -> np.ndarray:
    """
    Multinomial draw as a chain of conditional binomials

    Args:
        n_trials: number of trials
        probs: category probabilities, summing to 1
        rng: stream or generator to draw from

    Returns:
        Count vector summing to n_trials

    Raises:
        ValidationError: on negative probabilities or probabilities not summing to 1
    """
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise ValidationError("Probabilities must be a non-empty vector")
    if np.any(probs < 0):
        raise ValidationError(f"Negative probability in {probs.tolist()}")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ValidationError(f"Probabilities sum to {probs.sum():.15g}, not 1")
    if n_trials < 0:
        raise ValidationError(f"Number of trials must be non-negative, got {n_trials}")

    gen = as_generator(rng)
    counts = np.zeros(probs.size, dtype=np.int64)
    remaining = int(n_trials)
    mass = 1.0
    for k, pk in enumerate(probs[:-1]):
        if remaining == 0 or mass <= 0.0:
            break
        drawn = int(gen.binomial(remaining, min(1.0, pk / mass)))
        counts[k] = drawn
        remaining -= drawn
        mass -= pk
    counts[-1] += remaining
    return counts


def null_column(rows: int, freqs: Sequence[float], gen: np.random.Generator) -> np.ndarray:
    """
    One column with marker counts as close as possible to rows x freqs

    Floors of the target counts are placed deterministically; the residual
    slots go to markers multinomially, in proportion to the leftover fractions.
    The pool is then shuffled vertically.
    """
    freqs = np.asarray(freqs, dtype=float)
    target = rows * freqs
    counts = np.floor(target + 1e-9).astype(np.int64)
    residual = rows - int(counts.sum())
    if residual > 0:
        leftover = np.clip(target - counts, 0.0, None)
        if leftover.sum() <= 0.0:
            leftover = (freqs > 0).astype(float)
        counts += multinomial_counts(residual, leftover / leftover.sum(), gen)
    pool = np.repeat(np.arange(freqs.size, dtype=MARKER_DTYPE), counts)
    return gen.permutation(pool)


def generate_null_dm(rows: int, cols: int,
                     scheme: Union[FrequencyScheme, Sequence[float]],
                     rng: RngStream) -> DataMatrix:
    """
    Null data matrix with mutually independent, randomly ordered columns

    Args:
        rows: number of rows (at least 2)
        cols: number of columns
        scheme: cycling frequency scheme, or one frequency vector for every column
        rng: stream; column j draws from rng.child(j)

    Returns:
        DataMatrix without a DV
    """
    if rows < 2:
        raise ValidationError(f"A null matrix needs at least 2 rows, got {rows}")
    if cols < 1:
        raise ValidationError(f"A null matrix needs at least 1 column, got {cols}")
    if isinstance(scheme, FrequencyScheme):
        frequencies = [scheme.column_frequencies(j) for j in range(cols)]
    else:
        fixed = np.asarray(scheme, dtype=float)
        if np.any(fixed < 0) or abs(fixed.sum() - 1.0) > 1e-12:
            raise ValidationError(f"Invalid marker frequencies {fixed.tolist()}")
        frequencies = [fixed] * cols

    markers = np.empty((rows, cols), dtype=MARKER_DTYPE)
    for j, freqs in enumerate(frequencies):
        markers[:, j] = null_column(rows, freqs, rng.child(j).generator())
    arities = tuple(len(f) for f in frequencies)
    return DataMatrix(markers, arities)


def balanced_dv(rows: int, rng: RandomSource) -> np.ndarray:
    """Binary DV column with equal (or near-equal) affected and control counts"""
    return null_column(rows, (0.5, 0.5), as_generator(rng))


def column_ids_for(prefix: str, count: int, start: int = 1) -> Tuple[str, ...]:
    return tuple(f"{prefix}{k}" for k in range(start, start + count))

