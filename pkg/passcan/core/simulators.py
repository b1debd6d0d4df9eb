"""Model data matrices, block sampling from source sets, and their persistence"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..exceptions import SearchExhaustedError, ValidationError
from ..utils.tsv_handler import TsvHandler
from .data_matrix import (
    ARITY_MODES,
    DataMatrix,
    FrequencyScheme,
    RandomSource,
    RngStream,
    as_generator,
    balanced_dv,
    column_ids_for,
    generate_null_dm,
    load_dm,
    multinomial_counts,
)
from .pairwise import pair_index
from .theory import contingency_reference_tests, dv_permutation_pvalue

logger = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 10000
DEFAULT_ENCOUNTER_PERMUTATIONS = 200

# Positions on a 100-marker sequence, 1-based
REFERENCE_LENGTH = 100
ANCHOR_QUARTET = (5, 35, 49, 66)
PRIMARY_ANCHOR = 49
LINKED_POSITIONS = (1, 22, 50, 63, 88)


class ModelKind(str, Enum):
    COLUMNS = 'columns'
    DV_MARGINAL = 'dv-marginal'
    DV_NOMARGINAL = 'dv-nomarginal'
    PURE_NWAY = 'pure-nway'
    PURE_DV = 'pure-dv'
    EXTENDED_2WAY = 'extended-2way'


@dataclass
class ModelDM:
    """
    A small model matrix with the record of how it was obtained

    Attributes:
        matrix: model columns, DV first when present
        kind: how the model was built
        cutoff: P value every tested column met, None for constructed models
        column_pvalues: P values at retention time, in column order
        scheme: marker-frequency scheme of the random columns
        seed: seed of the stream the model came from
        attempts: candidates generated before this one was retained
    """
    matrix: DataMatrix
    kind: ModelKind
    cutoff: Optional[float] = None
    column_pvalues: Tuple[float, ...] = ()
    scheme: Optional[FrequencyScheme] = None
    seed: Optional[int] = None
    attempts: int = 1

    def to_metadata(self) -> Dict[str, object]:
        metadata = {'kind': self.kind.value, 'cutoff': self.cutoff,
                    'scheme': str(self.scheme) if self.scheme else None,
                    'seed': self.seed, 'attempts': self.attempts}
        if self.matrix.dv_index is not None:
            metadata['dv'] = self.matrix.column_ids[self.matrix.dv_index]
        if self.column_pvalues:
            metadata['column_pvalues'] = list(self.column_pvalues)
        return metadata


def save_model(model: ModelDM, path: str) -> None:
    """Write the model matrix as TSV and its record to '<path>.meta'"""
    with open(path, 'w', encoding='utf-8') as fh:
        TsvHandler.write_matrix(model.matrix, fh)
    TsvHandler.write_metadata(path + '.meta', model.to_metadata())


def load_model(path: str) -> ModelDM:
    """
    Read a model written by save_model

    Raises:
        FileNotFoundError: if the matrix or its sidecar is missing
        ValidationError: on an unknown kind or malformed metadata
    """
    metadata = TsvHandler.read_config(path + '.meta')
    try:
        kind = ModelKind(metadata.get('kind', ''))
    except ValueError:
        raise ValidationError(f"Unknown model kind '{metadata.get('kind')}' in {path}.meta")

    def optional(key, cast):
        value = metadata.get(key, 'NA')
        return None if value == 'NA' else cast(value)

    scheme_text = optional('scheme', str)
    scheme = None
    if scheme_text:
        arity_mode = 'trinary-hw' if scheme_text.endswith('-hw') else 'binary'
        scheme = FrequencyScheme.parse(scheme_text.replace('-hw', ''), arity_mode)
    pvalues = metadata.get('column_pvalues', '')
    return ModelDM(
        matrix=load_dm(path, metadata.get('dv')),
        kind=kind,
        cutoff=optional('cutoff', float),
        column_pvalues=tuple(float(v) for v in pvalues.split(',')) if pvalues else (),
        scheme=scheme,
        seed=optional('seed', int),
        attempts=int(metadata.get('attempts', 1)),
    )


def _parity_rows(n: int, parity: int) -> np.ndarray:
    rows = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
    return rows[rows.sum(axis=1) % 2 == parity]


def pure_nway(n: int, copies: int = 1) -> ModelDM:
    """
    Pure n-way association: copies of every even-parity n-bit string

    Every (n-1)-column marginal table of the result is exactly uniform.
    """
    if n < 2:
        raise ValidationError(f"A pure association needs at least 2 columns, got {n}")
    if copies < 1:
        raise ValidationError(f"Copies must be positive, got {copies}")
    rows = np.repeat(_parity_rows(n, 0), copies, axis=0)
    matrix = DataMatrix(rows, (2,) * n, None, column_ids_for('IV', n))
    return ModelDM(matrix, ModelKind.PURE_NWAY, scheme=FrequencyScheme((5,)))


def pure_dv_model(n: int, mode: str = 'vs_controls', copies: int = 1,
                  rng: Optional[RngStream] = None) -> ModelDM:
    """
    Pure (n+1)-way association of n IVs with a DV

    Affecteds (DV 0) hold the even-parity n-bit strings; controls (DV 1)
    hold either the odd-parity complement ('vs_controls') or random binary
    columns at frequency 0.5 ('vs_randoms').
    """
    if n < 2:
        raise ValidationError(f"A pure DV model needs at least 2 IVs, got {n}")
    if mode not in ('vs_controls', 'vs_randoms'):
        raise ValidationError(f"Unknown pure DV mode '{mode}'")
    affecteds = np.repeat(_parity_rows(n, 0), copies, axis=0)
    if mode == 'vs_controls':
        controls = np.repeat(_parity_rows(n, 1), copies, axis=0)
    else:
        rng = rng if rng is not None else RngStream.from_entropy()
        controls = generate_null_dm(affecteds.shape[0], n, (0.5, 0.5), rng).markers
    dv = np.repeat([0, 1], [affecteds.shape[0], controls.shape[0]])
    ivs = DataMatrix(np.vstack([affecteds, controls]), (2,) * n, None, column_ids_for('IV', n))
    return ModelDM(ivs.with_dv(dv), ModelKind.PURE_DV, scheme=FrequencyScheme((5,)),
                   seed=rng.seed if rng is not None else None)


def _split(total: int, weights: Sequence[int]) -> np.ndarray:
    """Integer split of total in proportion to weights, remainders to the largest fractions"""
    weights = np.asarray(weights, dtype=np.float64)
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    order = np.argsort(-(exact - counts), kind='stable')
    counts[order[:total - int(counts.sum())]] += 1
    return counts


def extended_2way(n_ivs: int, phase: str = 'in', boost: float = 0.1,
                  arity_mode: str = 'binary', base_rows: int = 64,
                  rng: Optional[RngStream] = None) -> ModelDM:
    """
    Extended model: runs of identical markers over-represented in affecteds

    Affecteds are a balanced background of base_rows rows plus extra all-0
    and all-1 rows (and all-2 rows in trinary-hw mode, split 1:2:1 with
    all-1 as the heterozygote run) making up the boost fraction of the
    category. Off-phase, the run assignment of the extra rows is permuted
    independently at each consecutive IV pair. Controls are the same rows
    with every column shuffled independently, so each IV has identical
    marker counts in both categories.

    Args:
        n_ivs: model IVs
        phase: 'in' or 'off'
        boost: fraction of extra rows among affecteds, 0 <= boost < 1
        arity_mode: 'binary' or 'trinary-hw'
        base_rows: background rows per category
        rng: stream; background 0, off-phase assignments 1, controls 2

    Raises:
        ValidationError: on odd n_ivs off-phase or parameters out of range
    """
    if n_ivs < 2:
        raise ValidationError(f"An extended model needs at least 2 IVs, got {n_ivs}")
    if phase not in ('in', 'off'):
        raise ValidationError(f"Phase must be 'in' or 'off', got '{phase}'")
    if phase == 'off' and n_ivs % 2:
        raise ValidationError(f"Off-phase models pair IVs, {n_ivs} is odd")
    if not 0.0 <= boost < 1.0:
        raise ValidationError(f"Boost must lie in [0, 1), got {boost}")
    if arity_mode not in ARITY_MODES:
        raise ValidationError(f"Unknown arity mode '{arity_mode}'")
    if base_rows < 1:
        raise ValidationError(f"Background needs at least one row, got {base_rows}")
    rng = rng if rng is not None else RngStream.from_entropy()

    arity = 2 if arity_mode == 'binary' else 3
    marker_weights = (1, 1) if arity == 2 else (1, 2, 1)
    combinations = np.array(list(itertools.product(range(arity), repeat=n_ivs)), dtype=np.int64)
    weights = np.prod(np.asarray(marker_weights)[combinations], axis=1)
    if base_rows % int(weights.sum()) == 0:
        per_combination = weights * (base_rows // int(weights.sum()))
    else:
        per_combination = multinomial_counts(base_rows, weights / weights.sum(), rng.child(0))
    background = np.repeat(combinations, per_combination, axis=0)

    n_extra = int(round(boost / (1.0 - boost) * base_rows))
    runs = np.repeat(np.arange(arity), _split(n_extra, marker_weights))
    extras = np.repeat(runs[:, None], n_ivs, axis=1)
    if phase == 'off':
        gen = rng.child(1).generator()
        for pair in range(0, n_ivs, 2):
            extras[:, pair:pair + 2] = extras[gen.permutation(n_extra), pair:pair + 2]

    affecteds = np.vstack([background, extras])
    gen = rng.child(2).generator()
    controls = np.column_stack([gen.permutation(affecteds[:, j]) for j in range(n_ivs)])
    dv = np.repeat([0, 1], affecteds.shape[0])
    ivs = DataMatrix(np.vstack([affecteds, controls]), (arity,) * n_ivs, None,
                     column_ids_for('IV', n_ivs))
    logger.debug("Extended %s-phase model: %d background and %d extra rows per category",
                 phase, background.shape[0], n_extra)
    return ModelDM(ivs.with_dv(dv), ModelKind.EXTENDED_2WAY,
                   scheme=FrequencyScheme((5,), arity_mode), seed=rng.seed)


def _candidate(rows: int, cols: int, scheme: FrequencyScheme, kind: ModelKind,
               stream: RngStream) -> DataMatrix:
    if kind == ModelKind.COLUMNS:
        return generate_null_dm(rows, cols, scheme, stream.child(0))
    if kind == ModelKind.DV_MARGINAL:
        ivs = generate_null_dm(rows, cols, scheme, stream.child(0))
        return ivs.with_dv(balanced_dv(rows, stream.child(1)))
    half = rows // 2
    affecteds = generate_null_dm(half, cols, scheme, stream.child(0))
    gen = stream.child(1).generator()
    controls = np.column_stack([gen.permutation(affecteds.markers[:, j]) for j in range(cols)])
    ivs = DataMatrix(np.vstack([affecteds.markers, controls]), affecteds.arities)
    return ivs.with_dv(np.repeat([0, 1], half))


def encounter_model(rows: int, cols: int, scheme: FrequencyScheme, cutoff: float = 0.01,
                    kind: Union[ModelKind, str] = ModelKind.COLUMNS,
                    perms: int = DEFAULT_ENCOUNTER_PERMUTATIONS,
                    rng: Optional[RngStream] = None,
                    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                    iv_perms: Optional[int] = None) -> ModelDM:
    """
    Generate random matrices until one has every tested P value at or below cutoff

    'columns' models test each column by permuting it against the full
    combination table; DV models test the DV and every IV with the
    reference contingency tests. 'dv-nomarginal' controls are the affecteds
    with every column shuffled, so no IV differs in marker counts between
    the categories.

    Args:
        rows: model rows (even for DV kinds)
        cols: model IVs (or columns)
        scheme: marker-frequency scheme
        cutoff: retention P value, in (0, 1]
        kind: 'columns', 'dv-marginal' or 'dv-nomarginal'
        perms: permutations per P value
        rng: stream; attempt a draws from rng.child(a)
        max_attempts: candidates to try
        iv_perms: IV permutations of the nested DV tests, perms by default

    Returns:
        ModelDM

    Raises:
        SearchExhaustedError: when no candidate passes within max_attempts
    """
    kind = ModelKind(kind)
    if kind not in (ModelKind.COLUMNS, ModelKind.DV_MARGINAL, ModelKind.DV_NOMARGINAL):
        raise ValidationError(f"Models of kind '{kind.value}' are constructed, not encountered")
    if not 0.0 < cutoff <= 1.0:
        raise ValidationError(f"Cutoff must lie in (0, 1], got {cutoff}")
    if kind != ModelKind.COLUMNS and rows % 2:
        raise ValidationError(f"DV models need an even number of rows, got {rows}")
    rng = rng if rng is not None else RngStream.from_entropy()

    best = None
    for attempt in range(max_attempts):
        stream = rng.child(attempt)
        candidate = _candidate(rows, cols, scheme, kind, stream)
        if kind == ModelKind.COLUMNS:
            pvalues = [dv_permutation_pvalue(candidate, j, perms, stream.child(2, j))[1]
                       for j in range(cols)]
        else:
            result = contingency_reference_tests(candidate, 0, perms, stream.child(2), iv_perms)
            pvalues = [result.dv_pvalue] + [result.iv_pvalues[j] for j in candidate.iv_indices]
        worst = max(pvalues)
        if best is None or worst < best:
            best = worst
        if worst <= cutoff:
            logger.info("Retained a %s model after %d attempt(s)", kind.value, attempt + 1)
            return ModelDM(candidate, kind, cutoff, tuple(pvalues), scheme, rng.seed, attempt + 1)
        logger.debug("Attempt %d rejected, largest P value %.4g", attempt + 1, worst)
    raise SearchExhaustedError(
        f"No {kind.value} model passed cutoff {cutoff} in {max_attempts} attempts",
        {'attempts': max_attempts, 'best_largest_pvalue': best},
    )


def expand_model(model: Union[ModelDM, DataMatrix], target_rows: int,
                 per_category: bool = False, rng: Optional[RandomSource] = None) -> DataMatrix:
    """
    Resample the model's distinct rows multinomially in proportion to their counts

    Args:
        model: model, or a bare model matrix
        target_rows: rows of the expanded matrix
        per_category: expand each DV category to target_rows / 2 separately
        rng: stream or generator

    Raises:
        ValidationError: per_category without a DV or with odd target_rows
    """
    matrix = model.matrix if isinstance(model, ModelDM) else model
    if target_rows < 2:
        raise ValidationError(f"Expanded matrices need at least 2 rows, got {target_rows}")
    gen = as_generator(rng if rng is not None else RngStream.from_entropy())

    def resample(markers: np.ndarray, n: int) -> np.ndarray:
        distinct, counts = np.unique(markers, axis=0, return_counts=True)
        drawn = multinomial_counts(n, counts / counts.sum(), gen)
        return gen.permutation(np.repeat(distinct, drawn, axis=0))

    if not per_category:
        markers = resample(matrix.markers, target_rows)
    else:
        if matrix.dv_index is None:
            raise ValidationError("Per-category expansion needs a DV column")
        if target_rows % 2:
            raise ValidationError(f"Per-category expansion needs an even target, got {target_rows}")
        dv = matrix.dv
        markers = np.vstack([resample(matrix.markers[dv == category], target_rows // 2)
                             for category in (0, 1)])
    return DataMatrix(markers, matrix.arities, matrix.dv_index, matrix.column_ids)


def embed(model_matrix: DataMatrix, n_random_cols: int, scheme: FrequencyScheme,
          rng: Optional[RngStream] = None) -> DataMatrix:
    """
    Append random columns, generated over all rows pooled, to the right of a model

    Random columns are labelled R1, R2, ... and draw from rng.child(j).
    """
    if n_random_cols < 0:
        raise ValidationError(f"Random column count must be non-negative, got {n_random_cols}")
    if n_random_cols == 0:
        return model_matrix
    rng = rng if rng is not None else RngStream.from_entropy()
    random = generate_null_dm(model_matrix.rows, n_random_cols, scheme, rng)
    random = DataMatrix(random.markers, random.arities, None, column_ids_for('R', n_random_cols))
    return model_matrix.hstack(random)


def embed_models(models: Sequence[DataMatrix], n_random_cols: int, scheme: FrequencyScheme,
                 rng: Optional[RngStream] = None) -> DataMatrix:
    """
    Join co-occurring models laterally, each shuffled vertically, then append random columns

    Models with a DV are shuffled within DV categories so that their DVs
    coincide; the first DV is kept and the others dropped. Model m shuffles
    with rng.child(0, m); random columns draw from rng.child(1).

    Raises:
        ValidationError: on differing row counts or DV category sizes
    """
    if not models:
        raise ValidationError("At least one model is needed")
    rng = rng if rng is not None else RngStream.from_entropy()
    with_dv = [m.dv_index is not None for m in models]
    if any(with_dv) and not all(with_dv):
        raise ValidationError("Either every model or none designates a DV")
    rows = models[0].rows
    if any(m.rows != rows for m in models):
        raise ValidationError("Co-occurring models must have equal row counts")

    joined = None
    for index, model in enumerate(models):
        gen = rng.child(0, index).generator()
        if model.dv_index is None:
            order = gen.permutation(rows)
            part = model.take_rows(order)
        else:
            dv = model.dv
            groups = [np.flatnonzero(dv == category) for category in (0, 1)]
            if joined is not None:
                reference = joined.dv
                if any(g.size != np.count_nonzero(reference == c) for c, g in enumerate(groups)):
                    raise ValidationError("Co-occurring DV models must have equal category sizes")
            order = np.concatenate([gen.permutation(g) for g in groups])
            part = model.take_rows(order)
            part = part.select_columns([part.dv_index] + list(part.iv_indices))
            if joined is not None:
                part = part.select_columns(part.iv_indices)
        joined = part if joined is None else joined.hstack(part)
    return embed(joined, n_random_cols, scheme, rng.child(1))


def dilute_model(matrix: DataMatrix, fraction: float, scheme: FrequencyScheme,
                 rng: Optional[RandomSource] = None) -> DataMatrix:
    """
    Replace a fraction of model rows with random rows

    The DV of a replaced row is kept; its IV cells are drawn independently
    from the scheme's frequency for that IV.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValidationError(f"Dilution fraction must lie in [0, 1], got {fraction}")
    gen = as_generator(rng if rng is not None else RngStream.from_entropy())
    n_replaced = int(round(fraction * matrix.rows))
    replaced = gen.choice(matrix.rows, size=n_replaced, replace=False)
    markers = np.array(matrix.markers)
    arities = list(matrix.arities)
    for position, j in enumerate(matrix.iv_indices):
        freqs = scheme.column_frequencies(position)
        markers[replaced, j] = gen.choice(freqs.size, size=n_replaced, p=freqs)
        arities[j] = max(arities[j], freqs.size)
    return DataMatrix(markers, tuple(arities), matrix.dv_index, matrix.column_ids)


def scaled_positions(positions: Sequence[int], length: int) -> Tuple[int, ...]:
    """0-based columns of 1-based positions on a 100-marker sequence, scaled to length"""
    return tuple(int(round((p - 1) * length / REFERENCE_LENGTH)) for p in positions)


@dataclass
class BlockSourceSet:
    """
    Equal-length marker sequences that blocks of a structured matrix are sampled from

    Attributes:
        sequences: N x length marker codes
        arity: markers per position
        anchor_positions: the quartet of columns guided sampling can force
        primary_anchor: anchor matched against a single guiding column
        linked_positions: columns designated as linked to embedded models
    """
    sequences: np.ndarray
    arity: int = 2
    anchor_positions: Tuple[int, ...] = ()
    primary_anchor: Optional[int] = None
    linked_positions: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        sequences = np.asarray(self.sequences, dtype=np.int64)
        if sequences.ndim != 2 or sequences.shape[0] < 1:
            raise ValidationError("A source set needs at least one sequence")
        if sequences.min() < 0 or sequences.max() >= self.arity:
            raise ValidationError(f"Source markers must lie in 0..{self.arity - 1}")
        length = sequences.shape[1]
        if not self.anchor_positions:
            self.anchor_positions = scaled_positions(ANCHOR_QUARTET, length)
            self.primary_anchor = scaled_positions((PRIMARY_ANCHOR,), length)[0]
            self.linked_positions = scaled_positions(LINKED_POSITIONS, length)
        self.anchor_positions = tuple(int(p) for p in self.anchor_positions)
        if len(set(self.anchor_positions)) != len(self.anchor_positions):
            raise ValidationError(f"Sequences of length {length} are too short for distinct anchors")
        if self.primary_anchor is None:
            self.primary_anchor = self.anchor_positions[0]
        for position in self.anchor_positions + (self.primary_anchor,) + tuple(self.linked_positions):
            if not 0 <= position < length:
                raise ValidationError(f"Position {position} lies outside length {length}")
        self.sequences = sequences

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    @property
    def size(self) -> int:
        return self.sequences.shape[0]

    @classmethod
    def load(cls, path: str, arity: Optional[int] = None) -> 'BlockSourceSet':
        """Read one sequence per line; arity defaults to 1 + the largest marker"""
        sequences = TsvHandler.read_source(path)
        return cls(sequences, arity if arity is not None else int(sequences.max()) + 1)

    def save(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8') as fh:
            TsvHandler.write_source(self.sequences, fh)

    def missing_anchor_combinations(self) -> List[Tuple[int, ...]]:
        present = {tuple(row) for row in self.sequences[:, list(self.anchor_positions)].tolist()}
        return [combo for combo in itertools.product(range(self.arity),
                                                     repeat=len(self.anchor_positions))
                if combo not in present]

    def with_anchor_combinations(self) -> 'BlockSourceSet':
        """
        Copy holding every anchor combination

        For each absent combination the sequence nearest to it at the
        anchors (Hamming) is cloned and its anchors edited.
        """
        missing = self.missing_anchor_combinations()
        if not missing:
            return self
        anchors = list(self.anchor_positions)
        added = []
        for combo in missing:
            distance = (self.sequences[:, anchors] != np.asarray(combo)).sum(axis=1)
            clone = self.sequences[int(np.argmin(distance))].copy()
            clone[anchors] = combo
            added.append(clone)
        logger.warning("Added %d edited sequence(s) for absent anchor combinations", len(added))
        return replace(self, sequences=np.vstack([self.sequences, np.array(added)]))


def _matching_rows(source: BlockSourceSet, guide: np.ndarray) -> Dict[Tuple[int, ...], np.ndarray]:
    """Source row indices per guide combination at the anchors the guide covers"""
    if guide.shape[1] == 1:
        anchors = [source.primary_anchor]
    else:
        anchors = list(source.anchor_positions[:guide.shape[1]])
    keys = source.sequences[:, anchors]
    matches = {}
    for combo in {tuple(row) for row in guide.tolist()}:
        rows = np.flatnonzero((keys == np.asarray(combo)).all(axis=1))
        if rows.size == 0:
            raise ValidationError(f"No source sequence carries {combo} at the anchors {anchors}")
        matches[combo] = rows
    return matches


def _sample_block(source: BlockSourceSet, rows: int, guide: Optional[np.ndarray],
                  stream: RngStream) -> np.ndarray:
    gen = stream.generator()
    if guide is None:
        chosen = gen.integers(0, source.size, size=rows)
        return gen.permutation(source.sequences[chosen])
    matches = _matching_rows(source, guide)
    chosen = np.array([matches[combo][gen.integers(0, matches[combo].size)]
                       for combo in map(tuple, guide.tolist())])
    return source.sequences[chosen]


def block_dm(source: BlockSourceSet, n_blocks: int, rows: int,
             guides: Optional[Mapping[int, np.ndarray]] = None,
             rng: Optional[RngStream] = None, dv: Optional[np.ndarray] = None,
             threads: int = 1) -> DataMatrix:
    """
    Structured matrix of blocks sampled with replacement from a source set

    Unguided blocks are shuffled vertically after sampling. A guided block
    row carries, at the anchors, the markers of the matching guide row:
    a single guide column is matched at the primary anchor, several at the
    anchor quartet in order. Guided rows keep the guide's row order.

    Args:
        source: source set
        n_blocks: blocks joined laterally
        rows: rows per block
        guides: block index -> rows x k guide markers
        rng: stream; block b draws from rng.child(b)
        dv: optional DV column prepended unshuffled
        threads: worker threads

    Raises:
        ValidationError: when a guide combination is absent from the source
    """
    if rows < 2 or n_blocks < 1:
        raise ValidationError(f"Need at least 2 rows and 1 block, got {rows} and {n_blocks}")
    rng = rng if rng is not None else RngStream.from_entropy()
    guides = {int(b): np.asarray(g, dtype=np.int64).reshape(rows, -1)
              for b, g in (guides or {}).items()}
    for b, guide in guides.items():
        if not 0 <= b < n_blocks:
            raise ValidationError(f"Guide given for block {b} of {n_blocks}")
        if guide.shape[1] > len(source.anchor_positions):
            raise ValidationError(f"Guide has {guide.shape[1]} columns, only "
                                  f"{len(source.anchor_positions)} anchors exist")

    def sample(b: int) -> np.ndarray:
        return _sample_block(source, rows, guides.get(b), rng.child(b))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        blocks = list(pool.map(sample, range(n_blocks)))
    column_ids = tuple(f"B{b + 1}_{p + 1}" for b in range(n_blocks) for p in range(source.length))
    matrix = DataMatrix(np.hstack(blocks), (source.arity,) * (n_blocks * source.length),
                        None, column_ids)
    return matrix.with_dv(dv) if dv is not None else matrix


def trinary_from_haplotypes(source: BlockSourceSet) -> BlockSourceSet:
    """Sum every unordered pair of distinct binary sequences into one trinary sequence"""
    if source.arity != 2:
        raise ValidationError(f"Haplotype pairing needs a binary source, got arity {source.arity}")
    if source.size < 2:
        raise ValidationError("Haplotype pairing needs at least two sequences")
    first, second = pair_index(source.size)
    return BlockSourceSet(source.sequences[first] + source.sequences[second], 3,
                          source.anchor_positions, source.primary_anchor, source.linked_positions)


def run_enriched_source(n_sites: int = 13, run_copies: int = 200) -> BlockSourceSet:
    """
    Background rich in runs: copies of the all-0 and all-1 sequences
    plus one copy of every distinct n-site binary combination
    """
    if n_sites < 4:
        raise ValidationError(f"Need at least 4 sites for the anchors, got {n_sites}")
    runs = np.repeat(np.array([[0] * n_sites, [1] * n_sites]), run_copies, axis=0)
    combinations = np.array(list(itertools.product((0, 1), repeat=n_sites)))
    return BlockSourceSet(np.vstack([runs, combinations]), 2)


def synthetic_source(n_sequences: int, length: int, block_correlation: float,
                     rng: Optional[RngStream] = None, anchor_diversity: bool = True,
                     freq: float = 0.5, max_retries: int = 50) -> BlockSourceSet:
    """
    Binary sequences from a two-state Markov chain along each sequence

    Each position copies its left neighbour with probability
    block_correlation and is otherwise drawn afresh with P(1) = freq.

    Args:
        n_sequences: sequences
        length: positions per sequence
        block_correlation: neighbour copy probability in [0, 1]
        rng: stream; retry k draws from rng.child(k)
        anchor_diversity: require all 16 combinations at the anchor quartet,
            on by default. Turn it off for block_correlation = 1, whose
            sequences are constant and hold only two anchor combinations.
        freq: frequency of marker 1 for fresh draws
        max_retries: attempts at anchor diversity

    Raises:
        ValidationError: on parameters out of range
        SearchExhaustedError: when anchor diversity is not reached
    """
    if not 0.0 <= block_correlation <= 1.0:
        raise ValidationError(f"Block correlation must lie in [0, 1], got {block_correlation}")
    if not 0.0 < freq < 1.0:
        raise ValidationError(f"Marker frequency must lie in (0, 1), got {freq}")
    if anchor_diversity and n_sequences < 16:
        raise ValidationError(f"All 16 anchor combinations need at least 16 sequences, "
                              f"got {n_sequences}")
    rng = rng if rng is not None else RngStream.from_entropy()
    missing = None
    for retry in range(max_retries):
        gen = rng.child(retry).generator()
        fresh = (gen.random((n_sequences, length)) < freq).astype(np.int64)
        copy = gen.random((n_sequences, length)) < block_correlation
        sequences = fresh.copy()
        for position in range(1, length):
            keep = copy[:, position]
            sequences[keep, position] = sequences[keep, position - 1]
        source = BlockSourceSet(sequences, 2)
        if not anchor_diversity:
            return source
        missing = source.missing_anchor_combinations()
        if not missing:
            logger.debug("Synthetic source reached anchor diversity on try %d", retry + 1)
            return source
    raise SearchExhaustedError(
        f"Anchor combinations still missing after {max_retries} tries",
        {'missing': missing, 'retries': max_retries},
    )
