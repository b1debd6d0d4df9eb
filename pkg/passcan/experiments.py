"""Type-I-error and power harnesses built on the scanner and the simulators"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .core.data_matrix import DataMatrix, FrequencyScheme, RngStream, balanced_dv, generate_null_dm
from .core.dvpas_scores import parse_any_score
from .core.inference import DEFAULT_PERMUTATIONS, sidak_cutoff
from .core.simulators import (
    ModelDM,
    embed,
    encounter_model,
    expand_model,
    extended_2way,
    load_model,
    pure_dv_model,
    pure_nway,
)
from .exceptions import SearchExhaustedError, ValidationError
from .scanner import PasScanner

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.01, 0.05, 0.1, 0.2)
GENERATORS = ('null', 'pure-dv', 'pure-nway', 'extended-2way', 'encounter', 'model-file')


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.replace(' ', '').split(',') if v)


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.replace(' ', '').split(',') if v)


def _pairs(text: str) -> Tuple[Tuple[int, int], ...]:
    pairs = []
    for item in text.replace(' ', '').split(','):
        if item:
            a, _, b = item.partition(':')
            pairs.append((int(a), int(b)))
    return tuple(pairs)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Parameters of one type-I or power experiment

    Column numbers in scored_columns, reference_columns and product_pairs
    count IVs from 0, whether or not a DV precedes them.
    """
    generator: str = 'null'
    rows: int = 200
    cols: int = 20
    scheme: str = 'o12345'
    arity_mode: str = 'binary'
    scores: Tuple[str, ...] = ('mom1iz',)
    replicates: int = 100
    perms: int = DEFAULT_PERMUTATIONS
    scored_columns: Tuple[int, ...] = (0, 1, 2, 3, 4)
    product_pairs: Tuple[Tuple[int, int], ...] = ()
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    uniform_scores: bool = False
    model_order: int = 2
    model_mode: str = 'vs_controls'
    model_copies: int = 1
    model_rows: int = 100
    model_cutoff: float = 0.01
    model_kind: str = 'dv-marginal'
    model_file: str = ''
    boost: float = 0.1
    phase: str = 'in'
    random_cols: int = 10
    reference_columns: Tuple[int, ...] = (0, 1)
    detection_fraction: float = 0.6
    detection_cutoff: float = 0.1
    min_rows: int = 20
    max_rows: int = 5000
    row_step: int = 10
    seed: Optional[int] = None
    threads: int = 1

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValidationError(f"Unknown generator '{self.generator}'")
        if not 0.0 < self.detection_fraction < 1.0:
            raise ValidationError(f"Detection fraction must lie in (0, 1), got {self.detection_fraction}")
        if not 0.0 < self.detection_cutoff < 1.0:
            raise ValidationError(f"Detection cutoff must lie in (0, 1), got {self.detection_cutoff}")
        if self.replicates < 1 or self.perms < 1:
            raise ValidationError("Replicates and permutations must be positive")
        if not self.scores:
            raise ValidationError("At least one score is needed")
        for name in self.scores:
            parse_any_score(name)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> 'ExperimentConfig':
        """
        Build a config from key=value strings

        Raises:
            ValidationError: on unknown keys or unparsable values
        """
        known = {f.name: f for f in fields(cls)}
        values = {}
        for raw_key, raw_value in mapping.items():
            key = raw_key.replace('-', '_')
            if key not in known:
                raise ValidationError(f"Unknown experiment key '{raw_key}'")
            default = known[key].default
            text = str(raw_value).strip()
            try:
                if key == 'scores':
                    value = tuple(s for s in text.replace(' ', '').split(',') if s)
                elif key == 'product_pairs':
                    value = _pairs(text)
                elif key == 'alphas':
                    value = _floats(text)
                elif key in ('scored_columns', 'reference_columns'):
                    value = _ints(text)
                elif key == 'uniform_scores':
                    value = text.lower() in ('1', 'true', 'yes')
                elif key == 'seed':
                    value = int(text)
                elif isinstance(default, int):
                    value = int(text)
                elif isinstance(default, float):
                    value = float(text)
                else:
                    value = text
            except ValueError:
                raise ValidationError(f"Cannot parse {raw_key}={raw_value}")
            values[key] = value
        return cls(**values)

    @property
    def frequency_scheme(self) -> FrequencyScheme:
        return FrequencyScheme.parse(self.scheme, self.arity_mode)

    @property
    def uses_dv(self) -> bool:
        return any(name.startswith('dv') for name in self.scores)


@dataclass
class CdfReport:
    """
    Sorted P values per labelled group with their uniformity diagnostics

    Attributes:
        groups: label -> sorted P values
        sidak_rates: (score, alpha) -> fraction of replicates with a family hit
        products: label -> sorted products of two P values
        replicates: replicates behind the report
        perms: permutations per P value
    """
    groups: Dict[str, np.ndarray] = field(default_factory=dict)
    sidak_rates: Dict[Tuple[str, float], float] = field(default_factory=dict)
    products: Dict[str, np.ndarray] = field(default_factory=dict)
    replicates: int = 0
    perms: int = DEFAULT_PERMUTATIONS

    HEADER = ('kind', 'label', 'n', 'statistic', 'p')

    def ks(self, label: str) -> Tuple[float, float]:
        """KS distance and P value of a group against uniform(0, 1)"""
        result = stats.kstest(self.groups[label], 'uniform')
        return float(result.statistic), float(result.pvalue)

    def product_ks(self, label: str) -> Tuple[float, float]:
        """KS distance and P value of a product group against the discrete benchmark"""
        result = stats.kstest(self.products[label],
                              lambda x: uniform_product_cdf(x, self.perms))
        return float(result.statistic), float(result.pvalue)

    def rows(self) -> List[Tuple]:
        table = []
        for label, values in self.groups.items():
            distance, pvalue = self.ks(label)
            table.append(('cdf', label, values.size, distance, pvalue))
        for label, values in self.products.items():
            distance, pvalue = self.product_ks(label)
            table.append(('product', label, values.size, distance, pvalue))
        for (score, alpha), rate in self.sidak_rates.items():
            table.append(('sidak', f"{score}@{alpha:g}", self.replicates, rate, float('nan')))
        return table


def uniform_product_cdf(x, n_perms: int):
    """
    c.d.f. of the product of two independent permutation P values

    Each P value is uniform over {1, ..., N+1} / (N+1), N = n_perms.
    """
    x = np.asarray(x, dtype=np.float64)
    size = n_perms + 1
    i = np.arange(1, size + 1, dtype=np.float64)
    limit = np.floor(np.multiply.outer(x * size * size, 1.0 / i) + 1e-9)
    counts = np.clip(limit, 0, size).sum(axis=-1)
    return counts / (size * size)


def _null_replicate(config: ExperimentConfig, stream: RngStream) -> DataMatrix:
    dm = generate_null_dm(config.rows, config.cols, config.frequency_scheme, stream.child(0))
    if config.uses_dv:
        dm = dm.with_dv(balanced_dv(config.rows, stream.child(1)))
    return dm


def _score_columns(dm: DataMatrix, config: ExperimentConfig, columns: Sequence[int],
                   seed: int) -> Dict[Tuple[str, int], float]:
    """P value per (score, IV position) for one matrix"""
    scanner = PasScanner(config.perms, 1, seed=seed)
    offset = 0 if dm.dv_index is None else 1
    pvalues = {}
    pas = [s for s in config.scores if not s.startswith('dv')]
    dvpas = [s for s in config.scores if s.startswith('dv')]
    if pas:
        targets = [c + offset for c in columns]
        rows = scanner.scan(dm, pas, targets)
        for k, row in enumerate(rows):
            pvalues[(row.score, columns[k // len(pas)])] = row.p
    if dvpas:
        rows = scanner.dvscan(dm, dvpas, [c + offset for c in columns])
        for k, row in enumerate(rows):
            pvalues[(row.score, columns[k // len(dvpas)])] = row.p
    return pvalues


def type1_experiment(config: ExperimentConfig) -> CdfReport:
    """
    P-value c.d.f.s of null matrices

    Replicate r generates its matrix from stream (0, r) and scores it with
    seed-derived permutation streams. With uniform_scores the P values are
    replaced by uniform draws, checking the harness itself.

    Returns:
        CdfReport with one group per (score, column), one pooled group per
        score, Sidak rates per (score, alpha) and the configured products
    """
    if config.generator != 'null':
        raise ValidationError("Type I experiments need the 'null' generator")
    rng = RngStream(config.seed) if config.seed is not None else RngStream.from_entropy()
    columns = list(config.scored_columns)
    if max(columns) >= config.cols:
        raise ValidationError(f"Scored column {max(columns)} exceeds {config.cols} columns")
    names = [parse_any_score(s).name for s in config.scores]

    def replicate(r: int) -> Dict[Tuple[str, int], float]:
        stream = rng.child(0, r)
        if config.uniform_scores:
            gen = stream.child(2).generator()
            return {(name, c): float(gen.random()) for name in names for c in columns}
        dm = _null_replicate(config, stream)
        return _score_columns(dm, config, columns, int(stream.child(3).generator().integers(2 ** 63)))

    with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
        results = list(pool.map(replicate, range(config.replicates)))
    logger.info("Scored %d null replicate(s)", len(results))

    report = CdfReport(replicates=config.replicates, perms=config.perms)
    for name in names:
        pooled = []
        for c in columns:
            values = np.sort([res[(name, c)] for res in results])
            report.groups[f"{name}:{c}"] = values
            pooled.append(values)
        report.groups[f"{name}:pooled"] = np.sort(np.concatenate(pooled))
        for alpha in config.alphas:
            cutoff = sidak_cutoff(alpha, len(columns))
            hits = sum(min(res[(name, c)] for c in columns) <= cutoff for res in results)
            report.sidak_rates[(name, alpha)] = hits / len(results)
        for a, b in config.product_pairs:
            report.products[f"{name}:{a}x{b}"] = np.sort(
                [res[(name, a)] * res[(name, b)] for res in results])
    return report


@dataclass
class PowerResult:
    """
    Outcome of a detection-sample search

    Attributes:
        detection_rows: smallest tried row count reaching the detection fraction
        curve: tried row count -> detection fraction
        false_positive_rates: tried row count -> fraction of random-IV P values at or below the cutoff
        false_positive_pvalues: sorted random-IV P values at detection_rows
    """
    detection_rows: int
    curve: Dict[int, float]
    false_positive_rates: Dict[int, float]
    false_positive_pvalues: np.ndarray


def _build_model(config: ExperimentConfig, stream: RngStream) -> ModelDM:
    scheme = config.frequency_scheme
    if config.generator == 'pure-dv':
        return pure_dv_model(config.model_order, config.model_mode, config.model_copies, stream)
    if config.generator == 'pure-nway':
        return pure_nway(config.model_order, config.model_copies)
    if config.generator == 'extended-2way':
        return extended_2way(config.model_order, config.phase, config.boost, config.arity_mode,
                             config.model_rows, stream)
    if config.generator == 'encounter':
        return encounter_model(config.model_rows, config.model_order, scheme,
                               config.model_cutoff, config.model_kind, config.perms, stream)
    if config.generator == 'model-file':
        return load_model(config.model_file)
    raise ValidationError("Power experiments need a model generator, not 'null'")


class _DetectionCurve:
    """Detection fraction of one row count, computed once"""

    def __init__(self, config: ExperimentConfig, model: ModelDM, rng: RngStream):
        self.config = config
        self.model = model
        self.rng = rng
        self.detection: Dict[int, float] = {}
        self.false_positives: Dict[int, np.ndarray] = {}
        self.n_model_ivs = len(model.matrix.iv_indices)

    def __call__(self, rows: int) -> float:
        if rows not in self.detection:
            self._run(rows)
        return self.detection[rows]

    def _replicate(self, rows: int, r: int) -> Tuple[List[float], List[float]]:
        config = self.config
        stream = self.rng.child(1, rows, r)
        per_category = self.model.matrix.dv_index is not None
        dm = expand_model(self.model, rows, per_category, stream.child(0))
        dm = embed(dm, config.random_cols, config.frequency_scheme, stream.child(1))
        random_columns = list(range(self.n_model_ivs, self.n_model_ivs + config.random_cols))
        columns = list(config.reference_columns) + random_columns
        seed = int(stream.child(2).generator().integers(2 ** 63))
        pvalues = _score_columns(dm, config, columns, seed)
        name = parse_any_score(config.scores[0]).name
        return ([pvalues[(name, c)] for c in config.reference_columns],
                [pvalues[(name, c)] for c in random_columns])

    def _run(self, rows: int) -> None:
        config = self.config
        with ThreadPoolExecutor(max_workers=max(1, config.threads)) as pool:
            results = list(pool.map(lambda r: self._replicate(rows, r), range(config.replicates)))
        reference = np.concatenate([np.asarray(res[0]) for res in results])
        noise = np.concatenate([np.asarray(res[1], dtype=np.float64) for res in results])
        self.detection[rows] = float(np.mean(reference <= config.detection_cutoff))
        self.false_positives[rows] = np.sort(noise)
        logger.info("%d rows: detection %.3f", rows, self.detection[rows])


def power_experiment(config: ExperimentConfig) -> PowerResult:
    """
    Smallest row count at which the reference model columns are detected

    The row count doubles from min_rows until the detection fraction is
    reached, then bisection narrows the bracket to row_step. Each step
    expands the model to the row count, embeds random IVs and scores the
    first configured score at the reference and the random IVs.

    Raises:
        SearchExhaustedError: when max_rows does not reach the detection fraction
    """
    if max(config.reference_columns) >= config.model_order and config.generator != 'model-file':
        raise ValidationError("Reference columns must lie within the model IVs")
    rng = RngStream(config.seed) if config.seed is not None else RngStream.from_entropy()
    model = _build_model(config, rng.child(0))
    curve = _DetectionCurve(config, model, rng)
    even = model.matrix.dv_index is not None

    def snap(rows: float) -> int:
        rows = int(round(rows))
        return rows + (rows % 2) if even else rows

    low, high = None, snap(config.min_rows)
    while curve(high) < config.detection_fraction:
        low = high
        high = snap(high * 2)
        if high > config.max_rows:
            raise SearchExhaustedError(
                f"Detection fraction {config.detection_fraction} not reached by {config.max_rows} rows",
                {'curve': dict(curve.detection)},
            )
    while low is not None and high - low > config.row_step:
        middle = snap((low + high) / 2)
        if middle in (low, high):
            break
        if curve(middle) >= config.detection_fraction:
            high = middle
        else:
            low = middle

    rates = {rows: float(np.mean(values <= config.detection_cutoff)) if values.size else float('nan')
             for rows, values in curve.false_positives.items()}
    return PowerResult(high, dict(sorted(curve.detection.items())), dict(sorted(rates.items())),
                       curve.false_positives[high])
