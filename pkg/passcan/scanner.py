"""Scanner class running PAS and dvPAS scans over a data matrix"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core.data_matrix import DataMatrix, RngStream
from .core.dvpas_scores import DvScoreSpec
from .core.inference import (
    DEFAULT_PERMUTATIONS,
    PValueEstimate,
    Tail,
    ToggleLog,
    dv_scan_pvalues,
    erase_interactions,
    erase_marginals,
    fisher_combine,
    marginal_chi2,
    null_cdfs,
    permute_pvalues,
    sidak_cutoff,
)
from .core.pairwise import conditional_sets_from, total_matches
from .core.pas_scores import ScoreSpec, mee_pas
from .exceptions import ValidationError

logger = logging.getLogger(__name__)

SCAN_STREAM = 0
DVSCAN_STREAM = 1
STAGED_STREAM = 2
STAGED_ERASE_STREAM = 3
DEFAULT_ERASE_THRESHOLD = 0.01


@dataclass
class ScanOutputRow:
    """One scored (column, score) pair"""
    column_id: str
    score: str
    value: float
    p: float
    z: float
    n_perms: int
    undetectable: bool = False
    erased: bool = False
    note: str = ''

    HEADER = ('column', 'score', 'value', 'p', 'z', 'n_perms', 'flags')

    @property
    def flags(self) -> str:
        flags = [name for name, on in (('undetectable', self.undetectable),
                                       ('erased', self.erased)) if on]
        if self.note:
            flags.append(self.note)
        return ','.join(flags) or '-'

    def as_row(self) -> Tuple:
        return (self.column_id, self.score, self.value, self.p, self.z, self.n_perms, self.flags)

    @classmethod
    def from_estimate(cls, column_id: str, score: str, estimate: PValueEstimate,
                      erased: bool = False) -> 'ScanOutputRow':
        return cls(column_id, score, estimate.score, estimate.p, estimate.z, estimate.n_perms,
                   estimate.undetectable, erased)


@dataclass
class StagedScanResult:
    """
    Rows of every stage plus the Fisher-combined P value of each IV

    erased_at maps an IV to the first stage k >= 2 that erased its joint effects.
    """
    rows: List[ScanOutputRow] = field(default_factory=list)
    combined: Dict[str, float] = field(default_factory=dict)
    toggles: ToggleLog = field(default_factory=ToggleLog)
    erased_at: Dict[str, int] = field(default_factory=dict)


def sidak_flags(rows: Sequence[ScanOutputRow], alpha: float) -> List[Tuple[float, bool]]:
    """
    Family cutoff and pass/fail for every row

    A family is all rows sharing a score name.
    """
    family_sizes: Dict[str, int] = {}
    for row in rows:
        family_sizes[row.score] = family_sizes.get(row.score, 0) + 1
    flags = []
    for row in rows:
        cutoff = sidak_cutoff(alpha, family_sizes[row.score])
        flags.append((cutoff, bool(row.p <= cutoff)))
    return flags


def fisher_by_column(rows: Sequence[ScanOutputRow]) -> Dict[str, float]:
    """Fisher-combined P value per column across the scores it was given"""
    grouped: Dict[str, List[float]] = {}
    for row in rows:
        if not np.isnan(row.p):
            grouped.setdefault(row.column_id, []).append(row.p)
    return {column: fisher_combine(pvals) for column, pvals in grouped.items()}


def _as_specs(scores: Sequence[Union[str, ScoreSpec]], parser) -> List[ScoreSpec]:
    return [parser(s) if isinstance(s, str) else s for s in scores]


class PasScanner:
    """
    Runs permutation scans of PAS and dvPAS scores

    Every scan derives its random streams from one seed:
    1. scan: column c permutes with stream (0, c)
    2. dvscan: DV permutations from stream (1,)
    3. staged dvscan: stage k draws from stream (2, k), its erasure from (3, k)
    """

    def __init__(self, n_perms: int = DEFAULT_PERMUTATIONS, threads: int = 1,
                 tail: Union[str, Tail] = Tail.UPPER, seed: Optional[int] = None):
        """
        Initialize the scanner

        Args:
            n_perms: permutations per P value
            threads: worker threads for the replicates
            tail: 'upper' or 'two-sided'
            seed: seed of every stream, drawn from entropy when omitted
        """
        if n_perms < 1:
            raise ValidationError(f"At least one permutation is needed, got {n_perms}")
        self.n_perms = n_perms
        self.threads = max(1, threads)
        self.tail = Tail(tail)
        self.rng = RngStream(seed) if seed is not None else RngStream.from_entropy()

    @property
    def seed(self) -> int:
        return self.rng.seed

    def scan(self, dm: DataMatrix, scores: Sequence[Union[str, ScoreSpec]],
             columns: Optional[Sequence[int]] = None) -> List[ScanOutputRow]:
        """
        Permutation P values of single-column scores

        Args:
            dm: data matrix
            scores: score names or specs
            columns: focal columns, all by default

        Returns:
            One row per (column, score), columns outermost
        """
        specs = _as_specs(scores, ScoreSpec.parse)
        columns = list(range(dm.cols)) if columns is None else [int(c) for c in columns]
        logger.info("[1/2] Computing total matches over %d pairs...", dm.n_pairs)
        summary = total_matches(dm)
        pairs = summary.pairs

        logger.info("[2/2] Permuting %d column(s), %d score(s) each...", len(columns), len(specs))
        rows = []
        for column in columns:
            stream = self.rng.child(SCAN_STREAM, column)
            arity = dm.arities[column]
            cdfs = {}
            for spec in (s for s in specs if s.needs_null_cdfs):
                def build(values, totals, mode=spec.sets_mode):
                    return conditional_sets_from(values, arity, totals, dm.cols, mode, column, pairs)
                cdfs[spec.name] = null_cdfs(dm, column, [build], spec.conditioning, self.n_perms,
                                            stream, self.threads, summary)[0]
            fns = [spec.score_function(column, arity, dm.cols, pairs, cdfs.get(spec.name))
                   for spec in specs]
            estimates = permute_pvalues(dm, column, fns, self.n_perms,
                                        [spec.aggregation for spec in specs], self.tail,
                                        stream, self.threads, summary)
            rows.extend(ScanOutputRow.from_estimate(dm.column_ids[column], spec.name, estimate)
                        for spec, estimate in zip(specs, estimates))
        return rows

    def mee(self, dm: DataMatrix, n: int = 3) -> List[ScanOutputRow]:
        """meePAS of every column; no P values are attached"""
        results = mee_pas(dm, total_matches(dm), n)
        return [ScanOutputRow(dm.column_ids[r.column], f"mee{n}", r.delta, float('nan'),
                              float('nan'), 0,
                              note='' if r.excluded is None else f"excluded={dm.column_ids[r.excluded]}")
                for r in results]

    def dvscan(self, dm: DataMatrix, scores: Sequence[Union[str, DvScoreSpec]],
               ivs: Optional[Sequence[int]] = None) -> List[ScanOutputRow]:
        """
        DV-permutation P values of every IV under every dv score

        Returns:
            One row per (IV, score), IVs outermost

        Raises:
            ValidationError: without a designated DV
        """
        if dm.dv_index is None:
            raise ValidationError("dvscan needs a designated DV column")
        specs = _as_specs(scores, DvScoreSpec.parse)
        ivs = list(dm.iv_indices) if ivs is None else [int(j) for j in ivs]
        if dm.dv_index in ivs:
            raise ValidationError("The DV cannot be scored against itself")
        logger.info("[1/2] Computing total matches over %d pairs...", dm.n_pairs)
        summary = total_matches(dm)
        logger.info("[2/2] Permuting the DV for %d IV(s), %d score(s) each...",
                    len(ivs), len(specs))
        estimates = dv_scan_pvalues(dm, specs, ivs, self.n_perms, self.rng.child(DVSCAN_STREAM),
                                    self.tail, self.threads, summary)
        return [ScanOutputRow.from_estimate(dm.column_ids[iv], spec.name, estimates[(iv, spec.name)])
                for iv in ivs for spec in specs]

    def staged_dvscan(self, dm: DataMatrix, n_max: int = 3,
                      erase_threshold: float = DEFAULT_ERASE_THRESHOLD,
                      stage_cutoff: Optional[float] = None) -> StagedScanResult:
        """
        Scan for DV associations order by order

        Stage 1 scores each IV's marginal chi-square and erases the marginal
        effects of IVs at or below erase_threshold. Stage k >= 2 scores every
        IV with dvMom^k-i, and stage 2 with dvMom1-ik as well; the joint
        effects of IVs at or below stage_cutoff under any of the stage's
        scores are erased before the next stage.

        Args:
            dm: data matrix with a binary DV
            n_max: last stage, at least 2
            erase_threshold: marginal P value at or below which effects are erased
            stage_cutoff: erasure cutoff of stages k >= 2, erase_threshold by default

        Returns:
            StagedScanResult
        """
        if dm.dv_index is None or dm.arities[dm.dv_index] != 2:
            raise ValidationError("Staged dvscan needs a designated binary DV")
        if n_max < 2:
            raise ValidationError(f"Staged dvscan needs at least 2 stages, got {n_max}")
        stage_cutoff = erase_threshold if stage_cutoff is None else stage_cutoff
        result = StagedScanResult()
        pvalues: Dict[str, List[float]] = {}

        logger.info("[1/%d] Marginal chi-square scan...", n_max)
        for iv in dm.iv_indices:
            chi2, p = marginal_chi2(dm, iv)
            column_id = dm.column_ids[iv]
            result.rows.append(ScanOutputRow(column_id, 'marginal-chi2', chi2, p,
                                             float('nan'), 0, erased=p <= erase_threshold))
            pvalues.setdefault(column_id, []).append(p)
        work, result.toggles = erase_marginals(dm, erase_threshold,
                                               self.rng.child(STAGED_STREAM, 1))
        treated = {dm.column_ids[j] for j in result.toggles.treated_ivs}

        for stage in range(2, n_max + 1):
            if not work.iv_indices:
                break
            specs = [DvScoreSpec('mom', stage, 'i')]
            if stage == 2:
                specs.append(DvScoreSpec('mom', 1, 'ik'))
            logger.info("[%d/%d] %s scan of %d IV(s)...", stage, n_max,
                        '/'.join(spec.name for spec in specs), len(work.iv_indices))
            estimates = dv_scan_pvalues(work, specs, work.iv_indices, self.n_perms,
                                        self.rng.child(STAGED_STREAM, stage), self.tail,
                                        self.threads)
            flagged = []
            for iv in work.iv_indices:
                column_id = work.column_ids[iv]
                hit = False
                for spec in specs:
                    estimate = estimates[(iv, spec.name)]
                    result.rows.append(ScanOutputRow.from_estimate(
                        column_id, spec.name, estimate,
                        column_id in treated or column_id in result.erased_at))
                    if not np.isnan(estimate.p):
                        pvalues.setdefault(column_id, []).append(estimate.p)
                        hit = hit or estimate.p <= stage_cutoff
                if hit:
                    flagged.append(iv)
                    result.erased_at.setdefault(column_id, stage)
            if flagged:
                logger.info("Erasing joint effects of %d IV(s) flagged at stage %d",
                            len(flagged), stage)
                work = erase_interactions(work, flagged,
                                          self.rng.child(STAGED_ERASE_STREAM, stage))

        result.combined = {column: fisher_combine(pvals) for column, pvals in pvalues.items()}
        return result
