"""Scores focused on a dependent-variable column: dvMom^n, dvCHIx, dvLKx and dvKS"""

import logging
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ..exceptions import ValidationError
from .pairwise import (
    ConditionalSets,
    HybridSets,
    PairIndex,
    conditional_sets_from,
    hybrid_sets_from,
    pair_index,
)
from .pas_scores import (
    LkxBundle,
    MomentScore,
    NullCdfs,
    ScoreFunction,
    ScoreSpec,
    _chi2_of_table,
    ks,
    ks_cells,
    lkx_from_table,
    mom,
    moment_of_counts,
)

logger = logging.getLogger(__name__)

_DV_MOMENT_NAME = re.compile(r'^dvmom(\d+)(s?)(MM|ikz|ik|iz|i)?$')
_HYBRID_MODE = {'MM': 'MM', 'ik': 'ik', 'ijkl': 'ijkl'}


def dv_mom(sets: Union[ConditionalSets, HybridSets], n: int, conditioning: str = 'plain',
           standardized: bool = False) -> MomentScore:
    """
    n-th moment of m for an IV scored against the DV

    Args:
        sets: ConditionalSets of the IV for 'plain' and 'i'; HybridSets
              (S = DV, E = IV) for 'MM' and 'ik'
        n: moment order
        conditioning: 'plain' (any IV match), 'i' (per IV marker), 'MM'
                      (generic matches at both DV and IV) or 'ik' (one cell
                      per DV marker i and IV marker k; mismatch rows ignored)
        standardized: divide central moments of order >= 3 by sd^n

    Returns:
        MomentScore
    """
    if conditioning in ('plain', 'i'):
        if not isinstance(sets, ConditionalSets):
            raise ValidationError(f"dvMom conditioning '{conditioning}' needs ConditionalSets")
        score = mom(sets, n, 'M' if conditioning == 'plain' else 'i', standardized)
        return MomentScore(n, conditioning, score.values, score.labels)

    if not isinstance(sets, HybridSets):
        raise ValidationError(f"dvMom conditioning '{conditioning}' needs HybridSets")
    if n < 1:
        raise ValidationError(f"Moment order must be at least 1, got {n}")
    s_rows = [k for k, is_match in enumerate(sets.s_match_states) if is_match]
    e_rows = [k for k, is_match in enumerate(sets.e_match_states) if is_match]
    if conditioning == 'MM':
        counts = sets.joint_counts[np.ix_(s_rows, e_rows)].sum(axis=(0, 1))
        return MomentScore(n, 'MM', np.array([moment_of_counts(counts, n, standardized)]), ('MM',))
    if conditioning == 'ik':
        if sets.mode == 'MM':
            raise ValidationError("dvMom-ik needs hybrid sets built in 'ik' or 'ijkl' mode")
        values, labels = [], []
        for i in s_rows:
            for k in e_rows:
                values.append(moment_of_counts(sets.joint_counts[i, k], n, standardized))
                labels.append(f"{sets.s_labels[i]}|{sets.e_labels[k]}")
        return MomentScore(n, 'ik', np.array(values), tuple(labels))
    raise ValidationError(f"Unknown dvMom conditioning '{conditioning}'")


def _check_hybrid_mode(hybrid: HybridSets, mode: str) -> None:
    if mode not in _HYBRID_MODE:
        raise ValidationError(f"Unknown hybrid score mode '{mode}'")
    if hybrid.mode != _HYBRID_MODE[mode]:
        raise ValidationError(f"Score mode '{mode}' needs hybrid sets built in '{mode}' mode, "
                              f"got '{hybrid.mode}'")


def dv_chix(hybrid: HybridSets, mode: str = 'MM') -> float:
    """
    Chi-square departure of the DV states from the hybrid M_m..E_k fragments

    Expected counts are S_i * (M_m..E_k) / W over (S state, E state, m) cells.

    Args:
        hybrid: HybridSets with S = DV, E = IV
        mode: 'MM' or 'ijkl', matching the mode the sets were built in

    Returns:
        dvCHIx score
    """
    if mode not in ('MM', 'ijkl'):
        raise ValidationError(f"Unknown dvCHIx mode '{mode}'")
    _check_hybrid_mode(hybrid, mode)
    if hybrid.n_pairs == 0:
        return 0.0
    table = hybrid.joint_counts.reshape(hybrid.joint_counts.shape[0], -1)
    return _chi2_of_table(table, hybrid.s_counts, hybrid.fragment_counts.ravel(), hybrid.n_pairs)


def dv_lkx(hybrid: HybridSets) -> LkxBundle:
    """
    dvLKx, dvLKm and dvmaxLKm in log space

    The DV states are paired at random with the hybrid M_m..E_k fragments;
    double mismatches are not phase-distinguished.
    """
    table = hybrid.joint_counts.reshape(hybrid.joint_counts.shape[0], -1)
    return lkx_from_table(table, hybrid.s_counts, hybrid.fragment_counts.ravel())


def dv_ks(sets: ConditionalSets, null_cdfs: NullCdfs, mode: str = 'M') -> float:
    """KS score of an IV whose null c.d.f.s come from DV permutations"""
    return ks(sets, null_cdfs, mode)


@dataclass(frozen=True)
class DvScoreSpec(ScoreSpec):
    """
    A named score of one IV against the DV

    conditioning is 'M' (plain) or 'i' for plain moments and KS, 'MM' or
    'ik' for hybrid moments, 'MM' or 'ijkl' for dvCHIx and the dvLKx family.
    """

    @classmethod
    def parse(cls, text: str) -> 'DvScoreSpec':
        """
        Parse names such as dvmom2, dvmom2i, dvmom2iz, dvmom1MM, dvmom1ik,
        dvmom1ikz, dvchix-MM, dvchix-ijkl, dvlkx, dvlkx-ijkl, dvks-M, dvks-i

        Raises:
            ValidationError: on unknown names
        """
        name = text.strip()
        match = _DV_MOMENT_NAME.match(name)
        if match:
            order = int(match.group(1))
            if order < 1:
                raise ValidationError(f"Moment order must be at least 1 in '{text}'")
            suffix = match.group(3) or 'M'
            aggregation = 'z' if suffix.endswith('z') else 'raw'
            conditioning = {'M': 'M', 'MM': 'MM', 'i': 'i', 'iz': 'i',
                            'ik': 'ik', 'ikz': 'ik'}[suffix]
            return cls('mom', order, conditioning, aggregation, bool(match.group(2)))
        family, _, mode = name.partition('-')
        if family == 'dvchix' and mode in ('MM', 'ijkl'):
            return cls('chix', conditioning=mode)
        if family in ('dvlkx', 'dvlkxm', 'dvmaxlkm') and mode in ('', 'MM', 'ik', 'ijkl'):
            return cls(family[2:], conditioning=mode or 'MM')
        if family == 'dvks' and mode in ('M', 'i'):
            return cls('ks', conditioning=mode)
        raise ValidationError(f"Unknown dv score '{text}'")

    @property
    def name(self) -> str:
        if self.family == 'mom':
            suffix = {'M': '', 'i': 'i', 'MM': 'MM', 'ik': 'ik'}[self.conditioning]
            if self.aggregation == 'z':
                suffix += 'z'
            return f"dvmom{self.order}{'s' if self.standardized else ''}{suffix}"
        if self.family in ('lkx', 'lkxm', 'maxlkm') and self.conditioning == 'MM':
            return f"dv{self.family}"
        return f"dv{self.family}-{self.conditioning}"

    @property
    def uses_hybrid(self) -> bool:
        return self.conditioning in ('MM', 'ik', 'ijkl')

    @property
    def sets_mode(self) -> str:
        if self.uses_hybrid:
            return _HYBRID_MODE[self.conditioning]
        return 'per-marker' if self.conditioning == 'i' else 'generic'

    def cells(self, sets, null_cdfs: Optional[NullCdfs] = None) -> np.ndarray:
        if self.family == 'mom':
            conditioning = 'plain' if self.conditioning == 'M' else self.conditioning
            return dv_mom(sets, self.order, conditioning, self.standardized).values
        if self.family == 'chix':
            return np.array([dv_chix(sets, self.conditioning)])
        if self.family == 'ks':
            if null_cdfs is None:
                raise ValidationError(f"Score {self.name} needs null c.d.f.s")
            return ks_cells(sets, null_cdfs, self.conditioning)
        bundle = dv_lkx(sets)
        if self.family == 'lkx':
            return np.array([-bundle.log_lkx])
        if self.family == 'lkxm':
            return np.array([-bundle.log_lkm])
        return np.array([bundle.log_maxlkm])

    def dv_score_function(self, iv: int, iv_values: np.ndarray, iv_arity: int, dv: int,
                          n_cols: int, pairs: Optional[PairIndex] = None,
                          null_cdfs: Optional[NullCdfs] = None) -> ScoreFunction:
        """
        Closure scoring one IV against a (possibly permuted) DV column

        The closure takes the DV marker vector and the total matches of the
        matrix holding that DV, and returns this score's cells.
        """
        iv_values = np.asarray(iv_values)
        mode = self.sets_mode

        def score(dv_values: np.ndarray, totals: np.ndarray) -> np.ndarray:
            index = pairs if pairs is not None else pair_index(len(dv_values))
            if self.uses_hybrid:
                sets = hybrid_sets_from(dv_values, 2, iv_values, iv_arity, totals, n_cols,
                                        mode, dv, iv, index)
            else:
                sets = conditional_sets_from(iv_values, iv_arity, totals, n_cols, mode, iv, index)
            return self.cells(sets, null_cdfs)

        return score


def parse_any_score(text: str) -> ScoreSpec:
    """ScoreSpec or DvScoreSpec depending on the 'dv' prefix"""
    if text.strip().startswith('dv'):
        return DvScoreSpec.parse(text)
    return ScoreSpec.parse(text)
