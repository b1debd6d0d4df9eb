"""Core modules for pairwise association scanning"""

from .data_matrix import (
    DataMatrix,
    FrequencyScheme,
    RngStream,
    as_generator,
    balanced_dv,
    column_ids_for,
    generate_null_dm,
    load_dm,
    multinomial_counts,
    null_column
)
from .pairwise import (
    ConditionalSets,
    HybridSets,
    PairwiseSummary,
    conditional_sets,
    hybrid_sets,
    pair_index,
    pm_column_fast,
    total_matches
)
from .pas_scores import (
    LkxBundle,
    MeeResult,
    MomentScore,
    ScoreSpec,
    chix,
    chix_dof,
    ks,
    lkx,
    log_factorial,
    mee_pas,
    mom,
    null_cdf_states
)
from .dvpas_scores import DvScoreSpec, dv_chix, dv_ks, dv_lkx, dv_mom, parse_any_score
from .inference import (
    PValueEstimate,
    Tail,
    ToggleLog,
    TuningResult,
    dv_scan_pvalues,
    erase_interactions,
    erase_marginals,
    fisher_combine,
    marginal_chi2,
    null_cdfs,
    permute_pvalue,
    permute_pvalues,
    sidak_cutoff,
    tune_erasure
)
from .theory import (
    MatchDistribution,
    PureChi2Partition,
    ReferenceTestResult,
    VectorLikelihoodTable,
    brute_force_likelihoods,
    contingency_reference_tests,
    direct_pm_moments,
    enumerate_uniform_counts,
    likelihood_moments,
    multinomial_covariance_contrast,
    naive_binomial,
    prob_m_binary,
    prob_m_uniform,
    pure_chi2_sums,
    reference_matrix,
    two_step_numeric,
    uniform_match_counts
)
from .simulators import (
    BlockSourceSet,
    ModelDM,
    ModelKind,
    block_dm,
    dilute_model,
    embed,
    embed_models,
    encounter_model,
    expand_model,
    extended_2way,
    load_model,
    pure_dv_model,
    pure_nway,
    run_enriched_source,
    save_model,
    synthetic_source,
    trinary_from_haplotypes
)

__all__ = [
    "DataMatrix",
    "FrequencyScheme",
    "RngStream",
    "as_generator",
    "balanced_dv",
    "column_ids_for",
    "generate_null_dm",
    "load_dm",
    "multinomial_counts",
    "null_column",
    "ConditionalSets",
    "HybridSets",
    "PairwiseSummary",
    "conditional_sets",
    "hybrid_sets",
    "pair_index",
    "pm_column_fast",
    "total_matches",
    "LkxBundle",
    "MeeResult",
    "MomentScore",
    "ScoreSpec",
    "chix",
    "chix_dof",
    "ks",
    "lkx",
    "log_factorial",
    "mee_pas",
    "mom",
    "null_cdf_states",
    "DvScoreSpec",
    "dv_chix",
    "dv_ks",
    "dv_lkx",
    "dv_mom",
    "parse_any_score",
    "PValueEstimate",
    "Tail",
    "ToggleLog",
    "TuningResult",
    "dv_scan_pvalues",
    "erase_interactions",
    "erase_marginals",
    "fisher_combine",
    "marginal_chi2",
    "null_cdfs",
    "permute_pvalue",
    "permute_pvalues",
    "sidak_cutoff",
    "tune_erasure",
    "MatchDistribution",
    "PureChi2Partition",
    "ReferenceTestResult",
    "VectorLikelihoodTable",
    "brute_force_likelihoods",
    "contingency_reference_tests",
    "direct_pm_moments",
    "enumerate_uniform_counts",
    "likelihood_moments",
    "multinomial_covariance_contrast",
    "naive_binomial",
    "prob_m_binary",
    "prob_m_uniform",
    "pure_chi2_sums",
    "reference_matrix",
    "two_step_numeric",
    "uniform_match_counts",
    "BlockSourceSet",
    "ModelDM",
    "ModelKind",
    "block_dm",
    "dilute_model",
    "embed",
    "embed_models",
    "encounter_model",
    "expand_model",
    "extended_2way",
    "load_model",
    "pure_dv_model",
    "pure_nway",
    "run_enriched_source",
    "save_model",
    "synthetic_source",
    "trinary_from_haplotypes"
]
