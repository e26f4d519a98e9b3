//! Method comparison by aligned ranks and image-level inference by sign-flip
//! permutation of TFCE-enhanced pseudo-t maps.

mod friedman;
mod permutation;
mod smoothing;
mod tfce;

pub use friedman::{
    bonferroni_adjust, descending_midranks, friedman_aligned_ranks, shaffer_adjust, shaffer_multipliers,
    shaffer_posthoc, shaffer_true_sets, significance_frequency_table, step_down_adjust, FriedmanResult,
    RankSummary, ResultsTable,
};
pub use permutation::{per_subject_permutation_test, sign_flip_permutation_test, PValueMap, PermutationConfig};
pub use smoothing::{moments, pseudo_t_from_moments, smoothed_one_sample_t, MaskedSmoother, PseudoT, SATURATED_T};
pub use tfce::{connectivity_offsets, Tfce, TfceConfig};
