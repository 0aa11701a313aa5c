//! Patch-level alignment of reference features to the query image.
//!
//! Single-to-multi-scale alignment (S-A) correlates 4× query patches with
//! key patches at every scale; multi-to-multi alignment (M-A) correlates each
//! scale with itself and merges the three correlations on the 4× grid. Both
//! gather reference value patches by hard argmax and report the row maxima as
//! confidences.

mod accuracy;
mod align;
mod correlation;
mod embed;

pub use accuracy::{cell_centre_hr, is_hit, score_matches, Candidate, MatchAccuracy, MatchMethod, MatchSource};
pub use align::{
    assemble_ma_graph, assemble_sa_graph, fold_weights, ma_align, ma_matches, plan_alignment, sa_align, sa_matches,
    transfer_index, AlignConfig, AlignParams, AlignedPyramid, AlignmentPlan, MaMatches, SaMatches,
};
pub use correlation::{
    brute_force_match, correlate, hard_match, merge_correlations, row_max_weights, upsample_correlation, warp,
    CorrelationMatrix, MatchIndex, SoftWeightVector,
};
pub use embed::{word_embed, PatchEmbedding, Projection};
pub use crate::numerics::GridMeta;

#[cfg(test)]
mod tests;
