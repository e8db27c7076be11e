//! Group-level inference over subjects: one-sided t maps with BH-FDR,
//! paired sign-flip permutation tests and a crossed random-intercept model.

mod fdr;
mod lmm;
mod signflip;
mod statmap;
mod ttest;

pub use fdr::{bh_fdr, BhResult};
pub use lmm::{lmm_crossed, lmm_crossed_with, LmmFit, LmmOptions, LmmRow};
pub use signflip::{
    signflip_paired, Sidedness, SignFlipConfig, SignFlipResult, DEFAULT_N_PERM, EXACT_MAX_SUBJECTS,
};
pub use statmap::{
    layer_pair_fractions, model_compare, model_contrast_rows, significance_map, LayerFractions,
    StatMap, TestDescriptor, TestKind,
};
pub use ttest::{one_sample_t_one_sided, student_t_sf, TTest};
