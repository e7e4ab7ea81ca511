//! KL divergences, likelihood-ratio experiments, Hankel ranks and bounds.

mod bounds;
mod hankel;
mod kl;
mod llr;

pub use bounds::{f_t, filtered_vol_divergence, nab_bounds, BoundReport};
pub use hankel::{
    build_hankel, hankel_strings, model_hankel, numerical_rank, HankelMatrix, HANKEL_STRING_CAP, RANK_REL_TOL,
};
pub use kl::{kl_exact_small, kl_monte_carlo, McEstimate, EXACT_KL_CAP};
pub use llr::{llr_experiment, llr_histogram, summarize_llr, Histogram, LlrSample, LlrSummary, LLR_BINS};
