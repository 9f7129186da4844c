//! Gibbs sampler: per-tree Metropolis-Hastings with the outer weights
//! integrated out, conjugate outer-weight and noise updates, probit
//! augmentation for binary outcomes, chain orchestration and prediction.

pub mod chain;
pub mod moves;
pub mod predict;
pub mod state;
pub mod stats;

pub use chain::{run_chain, run_chains, ChainSettings, IterationRecord};
pub use moves::{choose_move, grow_log_ratio, move_probabilities, MoveKind};
pub use predict::{predict, predict_draws, summarize, RowSummary};
pub use state::{ChainState, LeafFit, MoveCounts, Proposal, TreeUpdate};
pub use stats::{
    draw_beta, gaussian_base_terms, leaf_suffstats, log_marginal_leaf, normal_above, normal_below, sample_sigma2,
    LeafPosterior, SuffStats,
};
