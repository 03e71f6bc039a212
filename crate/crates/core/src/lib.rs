//! Fairness objectives for multi-agent multi-armed bandits.
//!
//! The crate scores policies for procedural, equality and utilitarian
//! fairness, computes optimal policies for those objectives and for two
//! welfare baselines, learns fair policies online with regret tracking,
//! certifies core membership, and drives the synthetic and PrefLib-based
//! experiments.

pub mod coregame;
pub mod error;
pub mod learning;
pub mod lp;
pub mod model;
pub mod policies;
pub mod preflib;
pub mod prefgen;
pub mod scores;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{
    favorite_sets, inequality_d, nash_welfare_shares, nash_welfare_utilities, sample_reward,
    utilities, decision_shares, EstimatorState, FavoriteSets, Policy, RewardDist, RewardMatrix,
    RewardModel, ShareAllocation, DEFAULT_TIE_TOLERANCE,
};
pub use policies::{Objective, SolverSettings, StepRule};
pub use scores::{ef_score, pf_score, score_all, uf_score, FairnessReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for stream `stream` under `seed`.
///
/// Streams are independent ChaCha sequences, so per-cell or per-run
/// generators do not depend on scheduling order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
