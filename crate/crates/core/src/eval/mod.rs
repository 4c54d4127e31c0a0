//! Linear Datamodeling Score, exhaustive population oracles and the α, g, r, o quantities.

mod lds;
mod oracle;
mod stats;

pub use lds::{
    lds, lds_scores, pearson_lds, population_pearson_lds_oracle, subset_sums, LdsReport,
    PopulationLds, MAX_EXHAUSTIVE_N,
};
pub(crate) use oracle::check_signal;
pub use oracle::{alpha_from, alpha_vector, oracle_lhs, AlphaVector, OracleQuantities, DEGENERATE_REL};
pub use stats::{average_ranks, mean_stderr, pearson, spearman};
