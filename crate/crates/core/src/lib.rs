//! Robust day-ahead market clearing: wind uncertainty sets, robust unit
//! commitment by column-and-constraint generation, and dual-based pricing.

pub mod case;
pub mod ccg;
pub mod copula;
pub mod formulation;
pub mod history;
pub mod imeus;
pub mod pipeline;
pub mod pricing;
pub mod solver;
pub mod stats;

pub use case::{load_case, pjm5, MarketCase};
pub use ccg::{solve_rscuc, CcgOptions, RucSolution, WorstCase};
pub use copula::CopulaModel;
pub use formulation::{Commitment, ModelVariant, Realization, UncertaintySets};
pub use history::{synthetic_history, SynthConfig, WindHistory};
pub use imeus::{BoxSet, Imeus, WindSet};
pub use pipeline::{RunConfig, SetMethod};
pub use pricing::{solve_rsced, PriceReport, Rsced, SettlementReport};
