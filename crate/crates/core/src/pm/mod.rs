//! Partial monitoring: game representation, structural analysis, and the
//! two best-of-both-worlds learners.

pub mod analysis;
pub mod exo;
pub mod game;
pub mod global;
pub mod local;

pub use analysis::{analyze, EstimationFunction, GameAnalysis, Observability};
pub use exo::{exo_objective, ExoOptions, ExoSolution, ExoSolver};
pub use game::PmGame;
pub use global::{GlobalConfig, GlobalPmLearner, GlobalRound};
pub use local::{LocalConfig, LocalPmLearner, LocalRound};
