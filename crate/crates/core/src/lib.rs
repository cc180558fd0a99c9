//! Best-of-both-worlds online learning: LBINFV for combinatorial
//! semi-bandits, hybrid-regularizer FTRL with exploration by optimization for
//! locally observable partial-monitoring games, and a mixing-based learner for
//! globally observable games, together with game analysis, environment
//! simulators and a regret-measurement harness.

pub mod env;
pub mod error;
pub mod ftrl;
pub mod harness;
pub mod linalg;
pub mod pm;
pub mod regularizers;
pub mod semibandit;

pub use error::{Error, Result};
pub use ftrl::{FtrlProblem, FtrlSolution, Region};
pub use harness::{ExperimentConfig, GrowthModel, RunArtifact, SlopeReport};
pub use pm::{analyze, GameAnalysis, GlobalPmLearner, LocalPmLearner, Observability, PmGame};
pub use regularizers::{Potential, PotentialKind};
pub use semibandit::{ActionSet, Predictor, RoundOutcome, SemiBanditConfig, SemiBanditLearner};
