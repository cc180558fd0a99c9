//! Experiment runner: declarative configs, seeded replications, regret
//! aggregation and machine-readable artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    checkpoint_grid, pm_gaps, sb_optimum, PmEnv, PmEnvSpec, RegretMode, RegretTrace, SbEnvSpec, SemiBanditEnv,
};
use crate::error::{Error, Result};
use crate::pm::{analyze, GameAnalysis, GlobalConfig, GlobalPmLearner, LocalConfig, LocalPmLearner, Observability, PmGame};
use crate::semibandit::{ActionSet, Predictor, SemiBanditConfig, SemiBanditLearner};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "BOBW_WORKERS";

pub const SCHEMA_VERSION: u32 = 1;

/// JSON schema of [`RunArtifact`].
pub const ARTIFACT_SCHEMA: &str = include_str!("../schema/run_artifact.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    LbinfvLs,
    LbinfvGd { eta: f64 },
    PmLocal,
    PmGlobal,
}

/// A game given inline or by a path relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    Inline(PmGame),
    File { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case", deny_unknown_fields)]
pub enum Problem {
    SemiBandit {
        d: usize,
        action_set: ActionSet,
        environment: SbEnvSpec,
    },
    PartialMonitoring {
        game: GameSource,
        environment: PmEnvSpec,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exo_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exo_max_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub algorithm: Algorithm,
    pub problem: Problem,
    pub horizon: u64,
    pub replications: u32,
    pub base_seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Resolves file references and checks that the algorithm, game and
    /// environment fit together.
    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared> {
        if self.horizon < 8 {
            return Err(Error::Config(format!(
                "horizon {} is below the minimum of 8 (log T must be at least 2)",
                self.horizon
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        let o = &self.overrides;
        if let Some(e) = o.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("epsilon = {e} must be positive")));
            }
        }
        if let Some(t) = o.exo_tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("exo_tolerance = {t} must be positive")));
            }
        }
        match (&self.algorithm, &self.problem) {
            (Algorithm::LbinfvLs | Algorithm::LbinfvGd { .. }, Problem::SemiBandit { d, action_set, environment }) => {
                let predictor = match self.algorithm {
                    Algorithm::LbinfvGd { eta } => Predictor::GradientDescent { eta },
                    _ => Predictor::LeastSquares,
                };
                let learner = SemiBanditConfig {
                    d: *d,
                    action_set: action_set.clone(),
                    horizon: self.horizon,
                    epsilon: o.epsilon.unwrap_or(0.5),
                    predictor,
                };
                learner.validate().map_err(as_config)?;
                SemiBanditEnv::new(environment.clone(), *d, action_set)?;
                Ok(Prepared::SemiBandit {
                    learner,
                    environment: environment.clone(),
                })
            }
            (Algorithm::PmLocal | Algorithm::PmGlobal, Problem::PartialMonitoring { game, environment }) => {
                let game = match game {
                    GameSource::Inline(g) => g.clone(),
                    GameSource::File { file } => PmGame::from_path(&base_dir.join(file))?,
                };
                let analysis = analyze(&game)?;
                let wanted_local = self.algorithm == Algorithm::PmLocal;
                let ok = match analysis.observability {
                    Observability::Locally => true,
                    Observability::GloballyOnly => !wanted_local,
                    Observability::NotGlobal => false,
                };
                if !ok {
                    return Err(Error::Incompatible(classification_report(&analysis)));
                }
                PmEnv::new(environment.clone(), &game)?;
                Ok(Prepared::Pm {
                    local: wanted_local,
                    game,
                    analysis: Box::new(analysis),
                    environment: environment.clone(),
                    horizon: self.horizon,
                    overrides: o.clone(),
                })
            }
            _ => Err(Error::Config(
                "algorithm and problem protocol do not match (LBINFV needs a semi-bandit problem, PM learners a game)".into(),
            )),
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidProblem(m) => Error::Config(m),
        other => other,
    }
}

fn classification_report(a: &GameAnalysis) -> String {
    format!(
        "game is classified {:?}; Pareto actions {:?}; neighbor pairs {:?}",
        a.observability, a.pareto, a.neighbors
    )
}

/// A validated configuration with resolved inputs.
#[derive(Debug, Clone)]
pub enum Prepared {
    SemiBandit {
        learner: SemiBanditConfig,
        environment: SbEnvSpec,
    },
    Pm {
        local: bool,
        game: PmGame,
        analysis: Box<GameAnalysis>,
        environment: PmEnvSpec,
        horizon: u64,
        overrides: Overrides,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub exo_fallbacks: u64,
    pub exo_unconverged: u64,
    pub gamma_clamps: u64,
    pub corruption_used: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: u32,
    pub seed: u64,
    /// Cumulative regret at each checkpoint of the run's grid.
    pub regret: Vec<f64>,
    pub final_regret: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub t: u64,
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// `"pseudo"` in stochastic and corrupted regimes, `"best_fixed"` under
    /// adversarial schedules.
    pub regret_kind: String,
    pub checkpoints: Vec<u64>,
    pub replications: Vec<ReplicationSummary>,
    pub aggregate: Vec<AggregatePoint>,
    pub diagnostics: Diagnostics,
}

/// Wall-clock figures, kept out of the artifact so reruns stay byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub replication_seconds: Vec<f64>,
    pub workers: usize,
}

/// Learner and environment streams derived from one replication seed.
pub fn replication_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut learner = ChaCha8Rng::seed_from_u64(seed);
    learner.set_stream(0);
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    env.set_stream(1);
    (learner, env)
}

/// Bitmask encoding of a semi-bandit action for trace records.
fn mask(action: &[bool]) -> usize {
    action
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .fold(0usize, |m, (i, _)| m | (1usize << (i % usize::BITS as usize)))
}

/// Runs one replication and returns its trace and diagnostics.
pub fn run_replication(prepared: &Prepared, seed: u64, record_all: bool) -> Result<(RegretTrace, Diagnostics)> {
    let (mut lrng, mut erng) = replication_rngs(seed);
    match prepared {
        Prepared::SemiBandit { learner, environment } => {
            let d = learner.d;
            let horizon = learner.horizon;
            let mut env = SemiBanditEnv::new(environment.clone(), d, &learner.action_set)?;
            let mode = match env.means() {
                Some(mu) => {
                    let (_, best) = sb_optimum(&learner.action_set, mu)?;
                    RegretMode::Pseudo {
                        expected: Vec::new(),
                        best,
                    }
                }
                None => RegretMode::BestFixed,
            };
            let means = env.means().map(<[f64]>::to_vec);
            let pseudo = matches!(mode, RegretMode::Pseudo { .. });
            let mut trace = RegretTrace::new(mode, checkpoint_grid(horizon), record_all);
            let mut sb = SemiBanditLearner::new(learner.clone())?;
            let mut cum = vec![0.0; d];
            for t in 0..horizon {
                let e = env.emit(t, &mut erng);
                let out = sb.step(&e.value, &mut lrng)?;
                let mixed: f64 = out.x.iter().zip(&e.value).map(|(x, l)| x * l).sum();
                let expected = means.as_ref().map_or(0.0, |mu| dot_mask(&out.action, mu));
                let comparator = if pseudo {
                    0.0
                } else {
                    for (c, l) in cum.iter_mut().zip(&e.value) {
                        *c += l;
                    }
                    let best = learner.action_set.best_action(&cum);
                    dot_mask(&best, &cum)
                };
                trace.push(mask(&out.action), mixed, expected, comparator);
            }
            Ok((
                trace,
                Diagnostics {
                    corruption_used: env.corruption_used(),
                    ..Diagnostics::default()
                },
            ))
        }
        Prepared::Pm {
            local,
            game,
            analysis,
            environment,
            horizon,
            overrides,
        } => {
            let k = game.k();
            let mut env = PmEnv::new(environment.clone(), game)?;
            let mode = match env.nu() {
                Some(nu) => {
                    let (gaps, best) = pm_gaps(game, nu)?;
                    let best_val: f64 = game.loss_row(best).iter().zip(nu).map(|(l, p)| l * p).sum();
                    RegretMode::Pseudo {
                        expected: gaps.iter().map(|g| g + best_val).collect(),
                        best: best_val,
                    }
                }
                None => RegretMode::BestFixed,
            };
            let mut trace = RegretTrace::new(mode, checkpoint_grid(*horizon), record_all);
            let mut cum = vec![0.0; k];
            let mut diag = Diagnostics::default();
            enum Learner {
                Local(Box<LocalPmLearner>),
                Global(Box<GlobalPmLearner>),
            }
            let mut learner = if *local {
                let mut cfg = LocalConfig::new(*horizon);
                if let Some(e) = overrides.epsilon {
                    cfg.epsilon = e;
                }
                if let Some(t) = overrides.exo_tolerance {
                    cfg.exo.tolerance = t;
                }
                if let Some(i) = overrides.exo_max_iterations {
                    cfg.exo.max_iterations = i;
                }
                Learner::Local(Box::new(LocalPmLearner::new(game, analysis, cfg)?))
            } else {
                Learner::Global(Box::new(GlobalPmLearner::new(
                    game,
                    analysis,
                    GlobalConfig {
                        horizon: *horizon,
                        c1: overrides.c1,
                    },
                )?))
            };
            for t in 0..*horizon {
                let x = env.emit(t, &mut erng).value;
                let (action, p) = match &mut learner {
                    Learner::Local(l) => {
                        let r = l.step(&mut lrng, |a| game.feedback(a, x))?;
                        (r.action, r.p)
                    }
                    Learner::Global(l) => {
                        let r = l.step(&mut lrng, |a| game.feedback(a, x))?;
                        (r.action, r.p)
                    }
                };
                let mixed: f64 = p.iter().enumerate().map(|(a, pa)| pa * game.loss(a, x)).sum();
                let expected = trace.expected(action).unwrap_or(0.0);
                for (a, c) in cum.iter_mut().enumerate() {
                    *c += game.loss(a, x);
                }
                let comparator = cum.iter().cloned().fold(f64::INFINITY, f64::min);
                trace.push(action, mixed, expected, comparator);
            }
            match &learner {
                Learner::Local(l) => {
                    diag.exo_fallbacks = l.fallbacks();
                    diag.exo_unconverged = l.unconverged();
                }
                Learner::Global(l) => diag.gamma_clamps = l.clamps(),
            }
            diag.corruption_used = env.corruption_used();
            Ok((trace, diag))
        }
    }
}

fn dot_mask(action: &[bool], v: &[f64]) -> f64 {
    action.iter().zip(v).filter(|(a, _)| **a).map(|(_, x)| x).sum()
}

/// Worker count: explicit value, else the environment variable, else 1.
pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        return if w == 0 {
            Err(Error::Config("worker count must be positive".into()))
        } else {
            Ok(w)
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(1),
    }
}

/// Executes every replication and aggregates the results.
pub fn run(config: &ExperimentConfig, base_dir: &Path, workers: usize) -> Result<(RunArtifact, Timing)> {
    let prepared = config.prepare(base_dir)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let results: Vec<Result<(ReplicationSummary, f64)>> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| {
                let t0 = Instant::now();
                let seed = config.base_seed.wrapping_add(u64::from(r));
                let (trace, diagnostics) = run_replication(&prepared, seed, false)?;
                let regret: Vec<f64> = trace.records.iter().map(|rec| rec.regret).collect();
                Ok((
                    ReplicationSummary {
                        replication: r,
                        seed,
                        final_regret: trace.regret(),
                        regret,
                        diagnostics,
                    },
                    t0.elapsed().as_secs_f64(),
                ))
            })
            .collect()
    });
    let mut replications = Vec::with_capacity(results.len());
    let mut seconds = Vec::with_capacity(results.len());
    for r in results {
        let (s, t) = r?;
        replications.push(s);
        seconds.push(t);
    }
    let checkpoints = checkpoint_grid(config.horizon);
    let aggregate = aggregate(&checkpoints, &replications);
    let mut diagnostics = Diagnostics::default();
    for r in &replications {
        diagnostics.exo_fallbacks += r.diagnostics.exo_fallbacks;
        diagnostics.exo_unconverged += r.diagnostics.exo_unconverged;
        diagnostics.gamma_clamps += r.diagnostics.gamma_clamps;
        diagnostics.corruption_used = diagnostics.corruption_used.max(r.diagnostics.corruption_used);
    }
    let pseudo = match &config.problem {
        Problem::SemiBandit { environment, .. } => !matches!(environment, SbEnvSpec::Adversarial { .. }),
        Problem::PartialMonitoring { environment, .. } => !matches!(environment, PmEnvSpec::Adversarial { .. }),
    };
    Ok((
        RunArtifact {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            regret_kind: if pseudo { "pseudo" } else { "best_fixed" }.into(),
            checkpoints,
            replications,
            aggregate,
            diagnostics,
        },
        Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            replication_seconds: seconds,
            workers,
        },
    ))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn aggregate(checkpoints: &[u64], reps: &[ReplicationSummary]) -> Vec<AggregatePoint> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut v: Vec<f64> = reps.iter().map(|r| r.regret[i]).collect();
            v.sort_by(f64::total_cmp);
            AggregatePoint {
                t,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile(&v, 0.5),
                q10: quantile(&v, 0.1),
                q90: quantile(&v, 0.9),
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect()
}

impl RunArtifact {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Long-format CSV: `replication,t,regret`.
    pub fn regret_csv(&self) -> String {
        let mut out = String::from("replication,t,regret\n");
        for r in &self.replications {
            for (t, v) in self.checkpoints.iter().zip(&r.regret) {
                out.push_str(&format!("{},{t},{v}\n", r.replication));
            }
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("t,mean,median,q10,q90,min,max\n");
        for p in &self.aggregate {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.t, p.mean, p.median, p.q10, p.q90, p.min, p.max
            ));
        }
        out
    }

    /// Writes `artifact.json`, `regret.csv`, `aggregate.csv` and the
    /// `timing.json` sidecar into `dir`.
    pub fn write(&self, timing: &Timing, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("artifact.json"), self.to_json())?;
        std::fs::write(dir.join("regret.csv"), self.regret_csv())?;
        std::fs::write(dir.join("aggregate.csv"), self.aggregate_csv())?;
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(timing)? + "\n")?;
        Ok(())
    }
}

/// Growth models for slope checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthModel {
    #[serde(rename = "logT")]
    LogT,
    #[serde(rename = "sqrtT")]
    SqrtT,
    #[serde(rename = "sqrtTlogT")]
    SqrtTLogT,
    #[serde(rename = "T23")]
    T23,
    #[serde(rename = "T")]
    Linear,
}

impl GrowthModel {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            GrowthModel::LogT => t.ln(),
            GrowthModel::SqrtT => t.sqrt(),
            GrowthModel::SqrtTLogT => (t * t.ln()).sqrt(),
            GrowthModel::T23 => t.powf(2.0 / 3.0),
            GrowthModel::Linear => t,
        }
    }
}

impl std::str::FromStr for GrowthModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown growth model {s:?} (logT, sqrtT, sqrtTlogT, T23, T)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub model: GrowthModel,
    /// Least-squares `c` in `R(t) ~ c f(t)` over the second half of the grid.
    pub coefficient: f64,
    pub fit_points: usize,
    pub t_last: u64,
    pub ratio_last: f64,
    pub t_prev: u64,
    pub ratio_prev: f64,
    /// `ratio_last / ratio_prev`.
    pub quotient: f64,
    /// `R(T)/f(T)` divided by the same ratio at `T/4`, when `T/4` is on the grid.
    pub quotient_quarter: Option<f64>,
}

pub const MIN_SLOPE_CHECKPOINTS: usize = 10;

/// Fits the growth model to a cumulative regret trace on a checkpoint grid.
pub fn slope_check(ts: &[u64], regret: &[f64], model: GrowthModel) -> Result<SlopeReport> {
    if ts.len() != regret.len() {
        return Err(Error::Config("checkpoint and regret lengths differ".into()));
    }
    if ts.len() < MIN_SLOPE_CHECKPOINTS {
        return Err(Error::Config(format!(
            "slope check needs at least {MIN_SLOPE_CHECKPOINTS} checkpoints, got {}",
            ts.len()
        )));
    }
    let n = ts.len();
    let half = n / 2;
    let (mut fr, mut ff) = (0.0, 0.0);
    for i in half..n {
        let f = model.eval(ts[i] as f64);
        fr += f * regret[i];
        ff += f * f;
    }
    let ratio = |i: usize| regret[i] / model.eval(ts[i] as f64);
    let last = n - 1;
    let quarter = ts.iter().position(|&t| t == ts[last].div_ceil(4));
    Ok(SlopeReport {
        model,
        coefficient: fr / ff,
        fit_points: n - half,
        t_last: ts[last],
        ratio_last: ratio(last),
        t_prev: ts[last - 1],
        ratio_prev: ratio(last - 1),
        quotient: ratio(last) / ratio(last - 1),
        quotient_quarter: quarter.map(|q| ratio(last) / ratio(q)),
    })
}

impl RunArtifact {
    /// Slope check on the replication-mean trace.
    pub fn slope_check(&self, model: GrowthModel) -> Result<SlopeReport> {
        let mean: Vec<f64> = self.aggregate.iter().map(|p| p.mean).collect();
        slope_check(&self.checkpoints, &mean, model)
    }
}
