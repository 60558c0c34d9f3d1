//! Seeded multi-run experiments over a classification dataset.
//!
//! Each run reshuffles the dataset, plays `horizon` steps and folds buffered
//! observations into the agent at every `batch_size` boundary. Runs are
//! independent and execute in parallel; results are reduced in run order.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{Agent, Exploration};
use crate::domain::{fmt_real, ArmId, DecisionRecord, Observation, Provenance};
use crate::env::{
    load_dataset, Dataset, DatasetManifest, EnvState, LabelColumn, LoadOptions, Sampling,
};
use crate::error::{Error, Result};
use crate::glm::GlmAgent;
use crate::metrics::{mean_std, noncontextual_fraction, regret_curve};
use crate::noncontextual::BetaBernoulliAgent;
use crate::rng::{derive_seed, streams, RngStream};
use crate::scb::{
    Comparator, ContextHistory, MajorityVote, NcSourceKind, NoncontextualSource, ScbAgent,
    ScbConfig, Scoring,
};

/// The sixteen named agents of the benchmark roster.
pub const ROSTER: [&str; 16] = [
    "IndependentBernoulliArmsEGAgent",
    "LogisticRegressionEGAgent",
    "SCBEGAgent_Ratio",
    "meanSCBEGAgent_Ratio",
    "SCBEGAgent_Diff",
    "meanSCBEGAgent_Diff",
    "IndependentBernoulliArmsTSAgent",
    "LogisticRegressionTSAgent",
    "SCBTSAgent_Ratio",
    "meanSCBTSAgent_Ratio",
    "SCBTSAgent_Diff",
    "meanSCBTSAgent_Diff",
    "IndependentBernoulliArmsUCBAgent",
    "LogisticRegressionUCBAgent",
    "SCBUCBAgent",
    "meanSCBUCBAgent",
];

pub const DEFAULT_RUNS: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_RATIO_DELTA: f64 = 1.5;
pub const DEFAULT_DIFF_DELTA: f64 = 0.5;

pub fn default_delta(comparator: Comparator) -> f64 {
    match comparator {
        Comparator::Ratio => DEFAULT_RATIO_DELTA,
        Comparator::RelativeDifference => DEFAULT_DIFF_DELTA,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    Ts,
    Ucb,
    Eg,
}

impl Strategy {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TS" => Some(Strategy::Ts),
            "UCB" => Some(Strategy::Ucb),
            "EG" => Some(Strategy::Eg),
            _ => None,
        }
    }

    pub fn exploration(self, epsilon: f64, ucb_width: f64) -> Exploration {
        match self {
            Strategy::Ts => Exploration::Thompson,
            Strategy::Ucb => Exploration::Ucb { width: ucb_width },
            Strategy::Eg => Exploration::EpsilonGreedy { epsilon },
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::Ts => "TS",
            Strategy::Ucb => "UCB",
            Strategy::Eg => "EG",
        }
    }
}

/// A resolved agent description.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentSpec {
    Noncontextual(Strategy),
    Contextual(Strategy),
    Scb {
        strategy: Strategy,
        comparator: Comparator,
        source: NcSourceKind,
    },
}

impl AgentSpec {
    /// Parses a roster name or a composite `scb:<ts|ucb|eg>[:<comparator>[:<source>]]`.
    ///
    /// Missing composite parts fall back to `comparator` and `source`.
    pub fn parse(
        spec: &str,
        comparator: Option<Comparator>,
        source: Option<&NcSourceKind>,
    ) -> Result<Self> {
        let unknown = || Error::Config(format!("unknown agent spec {spec:?}"));
        if let Some(rest) = spec.strip_prefix("scb:") {
            let mut parts = rest.splitn(3, ':');
            let strategy = parts.next().and_then(Strategy::parse).ok_or_else(unknown)?;
            let comparator = match parts.next() {
                Some(c) => c.parse()?,
                None => comparator.unwrap_or(Comparator::Ratio),
            };
            let source = match parts.next() {
                Some(s) => s.parse()?,
                None => source.cloned().unwrap_or(NcSourceKind::BetaBernoulliAgent),
            };
            return Ok(AgentSpec::Scb {
                strategy,
                comparator,
                source,
            });
        }
        if !ROSTER.contains(&spec) {
            return Err(unknown());
        }
        let strip = |prefix: &str| {
            spec.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix("Agent"))
        };
        if let Some(s) = strip("IndependentBernoulliArms") {
            return Ok(AgentSpec::Noncontextual(
                Strategy::parse(s).ok_or_else(unknown)?,
            ));
        }
        if let Some(s) = strip("LogisticRegression") {
            return Ok(AgentSpec::Contextual(
                Strategy::parse(s).ok_or_else(unknown)?,
            ));
        }
        let (source, rest) = match spec.strip_prefix("mean") {
            Some(r) => (NcSourceKind::MeanOverHistory, r),
            None => (NcSourceKind::BetaBernoulliAgent, spec),
        };
        let (body, comparator) = if let Some(b) = rest.strip_suffix("_Ratio") {
            (b, Comparator::Ratio)
        } else if let Some(b) = rest.strip_suffix("_Diff") {
            (b, Comparator::RelativeDifference)
        } else {
            (rest, Comparator::RelativeDifference)
        };
        let strategy = body
            .strip_prefix("SCB")
            .and_then(|b| b.strip_suffix("Agent"))
            .and_then(Strategy::parse)
            .ok_or_else(unknown)?;
        Ok(AgentSpec::Scb {
            strategy,
            comparator,
            source,
        })
    }

    pub fn is_hybrid(&self) -> bool {
        matches!(self, AgentSpec::Scb { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub label_column: LabelColumn,
    /// Roster names or composite specs; each is run on the same seeds.
    pub agents: Vec<String>,
    pub runs: usize,
    pub horizon: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    pub ucb_width: f64,
    /// Prior variance of the logistic weights.
    pub lambda: f64,
    /// Append a constant feature to every context.
    pub intercept: bool,
    pub standardize: bool,
    /// `None` picks the comparator's default.
    pub delta: Option<f64>,
    pub comparator: Option<Comparator>,
    pub anneal_rate: f64,
    pub anneal_epochs: Vec<usize>,
    pub nc_source: Option<NcSourceKind>,
    pub scoring: Scoring,
    /// Update Beta counts after every step instead of at batch boundaries.
    pub per_step_beta: bool,
    pub sampling: Sampling,
    /// Check that posteriors stay frozen between batch boundaries.
    pub verify_isolation: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: PathBuf::new(),
            label_column: LabelColumn::Last,
            agents: vec!["SCBTSAgent_Ratio".into()],
            runs: DEFAULT_RUNS,
            horizon: crate::env::DEFAULT_HORIZON,
            batch_size: DEFAULT_BATCH_SIZE,
            epsilon: DEFAULT_EPSILON,
            ucb_width: 1.0,
            lambda: 1.0,
            intercept: true,
            standardize: true,
            delta: None,
            comparator: None,
            anneal_rate: 1.0,
            anneal_epochs: Vec::new(),
            nc_source: None,
            scoring: Scoring::default(),
            per_step_beta: false,
            sampling: Sampling::Cycle,
            verify_isolation: false,
            seed: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.horizon {
            return Err(Error::Config(format!(
                "batch size must lie in 1..={}, got {}",
                self.horizon, self.batch_size
            )));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("no agents given".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Exploration::EpsilonGreedy {
            epsilon: self.epsilon,
        }
        .validate()?;
        Exploration::Ucb {
            width: self.ucb_width,
        }
        .validate()?;
        for a in &self.agents {
            let spec = self.agent_spec(a)?;
            if let AgentSpec::Scb {
                comparator, source, ..
            } = &spec
            {
                self.scb_config(*comparator, source.clone()).validate()?;
            }
        }
        Ok(())
    }

    pub fn agent_spec(&self, name: &str) -> Result<AgentSpec> {
        AgentSpec::parse(name, self.comparator, self.nc_source.as_ref())
    }

    pub fn scb_config(&self, comparator: Comparator, source: NcSourceKind) -> ScbConfig {
        let mut c = ScbConfig::new(
            self.delta.unwrap_or_else(|| default_delta(comparator)),
            comparator,
            source,
        )
        .with_annealing(self.anneal_rate, self.anneal_epochs.clone());
        c.scoring = self.scoring;
        c
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            standardize: self.standardize,
        }
    }

    /// Loads the configured dataset, with the intercept column if enabled.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = load_dataset(&self.dataset, &self.label_column, self.load_options())?;
        Ok(if self.intercept {
            ds.with_intercept()
        } else {
            ds
        })
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "dataset": self.dataset.display().to_string(),
            "label_column": self.label_column.to_string(),
            "agents": self.agents,
            "runs": self.runs,
            "horizon": self.horizon,
            "batch_size": self.batch_size,
            "epsilon": self.epsilon,
            "ucb_width": self.ucb_width,
            "lambda": self.lambda,
            "intercept": self.intercept,
            "standardize": self.standardize,
            "delta": self.delta,
            "comparator": self.comparator.map(|c| c.short_name().to_ascii_lowercase()),
            "anneal_rate": self.anneal_rate,
            "anneal_epochs": self.anneal_epochs,
            "nc_source": self.nc_source.as_ref().map(|s| s.to_string()),
            "scoring": self.scoring.to_string(),
            "per_step_beta": self.per_step_beta,
            "sampling": match self.sampling {
                Sampling::Cycle => "cycle",
                Sampling::WithReplacement => "with-replacement",
            },
            "seed": self.seed,
        })
    }
}

/// Seed of run `run` under `master`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

/// Wires an agent for `arm_count` arms and `dim` features.
///
/// Constituents draw from fixed substreams of `rng`, so a hybrid agent and the
/// plain agents it is built from see the same randomness on the same run.
pub fn build_agent(
    spec: &AgentSpec,
    label: &str,
    arm_count: usize,
    dim: usize,
    config: &ExperimentConfig,
    rng: &RngStream,
) -> Result<Box<dyn Agent>> {
    let explore = |s: Strategy| s.exploration(config.epsilon, config.ucb_width);
    let beta = |s: Strategy| -> Result<BetaBernoulliAgent> {
        Ok(
            BetaBernoulliAgent::new(arm_count, explore(s), rng.substream(streams::NONCONTEXTUAL))?
                .with_per_step_updates(config.per_step_beta),
        )
    };
    let glm = |s: Strategy| {
        GlmAgent::new(
            arm_count,
            dim,
            config.lambda,
            explore(s),
            rng.substream(streams::CONTEXTUAL),
        )
    };
    Ok(match spec {
        AgentSpec::Noncontextual(s) => Box::new(beta(*s)?.with_name(label)),
        AgentSpec::Contextual(s) => Box::new(glm(*s)?.with_name(label)),
        AgentSpec::Scb {
            strategy,
            comparator,
            source,
        } => {
            let cfg = config.scb_config(*comparator, source.clone());
            let nc = match source {
                NcSourceKind::BetaBernoulliAgent => {
                    NoncontextualSource::BetaBernoulli(beta(*strategy)?)
                }
                NcSourceKind::MeanOverHistory => NoncontextualSource::MeanOverHistory {
                    history: ContextHistory::new(cfg.history_capacity),
                    cached: None,
                },
                NcSourceKind::FixedDefaultArm(a) => NoncontextualSource::FixedDefault(*a),
                NcSourceKind::GroupMajorityVote { group_feature } => {
                    NoncontextualSource::GroupMajority {
                        votes: MajorityVote::new(arm_count),
                        group_feature: *group_feature,
                        pending: Vec::new(),
                    }
                }
            };
            Box::new(ScbAgent::new(label, glm(*strategy)?, nc, cfg)?)
        }
    })
}

/// One completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run: usize,
    pub seed: u64,
    pub arms: Vec<ArmId>,
    pub rewards: Vec<f64>,
    /// Threshold in force at each step, for hybrid agents.
    pub deltas: Vec<Option<f64>>,
    pub records: Vec<DecisionRecord>,
    /// Observations folded into the agent across all batch boundaries.
    pub flushed: usize,
}

impl RunTrace {
    pub fn regret_curve(&self) -> Vec<f64> {
        regret_curve(&self.rewards).expect("rewards validated during the run")
    }

    pub fn final_regret(&self) -> f64 {
        *self.regret_curve().last().expect("non-empty trace")
    }

    pub fn noncontextual_fraction(&self) -> Option<f64> {
        noncontextual_fraction(&self.records).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub run: usize,
    pub t: usize,
    pub error: String,
}

/// Plays one run of one agent.
pub fn run_single(
    spec: &AgentSpec,
    label: &str,
    config: &ExperimentConfig,
    dataset: &Arc<Dataset>,
    run: usize,
) -> std::result::Result<RunTrace, RunFailure> {
    let seed = run_seed(config.seed, run);
    let fail = |t: usize, e: Error| RunFailure {
        run,
        t,
        error: e.to_string(),
    };
    let rng = RngStream::new(seed);
    let mut agent = build_agent(
        spec,
        label,
        dataset.class_count(),
        dataset.dim(),
        config,
        &rng,
    )
    .map_err(|e| fail(0, e))?;
    let mut env = EnvState::new(
        Arc::clone(dataset),
        config.horizon,
        config.sampling,
        rng.substream(streams::ENVIRONMENT),
    );
    let mut trace = RunTrace {
        run,
        seed,
        arms: Vec::with_capacity(config.horizon),
        rewards: Vec::with_capacity(config.horizon),
        deltas: Vec::with_capacity(config.horizon),
        records: Vec::new(),
        flushed: 0,
    };
    let mut buffered = 0usize;
    let mut frozen: Option<Vec<f64>> = None;
    for t in 1..=config.horizon {
        let step = (|| -> Result<()> {
            let context = env.step()?;
            if config.verify_isolation {
                let snap = agent.posterior_snapshot();
                match &frozen {
                    Some(f) if bits(f) != bits(&snap) => {
                        return Err(Error::Corruption(format!(
                            "posterior changed inside a batch at t={t}"
                        )))
                    }
                    Some(_) => {}
                    None => frozen = Some(snap),
                }
            }
            let step = agent.select(t, &context)?;
            let reward = env.reward(step.arm)?;
            trace.deltas.push(agent.threshold());
            if let Some(rec) = step.record {
                trace.records.push(rec);
            }
            trace.arms.push(step.arm);
            trace.rewards.push(reward);
            agent.observe(Observation::new(context, step.arm, reward)?)?;
            buffered += 1;
            if t % config.batch_size == 0 || t == config.horizon {
                agent.end_batch(t)?;
                trace.flushed += buffered;
                buffered = 0;
                frozen = None;
            }
            Ok(())
        })();
        if let Err(e) = step {
            log::error!("run {run} of {label} failed at t={t}: {e}");
            return Err(fail(t, e));
        }
    }
    Ok(trace)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[derive(Debug, Clone)]
pub struct AgentResult {
    pub spec: String,
    pub hybrid: bool,
    pub runs: Vec<RunTrace>,
    pub failures: Vec<RunFailure>,
    pub mean_regret: Vec<f64>,
    pub std_regret: Vec<f64>,
}

impl AgentResult {
    fn from_runs(
        spec: String,
        hybrid: bool,
        outcomes: Vec<std::result::Result<RunTrace, RunFailure>>,
    ) -> Self {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => runs.push(r),
                Err(f) => failures.push(f),
            }
        }
        let curves: Vec<Vec<f64>> = runs.iter().map(RunTrace::regret_curve).collect();
        let horizon = curves.first().map_or(0, Vec::len);
        let (mean_regret, std_regret) = (0..horizon)
            .map(|i| mean_std(&curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
            .unzip();
        AgentResult {
            spec,
            hybrid,
            runs,
            failures,
            mean_regret,
            std_regret,
        }
    }

    pub fn final_regrets(&self) -> Vec<f64> {
        self.runs.iter().map(RunTrace::final_regret).collect()
    }

    pub fn final_regret(&self) -> (f64, f64) {
        mean_std(&self.final_regrets())
    }

    /// Mean and std of per-run noncontextual fractions, for hybrid agents.
    pub fn noncontextual_fraction(&self) -> Option<(f64, f64)> {
        if !self.hybrid {
            return None;
        }
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(RunTrace::noncontextual_fraction)
            .collect();
        (!v.is_empty()).then(|| mean_std(&v))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub agents: Vec<AgentResult>,
    /// Not written to any output file.
    pub elapsed: Duration,
}

impl ExperimentResult {
    pub fn agent(&self, spec: &str) -> Option<&AgentResult> {
        self.agents.iter().find(|a| a.spec == spec)
    }

    pub fn failure_count(&self) -> usize {
        self.agents.iter().map(|a| a.failures.len()).sum()
    }
}

/// Loads the configured dataset and runs every agent.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let dataset = Arc::new(config.load_dataset()?);
    run_on_dataset(config, dataset)
}

/// Runs every configured agent on an already prepared dataset.
pub fn run_on_dataset(
    config: &ExperimentConfig,
    dataset: Arc<Dataset>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let specs = config
        .agents
        .iter()
        .map(|a| Ok((a.clone(), config.agent_spec(a)?)))
        .collect::<Result<Vec<_>>>()?;
    for (_, spec) in &specs {
        if let AgentSpec::Scb {
            source: NcSourceKind::FixedDefaultArm(a),
            ..
        } = spec
        {
            ArmId::checked(a.0, dataset.class_count())?;
        }
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|i| (0..config.runs).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(i, r)| run_single(&specs[i].1, &specs[i].0, config, &dataset, r))
        .collect();
    let mut outcomes = outcomes.into_iter();
    let agents: Vec<AgentResult> = specs
        .iter()
        .map(|(name, spec)| {
            let mine = outcomes.by_ref().take(config.runs).collect();
            AgentResult::from_runs(name.clone(), spec.is_hybrid(), mine)
        })
        .collect();
    if agents.iter().all(|a| a.runs.is_empty()) {
        let first = agents
            .iter()
            .flat_map(|a| a.failures.first())
            .next()
            .map(|f| f.error.clone())
            .unwrap_or_default();
        return Err(Error::RunAborted(format!(
            "every run failed; first error: {first}"
        )));
    }
    let elapsed = start.elapsed();
    log::info!("experiment finished in {:.2}s", elapsed.as_secs_f64());
    Ok(ExperimentResult {
        config: config.clone(),
        manifest: dataset.manifest(),
        agents,
        elapsed,
    })
}

/// Directory name used for an agent's files.
pub fn agent_dir_name(spec: &str) -> String {
    spec.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

pub fn run_file_name(run: usize) -> String {
    format!("run_{run:04}.csv")
}

pub fn decisions_file_name(run: usize) -> String {
    format!("run_{run:04}_decisions.csv")
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt_real(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

/// Writes all result files under `dir` and returns their paths.
///
/// Layout: `summary.json`, `dataset_manifest.json`, `comparison.csv` (when
/// more than one agent ran) and, per agent, a directory holding
/// `aggregate.csv`, one trace CSV per run and, for hybrid agents, one
/// decision-record CSV per run.
pub fn emit_results(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let manifest_path = dir.join("dataset_manifest.json");
    write_json(&manifest_path, &result.manifest)?;
    written.push(manifest_path);

    let mut summaries = Vec::new();
    for agent in &result.agents {
        let adir = dir.join(agent_dir_name(&agent.spec));
        fs::create_dir_all(&adir).map_err(|e| Error::io(&adir, e))?;
        for run in &agent.runs {
            let path = adir.join(run_file_name(run.run));
            let curve = run.regret_curve();
            write_csv(
                &path,
                &["t", "arm", "reward", "regret", "delta"],
                (0..run.rewards.len()).map(|i| {
                    vec![
                        (i + 1).to_string(),
                        run.arms[i].to_string(),
                        fmt_real(run.rewards[i]),
                        fmt_real(curve[i]),
                        opt_real(run.deltas[i]),
                    ]
                }),
            )?;
            written.push(path);
            if agent.hybrid {
                let path = adir.join(decisions_file_name(run.run));
                write_csv(
                    &path,
                    &DecisionRecord::CSV_HEADER,
                    run.records.iter().map(|r| r.csv_fields().to_vec()),
                )?;
                written.push(path);
            }
        }
        let path = adir.join("aggregate.csv");
        write_csv(
            &path,
            &["t", "mean_regret", "std_regret"],
            agent
                .mean_regret
                .iter()
                .zip(&agent.std_regret)
                .enumerate()
                .map(|(i, (m, s))| vec![(i + 1).to_string(), fmt_real(*m), fmt_real(*s)]),
        )?;
        written.push(path);

        let (fr_mean, fr_std) = agent.final_regret();
        let nc = agent.noncontextual_fraction();
        summaries.push(serde_json::json!({
            "agent": agent.spec,
            "directory": agent_dir_name(&agent.spec),
            "runs_completed": agent.runs.len(),
            "run_seeds": agent.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "final_regret_mean": fr_mean,
            "final_regret_std": fr_std,
            "noncontextual_fraction_mean": nc.map(|v| v.0),
            "noncontextual_fraction_std": nc.map(|v| v.1),
            "noncontextual_steps": agent.hybrid.then(|| agent.runs.iter()
                .map(|r| r.records.iter().filter(|d| d.provenance == Provenance::Noncontextual).count())
                .sum::<usize>()),
            "failures": agent.failures,
        }));
    }

    if result.agents.len() > 1 {
        let path = dir.join("comparison.csv");
        write_csv(
            &path,
            &["agent", "t", "mean_regret", "std_regret"],
            result.agents.iter().flat_map(|a| {
                a.mean_regret
                    .iter()
                    .zip(&a.std_regret)
                    .enumerate()
                    .map(move |(i, (m, s))| {
                        vec![
                            a.spec.clone(),
                            (i + 1).to_string(),
                            fmt_real(*m),
                            fmt_real(*s),
                        ]
                    })
            }),
        )?;
        written.push(path);
    }

    let path = dir.join("summary.json");
    write_json(
        &path,
        &serde_json::json!({
            "seed": result.config.seed,
            "config": result.config.echo(),
            "dataset": result.manifest,
            "agents": summaries,
        }),
    )?;
    written.push(path);
    Ok(written)
}
