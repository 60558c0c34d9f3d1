//! The selectively contextual layer.
//!
//! Each step asks a contextual agent and a noncontextual source for a
//! candidate arm. When they differ, both arms are scored with the contextual
//! model and the contextual arm is kept only if its score beats the
//! noncontextual arm's by more than the threshold `delta`, measured either as
//! a ratio or as a relative difference. `delta` can shrink by a constant
//! factor at scheduled timesteps.

use std::collections::{BTreeMap, VecDeque};

use crate::agent::{argmax, Agent, Selection, Step};
use crate::domain::{fmt_real, ArmId, Context, DecisionRecord, Observation, Provenance};
use crate::error::{Error, Result};
use crate::glm::GlmAgent;
use crate::noncontextual::BetaBernoulliAgent;

/// Floor applied to the noncontextual score before dividing by it.
pub const SCORE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Ratio,
    RelativeDifference,
}

impl Comparator {
    pub fn compare(self, r_c: f64, r_nc: f64) -> f64 {
        match self {
            Comparator::Ratio => compare_ratio(r_c, r_nc),
            Comparator::RelativeDifference => compare_reldiff(r_c, r_nc),
        }
    }

    /// Lowest threshold reachable through annealing; also the threshold at
    /// which any strict improvement selects the contextual arm.
    pub fn floor(self) -> f64 {
        match self {
            Comparator::Ratio => 1.0,
            Comparator::RelativeDifference => 0.0,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Comparator::Ratio => "Ratio",
            Comparator::RelativeDifference => "Diff",
        }
    }
}

impl std::str::FromStr for Comparator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ratio" => Ok(Comparator::Ratio),
            "diff" | "reldiff" | "relative-difference" | "relative_difference" => {
                Ok(Comparator::RelativeDifference)
            }
            other => Err(Error::Config(format!("unknown comparator {other:?}"))),
        }
    }
}

pub fn compare_ratio(r_c: f64, r_nc: f64) -> f64 {
    r_c / r_nc.max(SCORE_FLOOR)
}

pub fn compare_reldiff(r_c: f64, r_nc: f64) -> f64 {
    let d = r_nc.max(SCORE_FLOOR);
    (r_c - d) / d
}

/// Where the noncontextual candidate comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NcSourceKind {
    /// A Beta-Bernoulli agent using the same exploration as the contextual agent.
    BetaBernoulliAgent,
    /// Arm with the highest mean contextual prediction over recent contexts.
    MeanOverHistory,
    FixedDefaultArm(ArmId),
    /// Arm with the most positive rewards, optionally within the group given
    /// by the value of one context feature.
    GroupMajorityVote {
        group_feature: Option<usize>,
    },
}

impl std::str::FromStr for NcSourceKind {
    type Err = Error;

    /// `beta`, `mean`, `default:<arm>`, `majority`, `majority:<feature>`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let parse_idx = |a: &str| {
            a.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad index in nc source {s:?}")))
        };
        match (head.to_ascii_lowercase().as_str(), arg) {
            ("beta" | "beta-bernoulli", None) => Ok(NcSourceKind::BetaBernoulliAgent),
            ("mean" | "mean-over-history", None) => Ok(NcSourceKind::MeanOverHistory),
            ("default" | "fixed", Some(a)) => {
                Ok(NcSourceKind::FixedDefaultArm(ArmId(parse_idx(a)?)))
            }
            ("majority", None) => Ok(NcSourceKind::GroupMajorityVote {
                group_feature: None,
            }),
            ("majority", Some(a)) => Ok(NcSourceKind::GroupMajorityVote {
                group_feature: Some(parse_idx(a)?),
            }),
            _ => Err(Error::Config(format!("unknown nc source {s:?}"))),
        }
    }
}

impl std::fmt::Display for NcSourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NcSourceKind::BetaBernoulliAgent => f.write_str("beta"),
            NcSourceKind::MeanOverHistory => f.write_str("mean"),
            NcSourceKind::FixedDefaultArm(a) => write!(f, "default:{a}"),
            NcSourceKind::GroupMajorityVote {
                group_feature: None,
            } => f.write_str("majority"),
            NcSourceKind::GroupMajorityVote {
                group_feature: Some(j),
            } => write!(f, "majority:{j}"),
        }
    }
}

/// Which scores feed the comparator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scoring {
    /// Both arms scored with the values the contextual agent ranked this step.
    #[default]
    ContextualSelection,
    /// Both arms scored with the contextual posterior-mean prediction.
    ContextualMean,
    /// Contextual arm scored by the contextual agent, noncontextual arm by the
    /// noncontextual source's own estimate where it has one.
    PerPolicy,
}

impl std::fmt::Display for Scoring {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scoring::ContextualSelection => "selection",
            Scoring::ContextualMean => "mean",
            Scoring::PerPolicy => "per-policy",
        })
    }
}

impl std::str::FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "selection" => Ok(Scoring::ContextualSelection),
            "mean" => Ok(Scoring::ContextualMean),
            "per-policy" => Ok(Scoring::PerPolicy),
            other => Err(Error::Config(format!("unknown scoring {other:?}"))),
        }
    }
}

pub const DEFAULT_HISTORY_CAPACITY: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ScbConfig {
    pub delta: f64,
    pub comparator: Comparator,
    pub anneal_rate: f64,
    pub anneal_epochs: Vec<usize>,
    pub nc_source: NcSourceKind,
    pub scoring: Scoring,
    pub history_capacity: usize,
}

impl ScbConfig {
    pub fn new(delta: f64, comparator: Comparator, nc_source: NcSourceKind) -> Self {
        ScbConfig {
            delta,
            comparator,
            anneal_rate: 1.0,
            anneal_epochs: Vec::new(),
            nc_source,
            scoring: Scoring::default(),
            history_capacity: DEFAULT_HISTORY_CAPACITY,
        }
    }

    pub fn with_annealing(mut self, rate: f64, epochs: Vec<usize>) -> Self {
        self.anneal_rate = rate;
        self.anneal_epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::Config(format!(
                "delta must be finite and nonnegative, got {}",
                self.delta
            )));
        }
        if !(self.anneal_rate > 0.0 && self.anneal_rate <= 1.0) {
            return Err(Error::Config(format!(
                "anneal rate must lie in (0, 1], got {}",
                self.anneal_rate
            )));
        }
        if self.anneal_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "anneal epochs must be strictly increasing".into(),
            ));
        }
        if self.history_capacity == 0 {
            return Err(Error::Config("history capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Threshold after timestep `t`'s annealing check.
pub fn anneal(delta: f64, config: &ScbConfig, t: usize) -> f64 {
    if config.anneal_epochs.binary_search(&t).is_err() {
        return delta;
    }
    let floor = config.comparator.floor().min(delta);
    (delta * config.anneal_rate).max(floor)
}

/// Turns two candidates and their scores into a decision.
pub fn resolve(
    t: usize,
    contextual_arm: ArmId,
    noncontextual_arm: ArmId,
    r_c: f64,
    r_nc: f64,
    comparator: Comparator,
    delta: f64,
) -> DecisionRecord {
    if contextual_arm == noncontextual_arm {
        return DecisionRecord::agreement(t, contextual_arm, r_c);
    }
    let contextual_wins = comparator.compare(r_c, r_nc) > delta;
    DecisionRecord {
        t,
        contextual_arm,
        noncontextual_arm,
        pred_contextual: r_c,
        pred_noncontextual: r_nc,
        final_arm: if contextual_wins {
            contextual_arm
        } else {
            noncontextual_arm
        },
        provenance: if contextual_wins {
            Provenance::Contextual
        } else {
            Provenance::Noncontextual
        },
    }
}

/// FIFO buffer of recent contexts.
#[derive(Debug, Clone)]
pub struct ContextHistory {
    items: VecDeque<Context>,
    capacity: usize,
}

impl ContextHistory {
    pub fn new(capacity: usize) -> Self {
        ContextHistory {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, context: Context) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(context);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Context> {
        self.items.iter()
    }
}

/// Mean predicted reward per arm over the history.
pub fn mean_predictions(agent: &GlmAgent, history: &ContextHistory) -> Result<Vec<f64>> {
    let k = agent.arm_count();
    let mut sums = vec![0.0; k];
    for x in history.iter() {
        for (s, p) in sums.iter_mut().zip(agent.predict_all(x)?) {
            *s += p;
        }
    }
    let n = history.len().max(1) as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Arm with the highest average prediction across the history.
pub fn mean_noncontextual_winner(agent: &GlmAgent, history: &ContextHistory) -> Result<ArmId> {
    if history.is_empty() {
        log::warn!("mean noncontextual winner requested with an empty history; using arm 0");
        return Ok(ArmId(0));
    }
    Ok(ArmId(argmax(&mean_predictions(agent, history)?)))
}

pub fn fixed_default_winner(arm: ArmId, arm_count: usize) -> Result<ArmId> {
    ArmId::checked(arm.0, arm_count)
}

/// Positive-reward and play counts per arm, globally and per group.
#[derive(Debug, Clone, Default)]
pub struct MajorityVote {
    arm_count: usize,
    global: Tally,
    groups: BTreeMap<String, Tally>,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    wins: Vec<u64>,
    plays: Vec<u64>,
}

impl Tally {
    fn new(k: usize) -> Self {
        Tally {
            wins: vec![0; k],
            plays: vec![0; k],
        }
    }

    fn add(&mut self, arm: usize, reward: f64) {
        self.plays[arm] += 1;
        if reward > 0.0 {
            self.wins[arm] += 1;
        }
    }

    fn winner(&self) -> Option<ArmId> {
        let best = |v: &[u64]| {
            let mut b = 0;
            for (i, &c) in v.iter().enumerate() {
                if c > v[b] {
                    b = i;
                }
            }
            b
        };
        if self.wins.iter().any(|&w| w > 0) {
            Some(ArmId(best(&self.wins)))
        } else if self.plays.iter().any(|&p| p > 0) {
            Some(ArmId(best(&self.plays)))
        } else {
            None
        }
    }
}

impl MajorityVote {
    pub fn new(arm_count: usize) -> Self {
        MajorityVote {
            arm_count,
            global: Tally::new(arm_count),
            groups: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, group: Option<&str>, arm: ArmId, reward: f64) -> Result<()> {
        if arm.0 >= self.arm_count {
            return Err(Error::Config(format!("arm {arm} out of range")));
        }
        self.global.add(arm.0, reward);
        if let Some(g) = group {
            let k = self.arm_count;
            self.groups
                .entry(g.to_owned())
                .or_insert_with(|| Tally::new(k))
                .add(arm.0, reward);
        }
        Ok(())
    }

    /// Group winner when the group has been seen, else the global winner.
    /// With no positive rewards, falls back to the most played arm, then arm 0.
    pub fn winner(&self, group: Option<&str>) -> ArmId {
        group
            .and_then(|g| self.groups.get(g))
            .and_then(Tally::winner)
            .or_else(|| self.global.winner())
            .unwrap_or(ArmId(0))
    }
}

/// Majority-vote winner over a reward history of `(group, arm, reward)`.
pub fn group_majority_winner(
    history: &[(Option<String>, ArmId, f64)],
    arm_count: usize,
    group: Option<&str>,
) -> Result<ArmId> {
    let mut votes = MajorityVote::new(arm_count);
    for (g, arm, r) in history {
        votes.add(g.as_deref(), *arm, *r)?;
    }
    Ok(votes.winner(group))
}

/// Group key for a context under a feature-valued grouping.
pub fn feature_group_key(context: &Context, feature: usize) -> Result<String> {
    context
        .as_slice()
        .get(feature)
        .map(|v| fmt_real(*v))
        .ok_or_else(|| Error::Config(format!("group feature {feature} out of range")))
}

/// Live noncontextual source inside an online hybrid agent.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum NoncontextualSource {
    BetaBernoulli(BetaBernoulliAgent),
    MeanOverHistory {
        history: ContextHistory,
        cached: Option<(ArmId, Vec<f64>)>,
    },
    FixedDefault(ArmId),
    GroupMajority {
        votes: MajorityVote,
        group_feature: Option<usize>,
        pending: Vec<(Option<String>, ArmId, f64)>,
    },
}

impl NoncontextualSource {
    /// Candidate arm and, where the source has a reward model, its estimate
    /// for that arm.
    pub fn candidate(
        &mut self,
        contextual: &GlmAgent,
        context: &Context,
    ) -> Result<(ArmId, Option<f64>)> {
        match self {
            NoncontextualSource::BetaBernoulli(agent) => {
                let sel = agent.select_scored()?;
                Ok((sel.arm, Some(agent.states()[sel.arm.0].mean())))
            }
            NoncontextualSource::MeanOverHistory { history, cached } => {
                history.push(context.clone());
                if cached.is_none() {
                    let means = mean_predictions(contextual, history)?;
                    *cached = Some((ArmId(argmax(&means)), means));
                }
                let (arm, means) = cached.as_ref().expect("cache filled above");
                Ok((*arm, Some(means[arm.0])))
            }
            NoncontextualSource::FixedDefault(arm) => Ok((*arm, None)),
            NoncontextualSource::GroupMajority {
                votes,
                group_feature,
                ..
            } => {
                let key = group_feature
                    .map(|f| feature_group_key(context, f))
                    .transpose()?;
                Ok((votes.winner(key.as_deref()), None))
            }
        }
    }

    fn observe(&mut self, observation: &Observation) -> Result<()> {
        match self {
            NoncontextualSource::BetaBernoulli(agent) => {
                agent.record(observation.arm, observation.reward)
            }
            NoncontextualSource::GroupMajority {
                group_feature,
                pending,
                ..
            } => {
                let key = group_feature
                    .map(|f| feature_group_key(&observation.context, f))
                    .transpose()?;
                pending.push((key, observation.arm, observation.reward));
                Ok(())
            }
            NoncontextualSource::MeanOverHistory { .. } | NoncontextualSource::FixedDefault(_) => {
                Ok(())
            }
        }
    }

    fn end_batch(&mut self) -> Result<()> {
        match self {
            NoncontextualSource::BetaBernoulli(agent) => agent.flush(),
            NoncontextualSource::MeanOverHistory { cached, .. } => {
                *cached = None;
                Ok(())
            }
            NoncontextualSource::GroupMajority { votes, pending, .. } => {
                for (g, arm, r) in pending.drain(..) {
                    votes.add(g.as_deref(), arm, r)?;
                }
                Ok(())
            }
            NoncontextualSource::FixedDefault(_) => Ok(()),
        }
    }

    fn snapshot(&self) -> Vec<f64> {
        match self {
            NoncontextualSource::BetaBernoulli(agent) => agent.posterior_snapshot(),
            NoncontextualSource::GroupMajority { votes, .. } => votes
                .global
                .wins
                .iter()
                .chain(&votes.global.plays)
                .map(|&c| c as f64)
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// One hybrid decision: gather both candidates, score, compare against `delta`.
pub fn scb_select(
    contextual: &mut GlmAgent,
    source: &mut NoncontextualSource,
    context: &Context,
    config: &ScbConfig,
    delta: f64,
    t: usize,
) -> Result<DecisionRecord> {
    context.check_dim(contextual.dim())?;
    let sel: Selection = contextual.select_scored(context)?;
    let (nc_arm, nc_estimate) = source.candidate(contextual, context)?;
    if nc_arm.0 >= contextual.arm_count() {
        return Err(Error::Config(format!(
            "noncontextual arm {nc_arm} out of range for {} arms",
            contextual.arm_count()
        )));
    }
    let (r_c, r_nc) = match config.scoring {
        Scoring::ContextualSelection => (sel.scores[sel.arm.0], sel.scores[nc_arm.0]),
        Scoring::ContextualMean => (
            contextual.predict(context, sel.arm)?,
            contextual.predict(context, nc_arm)?,
        ),
        Scoring::PerPolicy => (
            sel.scores[sel.arm.0],
            nc_estimate.unwrap_or(sel.scores[nc_arm.0]),
        ),
    };
    Ok(resolve(
        t,
        sel.arm,
        nc_arm,
        r_c,
        r_nc,
        config.comparator,
        delta,
    ))
}

/// Online hybrid agent.
#[derive(Debug, Clone)]
pub struct ScbAgent {
    name: String,
    contextual: GlmAgent,
    source: NoncontextualSource,
    config: ScbConfig,
    delta: f64,
}

impl ScbAgent {
    pub fn new(
        name: impl Into<String>,
        contextual: GlmAgent,
        source: NoncontextualSource,
        config: ScbConfig,
    ) -> Result<Self> {
        config.validate()?;
        if let NoncontextualSource::FixedDefault(arm) = source {
            fixed_default_winner(arm, contextual.arm_count())?;
        }
        if let NoncontextualSource::BetaBernoulli(ref b) = source {
            if b.arm_count() != contextual.arm_count() {
                return Err(Error::Config(
                    "constituent agents disagree on arm count".into(),
                ));
            }
        }
        Ok(ScbAgent {
            name: name.into(),
            delta: config.delta,
            contextual,
            source,
            config,
        })
    }

    /// Current threshold, after any annealing already applied.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn config(&self) -> &ScbConfig {
        &self.config
    }

    pub fn contextual(&self) -> &GlmAgent {
        &self.contextual
    }

    pub fn source(&self) -> &NoncontextualSource {
        &self.source
    }
}

impl Agent for ScbAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn arm_count(&self) -> usize {
        self.contextual.arm_count()
    }

    fn select(&mut self, t: usize, context: &Context) -> Result<Step> {
        self.delta = anneal(self.delta, &self.config, t);
        let record = scb_select(
            &mut self.contextual,
            &mut self.source,
            context,
            &self.config,
            self.delta,
            t,
        )?;
        Ok(Step {
            arm: record.final_arm,
            record: Some(record),
        })
    }

    fn observe(&mut self, observation: Observation) -> Result<()> {
        self.source.observe(&observation)?;
        self.contextual.observe(observation)
    }

    fn end_batch(&mut self, t: usize) -> Result<()> {
        self.contextual.end_batch(t)?;
        self.source.end_batch()
    }

    fn posterior_snapshot(&self) -> Vec<f64> {
        let mut v = self.contextual.posterior_snapshot();
        v.extend(self.source.snapshot());
        v
    }

    fn threshold(&self) -> Option<f64> {
        Some(self.delta)
    }
}
