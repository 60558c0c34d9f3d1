//! Replay evaluation of policies on uniformly logged bandit data.
//!
//! Under a logging policy that picks uniformly among the candidates, the
//! events on which a target policy agrees with the logged arm form an
//! unbiased sample of that policy's own traffic. The replay estimate is the
//! mean reward over those matched events.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, Agent as _};
use crate::domain::{check_reward, fmt_real, ArmId, Context, Provenance};
use crate::error::{Error, Result};
use crate::glm::{sigmoid, GlmAgent};
use crate::rng::RngStream;
use crate::scb::{resolve, Comparator, MajorityVote};

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEvent {
    pub t: usize,
    pub context: Context,
    pub logged_arm: ArmId,
    pub reward: f64,
    /// Arms `0..candidate_count` were available when the event was logged.
    pub candidate_count: usize,
    pub groups: BTreeMap<String, String>,
}

impl LoggedEvent {
    pub fn validate(&self) -> Result<()> {
        check_reward(self.reward)?;
        if self.candidate_count == 0 || self.logged_arm.0 >= self.candidate_count {
            return Err(Error::Data(format!(
                "event {}: logged arm {} outside {} candidates",
                self.t, self.logged_arm, self.candidate_count
            )));
        }
        Ok(())
    }
}

/// What a policy may see when choosing for a logged event.
#[derive(Debug, Clone, Copy)]
pub struct PolicyQuery<'a> {
    pub context: &'a Context,
    pub candidate_count: usize,
    pub groups: &'a BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyChoice {
    pub arm: ArmId,
    /// Set by hybrid policies.
    pub provenance: Option<Provenance>,
}

impl From<ArmId> for PolicyChoice {
    fn from(arm: ArmId) -> Self {
        PolicyChoice {
            arm,
            provenance: None,
        }
    }
}

pub trait ReplayPolicy {
    fn choose(&mut self, query: &PolicyQuery<'_>) -> Result<PolicyChoice>;

    /// Called on matched events in learn-on-match mode only.
    fn learn(&mut self, _query: &PolicyQuery<'_>, _arm: ArmId, _reward: f64) -> Result<()> {
        Ok(())
    }
}

impl<F> ReplayPolicy for F
where
    F: FnMut(&PolicyQuery<'_>) -> ArmId,
{
    fn choose(&mut self, query: &PolicyQuery<'_>) -> Result<PolicyChoice> {
        Ok(self(query).into())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// Feed matched events back into the policy (learning replay).
    pub learn_on_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub matched_count: usize,
    pub total_count: usize,
    pub reward_sum: f64,
    /// `None` when no event matched.
    pub estimated_rate: Option<f64>,
    pub standard_error: Option<f64>,
    /// Share of all events on which a hybrid policy chose its noncontextual
    /// candidate; `None` for policies that do not report provenance.
    pub noncontextual_fraction: Option<f64>,
}

impl ReplayReport {
    pub fn match_fraction(&self) -> f64 {
        self.matched_count as f64 / self.total_count.max(1) as f64
    }
}

pub fn replay_evaluate<P: ReplayPolicy + ?Sized>(
    policy: &mut P,
    log: &[LoggedEvent],
) -> Result<ReplayReport> {
    replay_evaluate_with(policy, log, ReplayOptions::default())
}

pub fn replay_evaluate_with<P: ReplayPolicy + ?Sized>(
    policy: &mut P,
    log: &[LoggedEvent],
    opts: ReplayOptions,
) -> Result<ReplayReport> {
    if log.is_empty() {
        return Err(Error::Data("replay log is empty".into()));
    }
    let mut matched = 0usize;
    let mut reward_sum = 0.0;
    let mut nc = 0usize;
    let mut reported = 0usize;
    for event in log {
        event.validate()?;
        let query = PolicyQuery {
            context: &event.context,
            candidate_count: event.candidate_count,
            groups: &event.groups,
        };
        let choice = policy.choose(&query)?;
        if let Some(p) = choice.provenance {
            reported += 1;
            if p == Provenance::Noncontextual {
                nc += 1;
            }
        }
        if choice.arm == event.logged_arm {
            matched += 1;
            reward_sum += event.reward;
            if opts.learn_on_match {
                policy.learn(&query, event.logged_arm, event.reward)?;
            }
        }
    }
    let (estimated_rate, standard_error) = if matched > 0 {
        let p = reward_sum / matched as f64;
        (Some(p), Some((p * (1.0 - p) / matched as f64).sqrt()))
    } else {
        log::warn!("replay matched no events; rate undefined");
        (None, None)
    };
    Ok(ReplayReport {
        matched_count: matched,
        total_count: log.len(),
        reward_sum,
        estimated_rate,
        standard_error,
        noncontextual_fraction: (reported > 0).then(|| nc as f64 / reported as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub report: ReplayReport,
    pub noncontextual_fraction: f64,
}

/// One frozen-policy replay per threshold, in the order given.
pub fn delta_sweep<P, F>(factory: F, log: &[LoggedEvent], deltas: &[f64]) -> Result<Vec<SweepPoint>>
where
    P: ReplayPolicy,
    F: Fn(f64) -> Result<P> + Sync,
{
    if deltas.is_empty() {
        return Err(Error::Config("delta sweep needs at least one delta".into()));
    }
    deltas
        .par_iter()
        .map(|&delta| {
            let mut policy = factory(delta)?;
            let report = replay_evaluate(&mut policy, log)?;
            Ok(SweepPoint {
                delta,
                noncontextual_fraction: report.noncontextual_fraction.unwrap_or(0.0),
                report,
            })
        })
        .collect()
}

/// Always plays one arm (or the last candidate if it is unavailable).
#[derive(Debug, Clone, Copy)]
pub struct FixedArmPolicy(pub ArmId);

impl ReplayPolicy for FixedArmPolicy {
    fn choose(&mut self, q: &PolicyQuery<'_>) -> Result<PolicyChoice> {
        Ok(ArmId(self.0 .0.min(q.candidate_count - 1)).into())
    }
}

fn model_context(model: &GlmAgent, context: &Context, intercept: bool) -> Result<Context> {
    if intercept {
        let mut v = context.as_slice().to_vec();
        v.push(1.0);
        let c = Context::new(v)?;
        c.check_dim(model.dim())?;
        Ok(c)
    } else {
        context.check_dim(model.dim())?;
        Ok(context.clone())
    }
}

fn greedy_scores(model: &GlmAgent, context: &Context, limit: usize) -> Vec<f64> {
    model
        .posteriors()
        .iter()
        .take(limit)
        .map(|p| sigmoid(p.logit(context.as_slice())))
        .collect()
}

/// Frozen contextual model played greedily on posterior-mean predictions.
#[derive(Debug, Clone)]
pub struct GreedyContextualPolicy {
    pub model: GlmAgent,
    /// Append a constant `1.0` feature before scoring.
    pub intercept: bool,
}

impl ReplayPolicy for GreedyContextualPolicy {
    fn choose(&mut self, q: &PolicyQuery<'_>) -> Result<PolicyChoice> {
        let x = model_context(&self.model, q.context, self.intercept)?;
        Ok(ArmId(argmax(&greedy_scores(&self.model, &x, q.candidate_count))).into())
    }
}

/// Context-free fallback used by a frozen hybrid policy.
#[derive(Debug, Clone)]
pub enum Fallback {
    Fixed(ArmId),
    /// Majority vote over positive logged rewards, optionally per value of a
    /// group attribute.
    Majority {
        votes: MajorityVote,
        group: Option<String>,
    },
    /// Highest mean prediction of the frozen model over the log's contexts.
    MeanOverHistory(ArmId),
}

impl Fallback {
    pub fn majority_from_log(
        log: &[LoggedEvent],
        arm_count: usize,
        group: Option<String>,
    ) -> Result<Self> {
        let mut votes = MajorityVote::new(arm_count);
        for e in log {
            let g = group
                .as_ref()
                .and_then(|name| e.groups.get(name))
                .map(String::as_str);
            votes.add(g, e.logged_arm, e.reward)?;
        }
        Ok(Fallback::Majority { votes, group })
    }

    pub fn mean_from_log(model: &GlmAgent, log: &[LoggedEvent], intercept: bool) -> Result<Self> {
        let mut sums = vec![0.0; model.arm_count()];
        for e in log {
            let x = model_context(model, &e.context, intercept)?;
            for (s, p) in sums.iter_mut().zip(model.predict_all(&x)?) {
                *s += p;
            }
        }
        Ok(Fallback::MeanOverHistory(ArmId(argmax(&sums))))
    }

    fn arm(&self, q: &PolicyQuery<'_>) -> ArmId {
        match self {
            Fallback::Fixed(a) | Fallback::MeanOverHistory(a) => *a,
            Fallback::Majority { votes, group } => {
                let g = group
                    .as_ref()
                    .and_then(|name| q.groups.get(name))
                    .map(String::as_str);
                votes.winner(g)
            }
        }
    }
}

/// Frozen hybrid policy: greedy contextual candidate versus a fallback arm,
/// both scored by the contextual model.
#[derive(Debug, Clone)]
pub struct FrozenScbPolicy {
    pub model: GlmAgent,
    pub fallback: Fallback,
    pub comparator: Comparator,
    pub delta: f64,
    pub intercept: bool,
}

impl ReplayPolicy for FrozenScbPolicy {
    fn choose(&mut self, q: &PolicyQuery<'_>) -> Result<PolicyChoice> {
        let x = model_context(&self.model, q.context, self.intercept)?;
        let scores = greedy_scores(&self.model, &x, q.candidate_count);
        let c = ArmId(argmax(&scores));
        let nc = self.fallback.arm(q);
        if nc.0 >= q.candidate_count {
            return Ok(PolicyChoice {
                arm: c,
                provenance: Some(Provenance::Contextual),
            });
        }
        let rec = resolve(
            0,
            c,
            nc,
            scores[c.0],
            scores[nc.0],
            self.comparator,
            self.delta,
        );
        Ok(PolicyChoice {
            arm: rec.final_arm,
            provenance: Some(rec.provenance),
        })
    }
}

// ---------------------------------------------------------------------------
// Log files

/// Reads a log with columns `t, feature_0..feature_{d-1}, logged_arm, reward,
/// candidate_count` followed by optional group columns.
pub fn read_log<R: Read>(reader: R) -> Result<Vec<LoggedEvent>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv("<log>", e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.first().map(String::as_str) != Some("t") {
        return Err(Error::Data("log must start with a `t` column".into()));
    }
    let d = headers[1..]
        .iter()
        .take_while(|h| h.starts_with("feature_"))
        .count();
    let base = 1 + d;
    let expect = ["logged_arm", "reward", "candidate_count"];
    for (i, name) in expect.iter().enumerate() {
        if headers.get(base + i).map(String::as_str) != Some(*name) {
            return Err(Error::Data(format!(
                "log column {} must be {name}",
                base + i
            )));
        }
    }
    let group_names = &headers[base + 3..];
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv("<log>", e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("bad integer {:?} in log column {i}", field(i))))
        };
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad real {:?} in log column {i}", field(i))))
        };
        let features = (1..=d).map(real).collect::<Result<Vec<_>>>()?;
        let event = LoggedEvent {
            t: int(0)?,
            context: Context::new(features)?,
            logged_arm: ArmId(int(base)?),
            reward: real(base + 1)?,
            candidate_count: int(base + 2)?,
            groups: group_names
                .iter()
                .enumerate()
                .map(|(j, name)| (name.clone(), field(base + 3 + j).to_owned()))
                .collect(),
        };
        event.validate()?;
        events.push(event);
    }
    Ok(events)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<LoggedEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(file).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

pub fn write_log<W: Write>(events: &[LoggedEvent], writer: W) -> Result<()> {
    let d = events.first().map_or(0, |e| e.context.dim());
    let group_names: Vec<String> = events
        .first()
        .map(|e| e.groups.keys().cloned().collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e| Error::csv("<log>", e);
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|j| format!("feature_{j}")));
    header.extend(["logged_arm", "reward", "candidate_count"].map(String::from));
    header.extend(group_names.iter().cloned());
    w.write_record(&header).map_err(wrap)?;
    for e in events {
        let mut row = vec![e.t.to_string()];
        row.extend(e.context.as_slice().iter().map(|&v| fmt_real(v)));
        row.push(e.logged_arm.to_string());
        row.push((e.reward as u8).to_string());
        row.push(e.candidate_count.to_string());
        for name in &group_names {
            row.push(e.groups.get(name).cloned().unwrap_or_default());
        }
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<log>", e))
}

// ---------------------------------------------------------------------------
// Synthetic logs

/// Generating reward model of a synthetic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardModel {
    /// Context-independent Bernoulli mean per arm.
    ContextFree { means: Vec<f64> },
    /// `P(r = 1 | x, a, g) = s(bias[a] + weights[a] . x + group_offsets[g][a])`.
    Logistic {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        #[serde(default)]
        group_offsets: Vec<Vec<f64>>,
    },
}

impl RewardModel {
    pub fn arm_count(&self) -> usize {
        match self {
            RewardModel::ContextFree { means } => means.len(),
            RewardModel::Logistic { bias, .. } => bias.len(),
        }
    }

    /// True success probability of `arm` for a context (and group index).
    pub fn probability(&self, context: &Context, arm: ArmId, group: Option<usize>) -> f64 {
        match self {
            RewardModel::ContextFree { means } => means[arm.0],
            RewardModel::Logistic {
                weights,
                bias,
                group_offsets,
            } => {
                let z: f64 = bias[arm.0]
                    + weights[arm.0]
                        .iter()
                        .zip(context.as_slice())
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
                    + group
                        .and_then(|g| group_offsets.get(g))
                        .map_or(0.0, |o| o[arm.0]);
                sigmoid(z)
            }
        }
    }

    /// Random logistic model with `N(0, scale^2)` weights and biases.
    pub fn random_logistic(
        arms: usize,
        dim: usize,
        groups: usize,
        scale: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut draw = |n: usize| {
            (0..n)
                .map(|_| scale * rng.standard_normal())
                .collect::<Vec<_>>()
        };
        let weights = (0..arms).map(|_| draw(dim)).collect();
        let bias = draw(arms);
        let group_offsets = (0..groups).map(|_| draw(arms)).collect();
        RewardModel::Logistic {
            weights,
            bias,
            group_offsets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogSpec {
    pub events: usize,
    pub dim: usize,
    /// Number of values of the `group` attribute; 0 omits the column.
    pub groups: usize,
    /// Smallest candidate set size; each event draws uniformly in `[min, K]`.
    pub min_candidates: usize,
    pub seed: u64,
    pub model: RewardModel,
}

/// Ground truth written next to a synthetic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogManifest {
    pub spec: SyntheticLogSpec,
    /// Marginal success rate of each arm over the generated contexts.
    pub arm_rates: Vec<f64>,
    pub logged_mean_reward: f64,
}

/// Draws a uniformly logged synthetic log.
///
/// Contexts are standard normal; the logged arm is uniform over the event's
/// candidates; the group index (when enabled) is uniform.
pub fn generate_log(spec: &SyntheticLogSpec) -> Result<(Vec<LoggedEvent>, LogManifest)> {
    let k = spec.model.arm_count();
    ArmId::checked(0, k)?;
    if spec.min_candidates == 0 || spec.min_candidates > k {
        return Err(Error::Config(format!(
            "min candidates must lie in 1..={k}, got {}",
            spec.min_candidates
        )));
    }
    if let RewardModel::Logistic { weights, .. } = &spec.model {
        if weights.iter().any(|w| w.len() != spec.dim) {
            return Err(Error::Config("logistic weights do not match dim".into()));
        }
    }
    if let RewardModel::ContextFree { means } = &spec.model {
        if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("arm means must lie in [0, 1]".into()));
        }
    }
    let mut rng = RngStream::new(spec.seed);
    let mut events = Vec::with_capacity(spec.events);
    let mut arm_rates = vec![0.0; k];
    let mut reward_sum = 0.0;
    for t in 1..=spec.events {
        let context = Context::new((0..spec.dim).map(|_| rng.standard_normal()).collect())?;
        let group = (spec.groups > 0).then(|| rng.index(spec.groups));
        let candidate_count = spec.min_candidates + rng.index(k - spec.min_candidates + 1);
        let arm = ArmId(rng.index(candidate_count));
        for (a, rate) in arm_rates.iter_mut().enumerate() {
            *rate += spec.model.probability(&context, ArmId(a), group);
        }
        let p = spec.model.probability(&context, arm, group);
        let reward = if rng.uniform() < p { 1.0 } else { 0.0 };
        reward_sum += reward;
        let groups = group
            .map(|g| BTreeMap::from([("group".to_string(), format!("g{g}"))]))
            .unwrap_or_default();
        events.push(LoggedEvent {
            t,
            context,
            logged_arm: arm,
            reward,
            candidate_count,
            groups,
        });
    }
    let n = spec.events.max(1) as f64;
    arm_rates.iter_mut().for_each(|r| *r /= n);
    let manifest = LogManifest {
        spec: spec.clone(),
        arm_rates,
        logged_mean_reward: reward_sum / n,
    };
    Ok((events, manifest))
}

/// Parses `g<index>` group labels written by [`generate_log`].
pub fn group_index(event: &LoggedEvent) -> Option<usize> {
    event.groups.get("group")?.strip_prefix('g')?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Exploration;
    use crate::glm::GaussianPosterior;
    use nalgebra::{DMatrix, DVector};

    fn ev(t: usize, arm: usize, reward: f64, k: usize) -> LoggedEvent {
        LoggedEvent {
            t,
            context: Context::new(vec![1.0]).unwrap(),
            logged_arm: ArmId(arm),
            reward,
            candidate_count: k,
            groups: BTreeMap::new(),
        }
    }

    #[test]
    fn hand_counted_example() {
        let log = vec![
            ev(1, 0, 1.0, 2),
            ev(2, 1, 0.0, 2),
            ev(3, 0, 0.0, 2),
            ev(4, 1, 1.0, 2),
        ];
        let rep = replay_evaluate(&mut FixedArmPolicy(ArmId(0)), &log).unwrap();
        assert_eq!(rep.matched_count, 2);
        assert_eq!(rep.total_count, 4);
        assert_eq!(rep.estimated_rate, Some(0.5));
        assert!((rep.standard_error.unwrap() - (0.25f64 / 2.0).sqrt()).abs() < 1e-15);
        assert_eq!(rep.noncontextual_fraction, None);
    }

    #[test]
    fn full_match_recovers_logged_mean() {
        let log = vec![
            ev(1, 0, 1.0, 3),
            ev(2, 2, 0.0, 3),
            ev(3, 1, 1.0, 3),
            ev(4, 1, 1.0, 3),
        ];
        let arms: Vec<ArmId> = log.iter().map(|e| e.logged_arm).collect();
        let mut i = 0;
        let mut replayer = |_: &PolicyQuery<'_>| {
            i += 1;
            arms[i - 1]
        };
        let rep = replay_evaluate(&mut replayer, &log).unwrap();
        assert_eq!(rep.matched_count, 4);
        assert_eq!(rep.estimated_rate, Some(0.75));
    }

    #[test]
    fn zero_matches_is_flagged_not_fatal() {
        let log = vec![ev(1, 0, 1.0, 2), ev(2, 0, 0.0, 2)];
        let rep = replay_evaluate(&mut FixedArmPolicy(ArmId(1)), &log).unwrap();
        assert_eq!(rep.matched_count, 0);
        assert_eq!(rep.estimated_rate, None);
        assert!(replay_evaluate(&mut FixedArmPolicy(ArmId(1)), &[]).is_err());
    }

    #[test]
    fn learn_on_match_feeds_back() {
        struct Counter(usize);
        impl ReplayPolicy for Counter {
            fn choose(&mut self, _: &PolicyQuery<'_>) -> Result<PolicyChoice> {
                Ok(ArmId(0).into())
            }
            fn learn(&mut self, _: &PolicyQuery<'_>, _: ArmId, _: f64) -> Result<()> {
                self.0 += 1;
                Ok(())
            }
        }
        let log = vec![ev(1, 0, 1.0, 2), ev(2, 1, 0.0, 2), ev(3, 0, 0.0, 2)];
        let mut frozen = Counter(0);
        replay_evaluate(&mut frozen, &log).unwrap();
        assert_eq!(frozen.0, 0);
        let mut learner = Counter(0);
        replay_evaluate_with(
            &mut learner,
            &log,
            ReplayOptions {
                learn_on_match: true,
            },
        )
        .unwrap();
        assert_eq!(learner.0, 2);
    }

    #[test]
    fn candidate_sets_restrict_choices() {
        let mut e = ev(1, 0, 1.0, 1);
        e.candidate_count = 1;
        let rep = replay_evaluate(&mut FixedArmPolicy(ArmId(3)), &[e]).unwrap();
        assert_eq!(rep.matched_count, 1);
        let bad = ev(1, 2, 1.0, 2);
        assert!(replay_evaluate(&mut FixedArmPolicy(ArmId(0)), &[bad]).is_err());
    }

    fn model(weights: &[f64]) -> GlmAgent {
        let posts = weights
            .iter()
            .map(|&w| {
                GaussianPosterior::from_parts(
                    DVector::from_vec(vec![w]),
                    DMatrix::identity(1, 1),
                    1.0,
                )
                .unwrap()
            })
            .collect();
        GlmAgent::new(
            weights.len(),
            1,
            1.0,
            Exploration::Thompson,
            RngStream::new(0),
        )
        .unwrap()
        .with_posteriors(posts)
        .unwrap()
    }

    #[test]
    fn sweep_endpoints_reproduce_constituents() {
        let spec = SyntheticLogSpec {
            events: 3000,
            dim: 1,
            groups: 0,
            min_candidates: 3,
            seed: 5,
            model: RewardModel::Logistic {
                weights: vec![vec![2.0], vec![-2.0], vec![0.0]],
                bias: vec![0.0, 0.0, 0.5],
                group_offsets: vec![],
            },
        };
        let (log, _) = generate_log(&spec).unwrap();
        let m = model(&[2.0, -2.0, 0.3]);
        let factory = |delta: f64| -> Result<FrozenScbPolicy> {
            Ok(FrozenScbPolicy {
                model: m.clone(),
                fallback: Fallback::Fixed(ArmId(2)),
                comparator: Comparator::Ratio,
                delta,
                intercept: false,
            })
        };
        let sweep = delta_sweep(factory, &log, &[1.0, 1.2, 1.5, 2.0, 5.0, 1e9]).unwrap();
        let ctx_rep = replay_evaluate(
            &mut GreedyContextualPolicy {
                model: m.clone(),
                intercept: false,
            },
            &log,
        )
        .unwrap();
        let fb_rep = replay_evaluate(&mut FixedArmPolicy(ArmId(2)), &log).unwrap();
        assert_eq!(sweep[0].report.matched_count, ctx_rep.matched_count);
        assert_eq!(sweep[0].report.estimated_rate, ctx_rep.estimated_rate);
        let last = &sweep[sweep.len() - 1];
        assert_eq!(last.report.matched_count, fb_rep.matched_count);
        assert_eq!(last.report.estimated_rate, fb_rep.estimated_rate);
        for w in sweep.windows(2) {
            assert!(w[1].noncontextual_fraction >= w[0].noncontextual_fraction);
        }
        assert!(delta_sweep(factory, &log, &[]).is_err());
    }

    #[test]
    fn log_round_trip_with_groups() {
        let spec = SyntheticLogSpec {
            events: 50,
            dim: 2,
            groups: 3,
            min_candidates: 2,
            seed: 1,
            model: RewardModel::random_logistic(4, 2, 3, 1.0, &mut RngStream::new(2)),
        };
        let (log, manifest) = generate_log(&spec).unwrap();
        assert_eq!(manifest.arm_rates.len(), 4);
        let mut buf = Vec::new();
        write_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,feature_0,feature_1,logged_arm,reward,candidate_count,group\n"));
        let back = read_log(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        assert!(back
            .iter()
            .all(|e| e.candidate_count >= 2 && group_index(e).unwrap() < 3));
    }

    #[test]
    fn malformed_logs_are_rejected() {
        assert!(read_log("x,feature_0\n".as_bytes()).is_err());
        assert!(read_log("t,feature_0,reward,logged_arm,candidate_count\n".as_bytes()).is_err());
        let bad_arm = "t,feature_0,logged_arm,reward,candidate_count\n1,0.5,3,1,2\n";
        assert!(read_log(bad_arm.as_bytes()).is_err());
        let bad_reward = "t,feature_0,logged_arm,reward,candidate_count\n1,0.5,0,2,2\n";
        assert!(read_log(bad_reward.as_bytes()).is_err());
    }

    #[test]
    fn majority_fallback_uses_group_attribute() {
        let mk = |arm: usize, r: f64, g: &str| LoggedEvent {
            groups: BTreeMap::from([("country".to_string(), g.to_string())]),
            ..ev(1, arm, r, 2)
        };
        let log = vec![
            mk(0, 1.0, "a"),
            mk(0, 1.0, "a"),
            mk(1, 1.0, "b"),
            mk(1, 1.0, "b"),
            mk(1, 1.0, "b"),
        ];
        let fb = Fallback::majority_from_log(&log, 2, Some("country".into())).unwrap();
        let groups_a = BTreeMap::from([("country".to_string(), "a".to_string())]);
        let q = PolicyQuery {
            context: &log[0].context,
            candidate_count: 2,
            groups: &groups_a,
        };
        assert_eq!(fb.arm(&q), ArmId(0));
        let global = Fallback::majority_from_log(&log, 2, None).unwrap();
        assert_eq!(global.arm(&q), ArmId(1));
    }
}
