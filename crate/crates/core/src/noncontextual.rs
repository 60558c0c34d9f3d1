//! K-armed Beta-Bernoulli bandit.
//!
//! Each arm keeps a `Beta(alpha, beta)` posterior over its success rate.
//! A success increments `alpha`, a failure increments `beta`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::agent::{argmax, Agent, Exploration, Selection, Step};
use crate::domain::{check_reward, ArmId, Context, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaArmState {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaArmState {
    fn default() -> Self {
        BetaArmState {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl BetaArmState {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let s = BetaArmState { alpha, beta };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.alpha.is_finite() && self.beta.is_finite() && self.alpha > 0.0 && self.beta > 0.0 {
            Ok(())
        } else {
            Err(Error::Corruption(format!(
                "beta arm state ({}, {}) is not finite and positive",
                self.alpha, self.beta
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// Posterior mean plus `c` posterior standard deviations.
    pub fn ucb_score(&self, c: f64) -> f64 {
        self.mean() + c * self.variance().sqrt()
    }
}

/// Conjugate update for a single binary reward.
pub fn update(state: BetaArmState, reward: f64) -> Result<BetaArmState> {
    check_reward(reward)?;
    Ok(if reward == 1.0 {
        BetaArmState {
            alpha: state.alpha + 1.0,
            ..state
        }
    } else {
        BetaArmState {
            beta: state.beta + 1.0,
            ..state
        }
    })
}

fn check_states(states: &[BetaArmState]) -> Result<()> {
    if states.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 arms, got {}",
            states.len()
        )));
    }
    states.iter().try_for_each(BetaArmState::check)
}

/// Thompson sampling: one Beta draw per arm, then argmax.
pub fn ts_scores(states: &[BetaArmState], rng: &mut RngStream) -> Result<Selection> {
    check_states(states)?;
    let scores = states
        .iter()
        .map(|s| rng.beta(s.alpha, s.beta))
        .collect::<Result<Vec<_>>>()?;
    Ok(Selection {
        arm: ArmId(argmax(&scores)),
        scores,
    })
}

pub fn ts_select(states: &[BetaArmState], rng: &mut RngStream) -> Result<ArmId> {
    ts_scores(states, rng).map(|s| s.arm)
}

pub fn ucb_scores(states: &[BetaArmState], c: f64) -> Result<Selection> {
    check_states(states)?;
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::Config(format!(
            "UCB width must be finite and >= 0, got {c}"
        )));
    }
    let scores: Vec<f64> = states.iter().map(|s| s.ucb_score(c)).collect();
    Ok(Selection {
        arm: ArmId(argmax(&scores)),
        scores,
    })
}

pub fn ucb_select(states: &[BetaArmState], c: f64) -> Result<ArmId> {
    ucb_scores(states, c).map(|s| s.arm)
}

/// Greedy on posterior means with probability `1 - epsilon`, otherwise a
/// uniform draw over all arms (the greedy arm included).
pub fn eps_greedy_scores(
    states: &[BetaArmState],
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<Selection> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!(
            "epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    check_states(states)?;
    let scores: Vec<f64> = states.iter().map(BetaArmState::mean).collect();
    let arm = if rng.uniform() < epsilon {
        rng.index(states.len())
    } else {
        argmax(&scores)
    };
    Ok(Selection {
        arm: ArmId(arm),
        scores,
    })
}

pub fn eps_greedy_select(
    states: &[BetaArmState],
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<ArmId> {
    eps_greedy_scores(states, epsilon, rng).map(|s| s.arm)
}

/// Writes `arm,alpha,beta` rows.
pub fn write_snapshot<W: Write>(states: &[BetaArmState], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e| Error::csv("<beta snapshot>", e);
    w.write_record(["arm", "alpha", "beta"]).map_err(wrap)?;
    for (i, s) in states.iter().enumerate() {
        w.write_record([
            i.to_string(),
            crate::domain::fmt_real(s.alpha),
            crate::domain::fmt_real(s.beta),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<beta snapshot>", e))
}

pub fn read_snapshot<R: Read>(reader: R) -> Result<Vec<BetaArmState>> {
    #[derive(Deserialize)]
    struct Row {
        arm: usize,
        alpha: f64,
        beta: f64,
    }
    let mut r = csv::Reader::from_reader(reader);
    let mut states = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::csv("<beta snapshot>", e))?;
        if row.arm != i {
            return Err(Error::Data(format!("snapshot row {i} has arm {}", row.arm)));
        }
        states.push(BetaArmState::new(row.alpha, row.beta)?);
    }
    check_states(&states)?;
    Ok(states)
}

/// Context-free agent over Beta-Bernoulli arms.
#[derive(Debug, Clone)]
pub struct BetaBernoulliAgent {
    name: String,
    states: Vec<BetaArmState>,
    exploration: Exploration,
    rng: RngStream,
    pending: Vec<(ArmId, f64)>,
    per_step_updates: bool,
}

impl BetaBernoulliAgent {
    pub fn new(arm_count: usize, exploration: Exploration, rng: RngStream) -> Result<Self> {
        ArmId::checked(0, arm_count)?;
        exploration.validate()?;
        Ok(BetaBernoulliAgent {
            name: format!("IndependentBernoulliArms{}Agent", exploration.short_name()),
            states: vec![BetaArmState::default(); arm_count],
            exploration,
            rng,
            pending: Vec::new(),
            per_step_updates: false,
        })
    }

    /// Apply each observation immediately instead of at batch boundaries.
    pub fn with_per_step_updates(mut self, on: bool) -> Self {
        self.per_step_updates = on;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn states(&self) -> &[BetaArmState] {
        &self.states
    }

    pub fn select_scored(&mut self) -> Result<Selection> {
        match self.exploration {
            Exploration::Thompson => ts_scores(&self.states, &mut self.rng),
            Exploration::Ucb { width } => ucb_scores(&self.states, width),
            Exploration::EpsilonGreedy { epsilon } => {
                eps_greedy_scores(&self.states, epsilon, &mut self.rng)
            }
        }
    }

    fn apply(&mut self, arm: ArmId, reward: f64) -> Result<()> {
        let state = self
            .states
            .get_mut(arm.0)
            .ok_or_else(|| Error::Config(format!("arm {arm} out of range")))?;
        *state = update(*state, reward)?;
        Ok(())
    }

    /// Buffers (or applies) a context-free reward.
    pub fn record(&mut self, arm: ArmId, reward: f64) -> Result<()> {
        check_reward(reward)?;
        if arm.0 >= self.states.len() {
            return Err(Error::Config(format!("arm {arm} out of range")));
        }
        if self.per_step_updates {
            self.apply(arm, reward)
        } else {
            self.pending.push((arm, reward));
            Ok(())
        }
    }

    pub fn flush(&mut self) -> Result<()> {
        for (arm, reward) in std::mem::take(&mut self.pending) {
            self.apply(arm, reward)?;
        }
        Ok(())
    }
}

impl Agent for BetaBernoulliAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn arm_count(&self) -> usize {
        self.states.len()
    }

    fn select(&mut self, _t: usize, _context: &Context) -> Result<Step> {
        Ok(Step {
            arm: self.select_scored()?.arm,
            record: None,
        })
    }

    fn observe(&mut self, observation: Observation) -> Result<()> {
        self.record(observation.arm, observation.reward)
    }

    fn end_batch(&mut self, _t: usize) -> Result<()> {
        self.flush()
    }

    fn posterior_snapshot(&self) -> Vec<f64> {
        self.states.iter().flat_map(|s| [s.alpha, s.beta]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(a: f64, b: f64) -> BetaArmState {
        BetaArmState::new(a, b).unwrap()
    }

    #[test]
    fn update_rule() {
        assert_eq!(update(st(1.0, 1.0), 1.0).unwrap(), st(2.0, 1.0));
        assert_eq!(update(st(1.0, 1.0), 0.0).unwrap(), st(1.0, 2.0));
        let mut s = st(1.0, 1.0);
        for r in [1.0, 1.0, 1.0, 0.0] {
            s = update(s, r).unwrap();
        }
        assert!((s.mean() - 2.0 / 3.0).abs() < 1e-15);
        assert!(update(s, 0.3).is_err());
    }

    #[test]
    fn ts_symmetric_priors_split_evenly() {
        let mut rng = RngStream::new(11);
        let states = [st(1.0, 1.0), st(1.0, 1.0)];
        let n = 10_000;
        let zeros = (0..n)
            .filter(|_| ts_select(&states, &mut rng).unwrap() == ArmId(0))
            .count();
        let f = zeros as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }

    #[test]
    fn ts_concentrated_posteriors() {
        // P(Beta(1,1000) > Beta(1000,1)) is astronomically small, so the
        // Monte Carlo oracle is simply "arm 0 every time".
        let mut rng = RngStream::new(12);
        let states = [st(1000.0, 1.0), st(1.0, 1000.0)];
        let n = 10_000;
        let zeros = (0..n)
            .filter(|_| ts_select(&states, &mut rng).unwrap() == ArmId(0))
            .count();
        assert!(zeros as f64 / n as f64 >= 0.999);
    }

    #[test]
    fn ts_is_reproducible() {
        let states = [st(2.0, 3.0), st(3.0, 2.0), st(1.0, 1.0)];
        let a: Vec<_> = {
            let mut rng = RngStream::new(99);
            (0..50)
                .map(|_| ts_select(&states, &mut rng).unwrap())
                .collect()
        };
        let b: Vec<_> = {
            let mut rng = RngStream::new(99);
            (0..50)
                .map(|_| ts_select(&states, &mut rng).unwrap())
                .collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn ts_rejects_corrupt_state() {
        let mut rng = RngStream::new(0);
        let states = [
            BetaArmState {
                alpha: f64::NAN,
                beta: 1.0,
            },
            st(1.0, 1.0),
        ];
        assert!(matches!(
            ts_select(&states, &mut rng),
            Err(Error::Corruption(_))
        ));
        assert!(ts_select(&[st(1.0, 1.0)], &mut rng).is_err());
    }

    #[test]
    fn ucb_examples() {
        let score = st(1.0, 1.0).ucb_score(1.0);
        assert!((score - (0.5 + (1.0f64 / 12.0).sqrt())).abs() < 1e-12);
        assert!((score - 0.7887).abs() < 1e-4);
        assert_eq!(
            ucb_select(&[st(9.0, 1.0), st(1.0, 9.0)], 0.0).unwrap(),
            ArmId(0)
        );
        let wide = st(1.0, 1.0).ucb_score(2.0);
        let narrow = st(50.0, 50.0).ucb_score(2.0);
        assert!((wide - 1.0774).abs() < 1e-3 && (narrow - 0.5990).abs() < 1e-3);
        assert_eq!(
            ucb_select(&[st(1.0, 1.0), st(50.0, 50.0)], 2.0).unwrap(),
            ArmId(0)
        );
        assert_eq!(
            ucb_select(&[st(3.0, 3.0), st(3.0, 3.0)], 1.0).unwrap(),
            ArmId(0)
        );
    }

    #[test]
    fn eps_greedy_limits() {
        let mut rng = RngStream::new(5);
        let states = [st(9.0, 1.0), st(1.0, 9.0)];
        for _ in 0..1000 {
            assert_eq!(eps_greedy_select(&states, 0.0, &mut rng).unwrap(), ArmId(0));
        }
        let four = [st(9.0, 1.0), st(1.0, 9.0), st(1.0, 1.0), st(2.0, 2.0)];
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            counts[eps_greedy_select(&four, 1.0, &mut rng).unwrap().0] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02, "{counts:?}");
        }
        assert!(eps_greedy_select(&states, 1.2, &mut rng).is_err());
        assert!(eps_greedy_select(&states, -0.1, &mut rng).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let states = vec![st(3.0, 1.0), st(1.0, 7.5), st(2.25, 2.0)];
        let mut buf = Vec::new();
        write_snapshot(&states, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("arm,alpha,beta\n"));
        assert_eq!(read_snapshot(buf.as_slice()).unwrap(), states);
    }

    #[test]
    fn agent_defers_updates_to_batch_boundary() {
        let mut agent =
            BetaBernoulliAgent::new(3, Exploration::Thompson, RngStream::new(1)).unwrap();
        let before = agent.posterior_snapshot();
        let obs = Observation::new(Context::zeros(1), ArmId(1), 1.0).unwrap();
        agent.observe(obs.clone()).unwrap();
        assert_eq!(agent.posterior_snapshot(), before);
        agent.end_batch(1).unwrap();
        assert_eq!(agent.states()[1], st(2.0, 1.0));

        let mut eager = BetaBernoulliAgent::new(3, Exploration::Thompson, RngStream::new(1))
            .unwrap()
            .with_per_step_updates(true);
        eager.observe(obs).unwrap();
        assert_eq!(eager.states()[1], st(2.0, 1.0));
    }

    proptest! {
        #[test]
        fn conservation(updates in prop::collection::vec((0usize..4, 0u8..2), 0..200)) {
            let mut states = [BetaArmState::default(); 4];
            for &(arm, r) in &updates {
                let before = states[arm];
                states[arm] = update(states[arm], r as f64).unwrap();
                prop_assert!(states[arm].alpha >= before.alpha && states[arm].beta >= before.beta);
            }
            let total: f64 = states.iter().map(|s| s.alpha + s.beta - 2.0).sum();
            prop_assert_eq!(total, updates.len() as f64);
        }

        #[test]
        fn ucb_argmax_is_permutation_equivariant(
            params in prop::collection::vec((1.0f64..50.0, 1.0f64..50.0), 2..6),
            rot in 0usize..6,
        ) {
            let states: Vec<BetaArmState> = params.iter().map(|&(a, b)| st(a, b)).collect();
            let k = states.len();
            let rot = rot % k;
            let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
            let permuted: Vec<BetaArmState> = perm.iter().map(|&i| states[i]).collect();
            let scores: Vec<f64> = states.iter().map(|s| s.ucb_score(1.0)).collect();
            let best = ucb_select(&states, 1.0).unwrap().0;
            let best_perm = perm[ucb_select(&permuted, 1.0).unwrap().0];
            // Ties can legitimately resolve to a different arm with the same score.
            prop_assert_eq!(scores[best], scores[best_perm]);
        }
    }
}
