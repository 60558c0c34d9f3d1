//! Regret and decision-mix statistics.

use crate::domain::{check_reward, DecisionRecord, Provenance};
use crate::error::{Error, Result};

/// `(1/n) * sum(1 - r_t)`: the fraction of incorrect assignments.
pub fn normalized_cumulative_regret(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Domain("regret of an empty reward trace".into()));
    }
    let mut misses = 0.0;
    for &r in rewards {
        check_reward(r)?;
        misses += 1.0 - r;
    }
    Ok(misses / rewards.len() as f64)
}

/// Normalized cumulative regret at every prefix length `1..=n`.
pub fn regret_curve(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Domain("regret of an empty reward trace".into()));
    }
    let mut misses = 0.0;
    rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            check_reward(r)?;
            misses += 1.0 - r;
            Ok(misses / (i + 1) as f64)
        })
        .collect()
}

/// Share of steps whose final arm came from the noncontextual candidate.
///
/// Agreement steps count toward the denominator only.
pub fn noncontextual_fraction(records: &[DecisionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain(
            "noncontextual fraction of an empty decision trace".into(),
        ));
    }
    let n = records
        .iter()
        .filter(|r| r.provenance == Provenance::Noncontextual)
        .count();
    Ok(n as f64 / records.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
