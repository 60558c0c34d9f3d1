//! Shared domain types.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense feature vector observed before a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context(Vec<f64>);

impl Context {
    /// Builds a context, rejecting non-finite entries.
    pub fn new(features: Vec<f64>) -> Result<Self> {
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "context feature {i} is not finite ({})",
                features[i]
            )));
        }
        Ok(Context(features))
    }

    pub fn zeros(dim: usize) -> Self {
        Context(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Errors unless the context has exactly `dim` features.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.0.len() != dim {
            return Err(Error::Config(format!(
                "context has dimension {}, expected {dim}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Context {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Context::new(v)
    }
}

/// Zero-based arm index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(pub usize);

impl ArmId {
    /// Validates `index < arm_count` with `arm_count >= 2`.
    pub fn checked(index: usize, arm_count: usize) -> Result<Self> {
        if arm_count < 2 {
            return Err(Error::Config(format!(
                "need at least 2 arms, got {arm_count}"
            )));
        }
        if index >= arm_count {
            return Err(Error::Config(format!(
                "arm {index} out of range for {arm_count} arms"
            )));
        }
        Ok(ArmId(index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binary reward check shared by every update path.
pub fn check_reward(reward: f64) -> Result<()> {
    if reward == 0.0 || reward == 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "reward must be 0 or 1, got {reward}"
        )))
    }
}

/// One observed interaction `(x_t, a_t, r_t(a_t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub context: Context,
    pub arm: ArmId,
    pub reward: f64,
}

impl Observation {
    pub fn new(context: Context, arm: ArmId, reward: f64) -> Result<Self> {
        check_reward(reward)?;
        Ok(Observation {
            context,
            arm,
            reward,
        })
    }
}

/// Which branch of the hybrid policy produced the final arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Contextual,
    Noncontextual,
    Agreement,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Contextual => "contextual",
            Provenance::Noncontextual => "noncontextual",
            Provenance::Agreement => "agreement",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contextual" => Ok(Provenance::Contextual),
            "noncontextual" => Ok(Provenance::Noncontextual),
            "agreement" => Ok(Provenance::Agreement),
            other => Err(Error::Data(format!("unknown provenance {other:?}"))),
        }
    }
}

/// Trace of one hybrid decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: usize,
    pub contextual_arm: ArmId,
    pub noncontextual_arm: ArmId,
    pub pred_contextual: f64,
    pub pred_noncontextual: f64,
    pub final_arm: ArmId,
    pub provenance: Provenance,
}

impl DecisionRecord {
    /// Record for a step where both candidates coincide.
    pub fn agreement(t: usize, arm: ArmId, pred: f64) -> Self {
        DecisionRecord {
            t,
            contextual_arm: arm,
            noncontextual_arm: arm,
            pred_contextual: pred,
            pred_noncontextual: pred,
            final_arm: arm,
            provenance: Provenance::Agreement,
        }
    }

    /// Checks the provenance/final-arm consistency rules.
    pub fn validate(&self) -> Result<()> {
        let agree = self.contextual_arm == self.noncontextual_arm;
        let ok = match self.provenance {
            Provenance::Agreement => agree && self.final_arm == self.contextual_arm,
            Provenance::Contextual => !agree && self.final_arm == self.contextual_arm,
            Provenance::Noncontextual => !agree && self.final_arm == self.noncontextual_arm,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Corruption(format!(
                "inconsistent decision record at t={}: {:?}",
                self.t, self
            )))
        }
    }

    pub const CSV_HEADER: [&'static str; 7] = [
        "t",
        "contextual_arm",
        "noncontextual_arm",
        "pred_c",
        "pred_nc",
        "final_arm",
        "provenance",
    ];

    /// CSV fields in header order; reals use 17 significant digits.
    pub fn csv_fields(&self) -> [String; 7] {
        [
            self.t.to_string(),
            self.contextual_arm.to_string(),
            self.noncontextual_arm.to_string(),
            fmt_real(self.pred_contextual),
            fmt_real(self.pred_noncontextual),
            self.final_arm.to_string(),
            self.provenance.to_string(),
        ]
    }

    pub fn from_csv_fields(fields: &[&str]) -> Result<Self> {
        if fields.len() < 7 {
            return Err(Error::Data(format!(
                "decision row needs 7 fields, got {}",
                fields.len()
            )));
        }
        let int = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::Data(format!("bad integer {s:?}: {e}")))
        };
        let real = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Data(format!("bad real {s:?}: {e}")))
        };
        let record = DecisionRecord {
            t: int(fields[0])?,
            contextual_arm: ArmId(int(fields[1])?),
            noncontextual_arm: ArmId(int(fields[2])?),
            pred_contextual: real(fields[3])?,
            pred_noncontextual: real(fields[4])?,
            final_arm: ArmId(int(fields[5])?),
            provenance: fields[6].trim().parse()?,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Formats a real with 17 significant digits so it parses back bit-exactly.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_rejects_non_finite() {
        assert!(Context::new(vec![1.0, f64::NAN]).is_err());
        assert!(Context::new(vec![f64::INFINITY]).is_err());
        assert_eq!(Context::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }

    #[test]
    fn arm_bounds() {
        assert!(ArmId::checked(0, 1).is_err());
        assert!(ArmId::checked(3, 3).is_err());
        assert_eq!(ArmId::checked(2, 3).unwrap(), ArmId(2));
    }

    #[test]
    fn rewards_are_binary() {
        assert!(Observation::new(Context::zeros(1), ArmId(0), 0.5).is_err());
        assert!(Observation::new(Context::zeros(1), ArmId(0), 1.0).is_ok());
    }

    #[test]
    fn decision_row_round_trips() {
        let rec = DecisionRecord {
            t: 12,
            contextual_arm: ArmId(2),
            noncontextual_arm: ArmId(0),
            pred_contextual: 0.1 + 0.2,
            pred_noncontextual: 1.0 / 3.0,
            final_arm: ArmId(0),
            provenance: Provenance::Noncontextual,
        };
        let fields = rec.csv_fields();
        let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
        assert_eq!(DecisionRecord::from_csv_fields(&refs).unwrap(), rec);
    }

    #[test]
    fn inconsistent_provenance_is_rejected() {
        let mut rec = DecisionRecord::agreement(1, ArmId(1), 0.5);
        rec.noncontextual_arm = ArmId(0);
        assert!(rec.validate().is_err());
        rec.provenance = Provenance::Contextual;
        assert!(rec.validate().is_ok());
        rec.final_arm = ArmId(0);
        assert!(rec.validate().is_err());
    }
}
