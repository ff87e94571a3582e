//! Action selection from per-action return distributions.
//!
//! The greedy rule maximizes the mean. The SSD and thresholded-SSD rules
//! look only at the two actions with the largest means and, when those
//! are tied (exactly, or within a threshold), prefer the less disperse one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantdist::QuantileDist;
use crate::roadnet::ActionIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("need at least two actions, got {0}")]
    TooFewActions(usize),
    #[error("invalid execution policy: {0}")]
    BadPolicy(String),
}

/// Return distributions of every action at one state.
pub type ActionDists = [QuantileDist];

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl Iterator<Item = f64>) -> ActionIndex {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// `argmax_a mean(Z(s, a))`, lowest index on ties.
pub fn greedy_action(dists: &ActionDists) -> ActionIndex {
    argmax(dists.iter().map(QuantileDist::mean))
}

/// Greedy action straight from a flat action-major atom slice.
pub fn greedy_from_atoms(atoms: &[f64], n_quantiles: usize) -> ActionIndex {
    argmax(atoms.chunks_exact(n_quantiles).map(|c| c.iter().sum::<f64>()))
}

/// The two actions with the largest means, `(a1, a2)`, ties toward the
/// lower index.
pub fn top2(dists: &ActionDists) -> Result<(ActionIndex, ActionIndex), PolicyError> {
    if dists.len() < 2 {
        return Err(PolicyError::TooFewActions(dists.len()));
    }
    let means: Vec<f64> = dists.iter().map(QuantileDist::mean).collect();
    let a1 = argmax(means.iter().copied());
    let a2 = argmax(means.iter().enumerate().map(|(i, &m)| if i == a1 { f64::NEG_INFINITY } else { m }));
    Ok((a1, a2))
}

/// Exact SSD rule: greedy unless the top two means are tied (within
/// `tie_tolerance`), in which case the smaller raw second moment wins.
pub fn ssd_action(dists: &ActionDists, tie_tolerance: f64) -> ActionIndex {
    let Ok((a1, a2)) = top2(dists) else {
        return 0;
    };
    if dists[a1].mean() - dists[a2].mean() > tie_tolerance {
        return a1;
    }
    if dists[a2].second_moment() < dists[a1].second_moment() {
        a2
    } else {
        a1
    }
}

/// Thresholded SSD rule: greedy when the action gap exceeds `thres`,
/// otherwise the smaller variance of the top two wins.
pub fn thresholded_ssd_action(dists: &ActionDists, thres: f64) -> ActionIndex {
    let Ok((a1, a2)) = top2(dists) else {
        return 0;
    };
    if dists[a1].mean() - dists[a2].mean() > thres {
        return a1;
    }
    if dists[a2].variance() < dists[a1].variance() {
        a2
    } else {
        a1
    }
}

/// Execution policy used at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExecPolicySpec", into = "ExecPolicySpec")]
pub enum ExecPolicy {
    Greedy,
    Ssd { tie_tolerance: f64 },
    ThresholdedSsd { thres: f64 },
}

impl ExecPolicy {
    pub fn select(&self, dists: &ActionDists) -> ActionIndex {
        match *self {
            ExecPolicy::Greedy => greedy_action(dists),
            ExecPolicy::Ssd { tie_tolerance } => ssd_action(dists, tie_tolerance),
            ExecPolicy::ThresholdedSsd { thres } => thresholded_ssd_action(dists, thres),
        }
    }

    /// Short name used in reports and CSV files.
    pub fn name(&self) -> &'static str {
        match self {
            ExecPolicy::Greedy => "greedy",
            ExecPolicy::Ssd { .. } => "ssd",
            ExecPolicy::ThresholdedSsd { .. } => "t-ssd",
        }
    }

    pub fn ssd() -> Self {
        ExecPolicy::Ssd { tie_tolerance: 0.0 }
    }
}

/// Wire form: `{"exec_policy": "greedy"|"ssd"|"t-ssd", "ssd_thres": f64}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecPolicySpec {
    pub exec_policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssd_thres: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie_tolerance: Option<f64>,
}

impl TryFrom<ExecPolicySpec> for ExecPolicy {
    type Error = PolicyError;

    fn try_from(spec: ExecPolicySpec) -> Result<Self, Self::Error> {
        match spec.exec_policy.as_str() {
            "greedy" => Ok(ExecPolicy::Greedy),
            "ssd" => {
                let tie_tolerance = spec.tie_tolerance.unwrap_or(0.0);
                if !(tie_tolerance >= 0.0) {
                    return Err(PolicyError::BadPolicy("tie_tolerance must be non-negative".into()));
                }
                Ok(ExecPolicy::Ssd { tie_tolerance })
            }
            "t-ssd" => {
                let thres = spec
                    .ssd_thres
                    .ok_or_else(|| PolicyError::BadPolicy("t-ssd requires ssd_thres".into()))?;
                if !(thres >= 0.0) {
                    return Err(PolicyError::BadPolicy("ssd_thres must be non-negative".into()));
                }
                Ok(ExecPolicy::ThresholdedSsd { thres })
            }
            other => Err(PolicyError::BadPolicy(format!("unknown exec_policy {:?}", other))),
        }
    }
}

impl From<ExecPolicy> for ExecPolicySpec {
    fn from(p: ExecPolicy) -> Self {
        let name = p.name().to_string();
        match p {
            ExecPolicy::Greedy => ExecPolicySpec { exec_policy: name, ssd_thres: None, tie_tolerance: None },
            ExecPolicy::Ssd { tie_tolerance } => ExecPolicySpec {
                exec_policy: name,
                ssd_thres: None,
                tie_tolerance: (tie_tolerance != 0.0).then_some(tie_tolerance),
            },
            ExecPolicy::ThresholdedSsd { thres } => {
                ExecPolicySpec { exec_policy: name, ssd_thres: Some(thres), tie_tolerance: None }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qd(v: &[f64]) -> QuantileDist {
        QuantileDist::new(v.to_vec()).unwrap()
    }

    fn consts(means: &[f64]) -> Vec<QuantileDist> {
        means.iter().map(|&m| QuantileDist::constant(m, 4)).collect()
    }

    #[test]
    fn greedy_examples() {
        let d = vec![qd(&[-14.0, -10.0, -6.0, -2.0]), QuantileDist::constant(-10.0, 4)];
        assert_eq!(greedy_action(&d), 0);
        assert_eq!(greedy_action(&consts(&[-3.0, -3.0, -3.0])), 0);
        assert_eq!(greedy_action(&consts(&[-7.0])), 0);
        assert_eq!(greedy_from_atoms(&[-1.0, -1.0, 0.0, 0.0, -5.0, 5.0], 2), 1);
    }

    #[test]
    fn top2_examples() {
        assert_eq!(top2(&consts(&[-10.0, -8.0, -12.0])), Ok((1, 0)));
        assert_eq!(top2(&consts(&[-5.0, -5.0, -9.0])), Ok((0, 1)));
        assert_eq!(top2(&consts(&[-9.0, -2.0])), Ok((1, 0)));
        assert_eq!(top2(&consts(&[1.0])), Err(PolicyError::TooFewActions(1)));
    }

    #[test]
    fn ssd_examples() {
        let wide = qd(&[-14.0, -10.0, -6.0, -2.0]);
        let flat = QuantileDist::constant(-10.0, 4);
        assert_eq!(ssd_action(&[wide.clone(), flat.clone()], 0.0), 0);
        let zero = QuantileDist::constant(0.0, 4);
        let spread = qd(&[-2.0, -1.0, 1.0, 2.0]);
        assert_eq!(ssd_action(&[spread.clone(), zero.clone()], 0.0), 1);
        assert_eq!(ssd_action(&[zero.clone(), spread], 0.0), 0);
        assert_eq!(ssd_action(&[zero.clone(), zero], 0.0), 0);
        assert_eq!(ssd_action(&consts(&[-4.0]), 0.0), 0);
    }

    #[test]
    fn thresholded_ssd_examples() {
        let wide = qd(&[-14.0, -10.0, -6.0, -2.0]);
        let flat = QuantileDist::constant(-10.0, 4);
        let d = [wide, flat];
        assert_eq!(thresholded_ssd_action(&d, 15.0), 1);
        assert_eq!(thresholded_ssd_action(&d, 1.0), 0);
        assert_eq!(thresholded_ssd_action(&d, 0.0), 0);
        // Equal variances fall back to a1.
        assert_eq!(thresholded_ssd_action(&consts(&[-3.0, -4.0]), 15.0), 0);
    }

    #[test]
    fn exec_policy_wire_format() {
        let p: ExecPolicy = serde_json::from_str(r#"{"exec_policy": "t-ssd", "ssd_thres": 15.0}"#).unwrap();
        assert_eq!(p, ExecPolicy::ThresholdedSsd { thres: 15.0 });
        let g: ExecPolicy = serde_json::from_str(r#"{"exec_policy": "greedy"}"#).unwrap();
        assert_eq!(g, ExecPolicy::Greedy);
        let s: ExecPolicy = serde_json::from_str(r#"{"exec_policy": "ssd"}"#).unwrap();
        assert_eq!(s, ExecPolicy::ssd());
        assert!(serde_json::from_str::<ExecPolicy>(r#"{"exec_policy": "t-ssd"}"#).is_err());
        assert!(serde_json::from_str::<ExecPolicy>(r#"{"exec_policy": "cvar"}"#).is_err());
        assert!(serde_json::from_str::<ExecPolicy>(r#"{"exec_policy": "t-ssd", "ssd_thres": -1}"#).is_err());
        let back = serde_json::to_string(&p).unwrap();
        assert_eq!(back, r#"{"exec_policy":"t-ssd","ssd_thres":15.0}"#);
    }
}
