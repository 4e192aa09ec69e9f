//! Monte-Carlo checks of the quantitative bounds: exponential sup-moments,
//! occupation (Krylov) estimates, stability in the initial segment, Hölder
//! regularity, the Gronwall multiplier, Khasminskii's lemma, the stochastic
//! Gronwall lemma and the Hardy–Littlewood maximal inequality.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize, Serializer};

use crate::stats::McEstimate;

mod gronwall;
mod holder;
mod khasminskii;
mod krylov;
mod maximal;
mod moments;
mod multiplier;
mod stability;

pub use gronwall::*;
pub use holder::*;
pub use khasminskii::*;
pub use krylov::*;
pub use maximal::*;
pub use moments::*;
pub use multiplier::*;
pub use stability::*;

/// A Monte-Carlo left-hand side against an analytic right-hand side.
///
/// `satisfied` is derived: `lhs.mean + lhs.confidence_radius <= rhs`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub lhs: McEstimate,
    /// `None` when the bound's constant is not explicit (boundedness only).
    pub rhs: Option<f64>,
    pub parameters: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, lhs: McEstimate, rhs: Option<f64>) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            parameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn satisfied(&self) -> Option<bool> {
        self.rhs.map(|r| self.lhs.mean + self.lhs.confidence_radius <= r)
    }

    /// `lhs.mean + k * lhs.std_error <= rhs`.
    pub fn satisfied_within(&self, k: f64) -> Option<bool> {
        self.rhs.map(|r| self.lhs.mean + k * self.lhs.std_error <= r)
    }
}

impl Serialize for BoundReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            name: &'a str,
            lhs: &'a McEstimate,
            rhs: Option<f64>,
            satisfied: Option<bool>,
            parameters: &'a BTreeMap<String, f64>,
        }
        Out {
            name: &self.name,
            lhs: &self.lhs,
            rhs: self.rhs,
            satisfied: self.satisfied(),
            parameters: &self.parameters,
        }
        .serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn satisfied_is_derived() {
        let mut r = BoundReport::new("x", McEstimate::exact(1.0, 1), Some(1.0));
        assert_eq!(r.satisfied(), Some(true));
        r.rhs = Some(0.5);
        assert_eq!(r.satisfied(), Some(false));
        r.rhs = None;
        assert_eq!(r.satisfied(), None);
        let json = serde_json::to_string(&BoundReport::new("y", McEstimate::exact(2.0, 1), Some(3.0))).unwrap();
        assert!(json.contains("\"satisfied\":true"));
    }
}
