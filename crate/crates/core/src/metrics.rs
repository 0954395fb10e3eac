//! Frame-level confusion counts and the derived evaluation criteria.
//!
//! Label 1 is the positive class (frame contains a polyp).

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn record(&mut self, prediction: u8, truth: u8) {
        match (prediction, truth) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

/// Tallies predictions against ground truth.
pub fn accumulate(predictions: &[u8], truths: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(
            "accumulate",
            format!("{} predictions", truths.len()),
            format!("{}", predictions.len()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        if p > 1 || t > 1 {
            return Err(Error::InvalidArgument(format!("labels must be 0 or 1, got ({p}, {t})")));
        }
        c.record(p, t);
    }
    Ok(c)
}

/// The six evaluation criteria as fractions in `[0, 1]`. Ratios whose
/// denominator is zero are `None` ("undefined").
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub dice: Option<f64>,
    /// False positives per evaluated frame.
    pub fppf: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::InvalidArgument("no frames evaluated".into()));
    }
    Ok(Metrics {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        recall: ratio(c.tp, c.tp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
        specificity: ratio(c.tn, c.tn + c.fp),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        fppf: c.fp as f64 / total as f64,
    })
}

impl Metrics {
    /// `(name, value)` pairs in report order.
    pub fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("accuracy", Some(self.accuracy)),
            ("dice", self.dice),
            ("recall", self.recall),
            ("precision", self.precision),
            ("specificity", self.specificity),
            ("fppf", Some(self.fppf)),
        ]
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.entries() {
            match v {
                Some(v) if name == "fppf" => writeln!(f, "{name}={v:.4}")?,
                Some(v) => writeln!(f, "{name}={:.2}%", v * 100.0)?,
                None => writeln!(f, "{name}=undefined")?,
            }
        }
        Ok(())
    }
}
