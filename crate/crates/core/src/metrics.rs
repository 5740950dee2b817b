//! Sentence-level precision, recall and F1 with `uncertain` as the positive
//! class. Zero denominators yield 0.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &[Label], gold: &[Label]) -> Result<Confusion> {
    if pred.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("no predictions to score".into()));
    }
    let mut c = Confusion::default();
    for (p, g) in pred.iter().zip(gold) {
        match (p.is_uncertain(), g.is_uncertain()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn precision_recall_f1(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f1)
}

/// Serialized as `{tp, fp, fn, tn, precision, recall, f1, f1_x100}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_x100: f64,
}

impl From<Confusion> for MetricsReport {
    fn from(c: Confusion) -> Self {
        let (precision, recall, f1) = precision_recall_f1(c.tp, c.fp, c.fn_);
        MetricsReport {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            precision,
            recall,
            f1,
            f1_x100: f1 * 100.0,
        }
    }
}

impl MetricsReport {
    pub fn evaluate(pred: &[Label], gold: &[Label]) -> Result<Self> {
        confusion(pred, gold).map(Into::into)
    }

    pub fn confusion(&self) -> Confusion {
        Confusion {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            tn: self.tn,
        }
    }
}

/// Mean and sample standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
