use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::expr::{Expr, RelOp};

/// Thresholded linear classifier `w·x + b >= threshold`. Terms are summed in
/// feature-name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub threshold: f64,
}

impl LinearModel {
    /// Replays exactly the arithmetic of the translated program: a left fold
    /// of `w * x` products, then the intercept.
    pub fn predict(&self, row: &dyn Fn(&str) -> Option<f64>) -> Option<bool> {
        let mut acc: Option<f64> = None;
        for (f, w) in &self.weights {
            let t = w * row(f)?;
            acc = Some(acc.map_or(t, |a| a + t));
        }
        let s = acc.map_or(self.intercept, |a| a + self.intercept);
        Some(s >= self.threshold)
    }
}

pub fn from_linear_model(m: &LinearModel) -> Expr {
    let mut terms: Vec<Expr> = m
        .weights
        .iter()
        .map(|(f, w)| Expr::mul(vec![Expr::num(*w), Expr::var(f)]))
        .collect();
    terms.push(Expr::num(m.intercept));
    Expr::rel(RelOp::Ge, Expr::add(terms), Expr::num(m.threshold))
}
