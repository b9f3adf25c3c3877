//! Association, influence and utility.

mod association;
mod discretize;
mod influence;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::expr::{evaluate, Decomposition, EvalError, Expr, Value};

pub use association::{association, permutation_p_value, AssociationResult, PERMUTATIONS};
pub use discretize::{discretize, DEFAULT_MAX_BINS};
pub use influence::{
    hoeffding_samples, influence_exact, influence_sampled, InfluenceMode, InfluenceResult,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no rows to measure over")]
    Empty,
    #[error("{0}")]
    BadParameter(String),
    #[error("no column named `{0}`")]
    MissingColumn(String),
    #[error("the validation subset is empty")]
    EmptyValidation,
    #[error("decomposition at {sites}: row {row}{}: {source}", substituted.map(|v| format!(" with hole = {v}")).unwrap_or_default())]
    Eval {
        sites: String,
        row: usize,
        substituted: Option<Value>,
        source: EvalError,
    },
    #[error("row {row}: {source}")]
    Program { row: usize, source: EvalError },
}

impl MeasureError {
    fn eval(d: &Decomposition, row: usize, substituted: Option<Value>, source: EvalError) -> Self {
        MeasureError::Eval {
            sites: d.site_key(),
            row,
            substituted,
            source,
        }
    }
}

/// Values of `p` over the given rows.
pub fn outputs(p: &Expr, data: &Dataset, rows: &[usize]) -> Result<Vec<Value>, MeasureError> {
    rows.iter()
        .map(|&r| evaluate(p, &data.row_env(r)).map_err(|source| MeasureError::Program { row: r, source }))
        .collect()
}

/// Discrete codes for a value column: real columns with more than
/// `max_bins` distinct values are binned, anything else is coded by value.
pub fn discrete_codes(vals: &[Value], max_bins: usize) -> Result<Vec<usize>, MeasureError> {
    let nums: Option<Vec<f64>> = vals
        .iter()
        .map(|v| match v {
            Value::Num(x) => Some(*x),
            Value::Bool(_) => None,
        })
        .collect();
    if let Some(nums) = nums {
        return discretize(&nums, max_bins);
    }
    let mut ids: BTreeMap<Value, usize> = BTreeMap::new();
    for v in vals {
        let next = ids.len();
        ids.entry(*v).or_insert(next);
    }
    Ok(vals.iter().map(|v| ids[v]).collect())
}

/// What a program's predictions are scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum UtilityTarget {
    /// A label column of the dataset.
    Labels(String),
    /// Agreement with a reference program (the unrepaired model).
    Fidelity(Expr),
}

/// Fraction of validation rows where `p` predicts the label. Booleans
/// compare as 1/0.
pub fn utility_accuracy(p: &Expr, data: &Dataset, labels: &str) -> Result<f64, MeasureError> {
    utility(p, data, &UtilityTarget::Labels(labels.to_string()))
}

pub fn utility(p: &Expr, data: &Dataset, target: &UtilityTarget) -> Result<f64, MeasureError> {
    let rows = data.validation();
    if rows.is_empty() {
        return Err(MeasureError::EmptyValidation);
    }
    let got = outputs(p, data, rows)?;
    let hits = match target {
        UtilityTarget::Labels(col) => {
            let labels = data
                .column_at(col, rows)
                .map_err(|_| MeasureError::MissingColumn(col.clone()))?;
            got.iter().zip(labels).filter(|(v, l)| v.as_f64() == *l).count()
        }
        UtilityTarget::Fidelity(reference) => {
            let want = outputs(reference, data, rows)?;
            got.iter().zip(want).filter(|(a, b)| **a == *b).count()
        }
    };
    Ok(hits as f64 / rows.len() as f64)
}
