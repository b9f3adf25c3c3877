use serde::{Deserialize, Serialize};

use super::{Category, FrontendError};
use crate::data::Codebook;
use crate::expr::{Expr, Value};

/// A binary decision tree. Rows satisfying a split's test go left: numeric
/// splits test `feature <= threshold`, categorical ones test membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeSpec {
    Leaf { leaf: Value },
    Split(Box<Split>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<Category>>,
    pub left: TreeSpec,
    pub right: TreeSpec,
}

enum Test {
    Le(f64),
    In(Vec<f64>),
}

impl Split {
    fn test(&self, codebook: &Codebook) -> Result<Test, FrontendError> {
        match (&self.threshold, &self.categories) {
            (Some(t), None) if t.is_finite() => Ok(Test::Le(*t)),
            (None, Some(cats)) if !cats.is_empty() => cats
                .iter()
                .map(|c| c.resolve(&self.feature, codebook))
                .collect::<Result<Vec<_>, _>>()
                .map(Test::In),
            _ => Err(FrontendError::Schema(format!(
                "split on `{}` needs exactly one of a finite threshold or a non-empty category list",
                self.feature
            ))),
        }
    }
}

impl TreeSpec {
    pub fn leaf(v: impl Into<Value>) -> TreeSpec {
        TreeSpec::Leaf { leaf: v.into() }
    }

    pub fn split(feature: &str, threshold: f64, left: TreeSpec, right: TreeSpec) -> TreeSpec {
        TreeSpec::Split(Box::new(Split {
            feature: feature.to_string(),
            threshold: Some(threshold),
            categories: None,
            left,
            right,
        }))
    }

    pub fn split_in(feature: &str, categories: Vec<Category>, left: TreeSpec, right: TreeSpec) -> TreeSpec {
        TreeSpec::Split(Box::new(Split {
            feature: feature.to_string(),
            threshold: None,
            categories: Some(categories),
            left,
            right,
        }))
    }

    /// Number of tree nodes (splits plus leaves).
    pub fn node_count(&self) -> usize {
        match self {
            TreeSpec::Leaf { .. } => 1,
            TreeSpec::Split(s) => 1 + s.left.node_count() + s.right.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeSpec::Leaf { .. } => 0,
            TreeSpec::Split(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }

    /// The tree's own prediction, walking it directly.
    pub fn predict(
        &self,
        row: &dyn Fn(&str) -> Option<f64>,
        codebook: &Codebook,
    ) -> Result<Value, FrontendError> {
        let mut node = self;
        loop {
            match node {
                TreeSpec::Leaf { leaf } => return Ok(*leaf),
                TreeSpec::Split(s) => {
                    let x = row(&s.feature).ok_or_else(|| {
                        FrontendError::Schema(format!("row has no feature `{}`", s.feature))
                    })?;
                    let go_left = match s.test(codebook)? {
                        Test::Le(t) => x <= t,
                        Test::In(codes) => codes.contains(&x),
                    };
                    node = if go_left { &s.left } else { &s.right };
                }
            }
        }
    }
}

/// Nested if-then-else program for a decision tree.
pub fn from_decision_tree(tree: &TreeSpec, codebook: &Codebook) -> Result<Expr, FrontendError> {
    let p = translate(tree, codebook)?;
    p.check()?;
    Ok(p)
}

fn translate(tree: &TreeSpec, codebook: &Codebook) -> Result<Expr, FrontendError> {
    match tree {
        TreeSpec::Leaf { leaf } => Ok(Expr::constant(*leaf)),
        TreeSpec::Split(s) => {
            let x = Expr::var(&s.feature);
            let guard = match s.test(codebook)? {
                Test::Le(t) => Expr::le(x, Expr::num(t)),
                Test::In(codes) => Expr::or(
                    codes
                        .into_iter()
                        .map(|c| Expr::eq(x.clone(), Expr::num(c)))
                        .collect(),
                ),
            };
            Ok(Expr::ite(
                guard,
                translate(&s.left, codebook)?,
                translate(&s.right, codebook)?,
            ))
        }
    }
}
