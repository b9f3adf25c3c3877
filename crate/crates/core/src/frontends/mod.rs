//! Translators from trained-model descriptions to [`Expr`] programs.
//!
//! A model document is either a bare program (`{"kind": ...}`), a tagged
//! model description (`{"model": "tree" | "linear" | "rules", ...}`), or the
//! plain-text dump of a CART tree (lines starting with `|---`).

mod cart;
mod linear;
mod rules;
mod tree;

use serde::{Deserialize, Serialize};

use crate::data::Codebook;
use crate::expr::{Expr, ExprError};

pub use cart::{parse_cart_text, train_cart, CartParams};
pub use linear::{from_linear_model, LinearModel};
pub use rules::{from_rule_list, Literal, Rule, RuleList};
pub use tree::{from_decision_tree, Split, TreeSpec};

#[derive(Debug, thiserror::Error)]
pub enum FrontendError {
    #[error("malformed model description: {0}")]
    Schema(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("feature `{feature}` has no category `{value}`")]
    UnknownCategory { feature: String, value: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A category in a split or literal: either the raw code or a codebook level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Category {
    Code(f64),
    Level(String),
}

impl Category {
    pub(crate) fn resolve(&self, feature: &str, codebook: &Codebook) -> Result<f64, FrontendError> {
        match self {
            Category::Code(c) => Ok(*c),
            Category::Level(l) => {
                codebook
                    .code(feature, l)
                    .ok_or_else(|| FrontendError::UnknownCategory {
                        feature: feature.to_string(),
                        value: l.clone(),
                    })
            }
        }
    }
}

/// Tagged model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelDoc {
    Tree { root: TreeSpec },
    Linear(LinearModel),
    Rules(RuleList),
    Program { program: Expr },
}

impl ModelDoc {
    pub fn to_program(&self, codebook: &Codebook) -> Result<Expr, FrontendError> {
        match self {
            ModelDoc::Tree { root } => from_decision_tree(root, codebook),
            ModelDoc::Linear(m) => Ok(from_linear_model(m)),
            ModelDoc::Rules(r) => from_rule_list(r, codebook),
            ModelDoc::Program { program } => {
                program.check()?;
                Ok(program.clone())
            }
        }
    }
}

/// Reads any supported model document into a program.
pub fn load_model(text: &str, codebook: &Codebook) -> Result<Expr, FrontendError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with("|---") {
        return from_decision_tree(&parse_cart_text(trimmed)?, codebook);
    }
    let json: serde_json::Value = serde_json::from_str(text)?;
    if json.get("kind").is_some() {
        let p: Expr = serde_json::from_value(json)?;
        p.check()?;
        return Ok(p);
    }
    serde_json::from_value::<ModelDoc>(json)?.to_program(codebook)
}
