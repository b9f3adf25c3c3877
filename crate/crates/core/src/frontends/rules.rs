use serde::{Deserialize, Serialize};

use super::{Category, FrontendError};
use crate::data::Codebook;
use crate::expr::{Expr, RelOp, Value};

/// `feature op value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Literal {
    pub feature: String,
    pub op: RelOp,
    pub value: Category,
}

/// A conjunction of literals and the label it assigns. An empty
/// conjunction always fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub when: Vec<Literal>,
    pub label: Value,
}

/// Ordered rules; the first whose conjunction holds decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleList {
    pub rules: Vec<Rule>,
    pub default: Value,
}

impl RuleList {
    pub fn predict(
        &self,
        row: &dyn Fn(&str) -> Option<f64>,
        codebook: &Codebook,
    ) -> Result<Value, FrontendError> {
        'rules: for r in &self.rules {
            for l in &r.when {
                let x = row(&l.feature).ok_or_else(|| {
                    FrontendError::Schema(format!("row has no feature `{}`", l.feature))
                })?;
                if !l.op.apply(x, l.value.resolve(&l.feature, codebook)?) {
                    continue 'rules;
                }
            }
            return Ok(r.label);
        }
        Ok(self.default)
    }
}

/// Right-nested if-then-else chain in rule order.
pub fn from_rule_list(list: &RuleList, codebook: &Codebook) -> Result<Expr, FrontendError> {
    let mut p = Expr::constant(list.default);
    for r in list.rules.iter().rev() {
        let lits = r
            .when
            .iter()
            .map(|l| {
                Ok(Expr::rel(
                    l.op,
                    Expr::var(&l.feature),
                    Expr::num(l.value.resolve(&l.feature, codebook)?),
                ))
            })
            .collect::<Result<Vec<_>, FrontendError>>()?;
        let guard = if lits.is_empty() {
            Expr::boolean(true)
        } else {
            Expr::and(lits)
        };
        p = Expr::ite(guard, Expr::constant(r.label), p);
    }
    p.check()?;
    Ok(p)
}
