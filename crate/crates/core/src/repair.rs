//! Repair: replace a local subexpression of a violating decomposition by a
//! utility-optimal constant, and iterate while the oracle objects.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataSource, Dataset};
use crate::detect::{
    check_inputs, measure_influence, program_digest, proxy_detect, protected_codes,
    subprogram_association, AuditConfig, DetectError, Witness, EXACT_PAIR_BUDGET,
};
use crate::expr::{local_expressions, Decomposition, Expr, ExprError, Site, Ty, Value};
use crate::measures::{outputs, utility, InfluenceMode, MeasureError, UtilityTarget};
use crate::oracle::{Answer, JudgmentLog, Oracle, OracleError};

#[derive(Debug, thiserror::Error)]
pub enum RepairError {
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Program(#[from] ExprError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("no simplification removes the violation at {0}")]
    NoRepair(String),
}

/// Distinct values of the local subprogram over the analysis rows with
/// their frequencies, plus 0 and 1 (or false and true) when unobserved.
pub fn candidate_constants(local: &Decomposition, data: &Dataset) -> Result<Vec<(Value, usize)>, RepairError> {
    if data.analysis().is_empty() {
        return Err(MeasureError::Empty.into());
    }
    let mut counts: BTreeMap<Value, usize> = BTreeMap::new();
    for v in outputs(&local.subprogram, data, data.analysis())? {
        *counts.entry(v).or_insert(0) += 1;
    }
    let extras = match local.subprogram.check()? {
        Ty::Num => [Value::Num(0.0), Value::Num(1.0)],
        Ty::Bool => [Value::Bool(false), Value::Bool(true)],
    };
    for e in extras {
        counts.entry(e).or_insert(0);
    }
    Ok(counts.into_iter().collect())
}

/// The candidate constant that maximizes validation utility once it
/// replaces the local subprogram. Ties go to the more frequent value, then
/// the smaller one.
pub fn optimal_constant(
    p: &Expr,
    local: &Decomposition,
    data: &Dataset,
    target: &UtilityTarget,
) -> Result<(Value, f64), RepairError> {
    if let Expr::Const { value } = local.subprogram {
        return Ok((value, utility(p, data, target)?));
    }
    let cands = candidate_constants(local, data)?;
    let scored: Vec<(Value, usize, f64)> = cands
        .par_iter()
        .map(|&(v, freq)| Ok((v, freq, utility(&local.fill(&Expr::constant(v)), data, target)?)))
        .collect::<Result<_, MeasureError>>()?;
    let mut best = scored[0];
    for &c in &scored[1..] {
        if c.2 > best.2 || (c.2 == best.2 && c.1 > best.1) {
            best = c;
        }
    }
    Ok((best.0, best.2))
}

/// One accepted simplification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub program: Expr,
    pub local_sites: Vec<Site>,
    pub local_text: String,
    pub constant: Value,
    pub utility: f64,
    /// Measures of the original decomposition in the simplified program.
    pub epsilon_after: f64,
    pub delta_after: f64,
}

fn keep_test_config(cfg: &AuditConfig, data: &Dataset) -> AuditConfig {
    let n = data.analysis().len();
    let mut c = cfg.clone();
    if n.saturating_mul(n) <= EXACT_PAIR_BUDGET {
        c.influence = InfluenceMode::Exact;
    }
    c
}

/// Tries every local expression of the witness's decomposition and returns
/// the highest-utility simplification after which the original
/// decomposition falls below a threshold (association < ε or influence
/// < δ). Replacing the subprogram itself always qualifies.
pub fn proxy_repair(
    p: &Expr,
    w: &Witness,
    data: &Dataset,
    cfg: &AuditConfig,
    target: &UtilityTarget,
) -> Result<RepairOutcome, RepairError> {
    let dec = w.decomposition(p)?;
    let z = protected_codes(data, cfg)?;
    let keep_cfg = keep_test_config(cfg, data);
    let locals = local_expressions(p, &dec);
    let tried: Vec<Option<(RepairOutcome, usize)>> = cfg.install(|| {
        locals
            .par_iter()
            .map(|local| try_local(p, &dec, local, data, &keep_cfg, &z, target))
            .collect::<Result<Vec<_>, RepairError>>()
    })??;
    let mut best: Option<(RepairOutcome, usize)> = None;
    for (o, size) in tried.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some((b, bs)) => o.utility > b.utility || (o.utility == b.utility && size < *bs),
        };
        if better {
            best = Some((o, size));
        }
    }
    best.map(|b| b.0).ok_or_else(|| RepairError::NoRepair(w.site_key()))
}

fn try_local(
    p: &Expr,
    dec: &Decomposition,
    local: &Decomposition,
    data: &Dataset,
    cfg: &AuditConfig,
    z: &[usize],
    target: &UtilityTarget,
) -> Result<Option<(RepairOutcome, usize)>, RepairError> {
    let whole = local.sites == dec.sites;
    let inside = local
        .sites
        .iter()
        .all(|s| dec.sites.iter().any(|h| h.overlaps(s)));
    // a partial cut inside the subprogram would leave the holes unequal
    if !whole && inside && local.sites.len() != dec.sites.len() {
        return Ok(None);
    }
    let (constant, u) = optimal_constant(p, local, data, target)?;
    let q = local.fill(&Expr::constant(constant));
    let (eps, delta) = if whole {
        (0.0, 0.0)
    } else {
        let Ok(d2) = Decomposition::at_sites(&q, dec.sites.clone()) else {
            return Ok(None);
        };
        if d2.subprogram.is_const() {
            (0.0, 0.0)
        } else {
            let a = subprogram_association(&d2.subprogram, data, z, cfg)?;
            (a.d, measure_influence(&d2, data, cfg)?.iota)
        }
    };
    if !(eps < cfg.epsilon || delta < cfg.delta) {
        return Ok(None);
    }
    let size = q.variable_size();
    Ok(Some((
        RepairOutcome {
            program: q,
            local_sites: local.sites.clone(),
            local_text: local.subprogram.to_string(),
            constant,
            utility: u,
            epsilon_after: eps,
            delta_after: delta,
        },
        size,
    )))
}

/// One line of the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairStep {
    pub step: usize,
    pub witness_id: String,
    pub witness_sites: Vec<Site>,
    pub local_sites: Vec<Site>,
    pub local_text: String,
    pub constant: Value,
    pub utility_before: f64,
    pub utility_after: f64,
    pub epsilon_after: f64,
    pub delta_after: f64,
    pub size_before: usize,
    pub size_after: usize,
    pub variable_size_before: usize,
    pub variable_size_after: usize,
    pub program_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingJudgment,
    Repairing,
    Done,
}

/// Everything needed to resume a repair loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub status: Status,
    pub program: Expr,
    pub original: Expr,
    pub config: AuditConfig,
    pub target: UtilityTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    /// Witnesses of the current program still awaiting a judgment.
    pub pending: Vec<Witness>,
    pub judgments: JudgmentLog,
    pub steps: Vec<RepairStep>,
}

impl Checkpoint {
    pub fn new(p: &Expr, cfg: &AuditConfig, target: UtilityTarget) -> Checkpoint {
        Checkpoint {
            status: Status::Repairing,
            program: p.clone(),
            original: p.clone(),
            config: cfg.clone(),
            target,
            data: None,
            pending: Vec::new(),
            judgments: JudgmentLog::default(),
            steps: Vec::new(),
        }
    }

    /// Runs detect / judge / repair until the oracle has no objection left
    /// (status `Done`) or a judgment is unavailable (`AwaitingJudgment`,
    /// with `pending` listing what needs judging). With `max_steps`, stops
    /// early in status `Repairing`.
    pub fn run(
        &mut self,
        data: &Dataset,
        oracle: &mut dyn Oracle,
        max_steps: Option<usize>,
    ) -> Result<Status, RepairError> {
        check_inputs(&self.program, data)?;
        let bound = self.original.size();
        let mut taken = 0;
        loop {
            self.status = Status::Repairing;
            let witnesses = proxy_detect(&self.program, data, &self.config)?;
            let mut pending = Vec::new();
            let mut violations = Vec::new();
            for w in witnesses {
                let verdict = match self.judgments.get(&w.id) {
                    Some(j) => Some(j.appropriate),
                    None => match oracle.judge(&w)? {
                        Answer::Judged(j) => {
                            let a = j.appropriate;
                            self.judgments.record(j)?;
                            Some(a)
                        }
                        Answer::Pending => None,
                    },
                };
                match verdict {
                    None => pending.push(w),
                    Some(false) => violations.push(w),
                    Some(true) => {}
                }
            }
            self.pending = pending;
            if !self.pending.is_empty() {
                self.status = Status::AwaitingJudgment;
                return Ok(self.status);
            }
            let Some(w) = violations.first() else {
                self.status = Status::Done;
                return Ok(self.status);
            };
            if max_steps.is_some_and(|m| taken >= m) {
                return Ok(self.status);
            }
            self.step(w, data)?;
            taken += 1;
            // each step removes at least one non-constant node
            if self.steps.len() > bound {
                return Err(RepairError::NoRepair(w.site_key()));
            }
        }
    }

    fn step(&mut self, w: &Witness, data: &Dataset) -> Result<(), RepairError> {
        let before = utility(&self.program, data, &self.target)?;
        let out = proxy_repair(&self.program, w, data, &self.config, &self.target)?;
        self.steps.push(RepairStep {
            step: self.steps.len() + 1,
            witness_id: w.id.clone(),
            witness_sites: w.sites.clone(),
            local_sites: out.local_sites,
            local_text: out.local_text,
            constant: out.constant,
            utility_before: before,
            utility_after: out.utility,
            epsilon_after: out.epsilon_after,
            delta_after: out.delta_after,
            size_before: self.program.size(),
            size_after: out.program.size(),
            variable_size_before: self.program.variable_size(),
            variable_size_after: out.program.variable_size(),
            program_digest: program_digest(&out.program),
        });
        self.program = out.program;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Result of [`repair_loop`].
#[derive(Debug, Clone)]
pub enum LoopOutcome {
    Done { program: Expr, steps: Vec<RepairStep> },
    Suspended(Box<Checkpoint>),
}

/// Detect, filter by the oracle, repair one violation, repeat. Suspends
/// with a checkpoint when the oracle cannot answer.
pub fn repair_loop(
    p: &Expr,
    data: &Dataset,
    cfg: &AuditConfig,
    oracle: &mut dyn Oracle,
    target: &UtilityTarget,
) -> Result<LoopOutcome, RepairError> {
    resume(Checkpoint::new(p, cfg, target.clone()), data, oracle)
}

pub fn resume(mut cp: Checkpoint, data: &Dataset, oracle: &mut dyn Oracle) -> Result<LoopOutcome, RepairError> {
    Ok(match cp.run(data, oracle, None)? {
        Status::Done => LoopOutcome::Done {
            program: cp.program,
            steps: cp.steps,
        },
        _ => LoopOutcome::Suspended(Box::new(cp)),
    })
}

/// Step log as JSON lines.
pub fn steps_jsonl(steps: &[RepairStep]) -> String {
    steps
        .iter()
        .map(|s| serde_json::to_string(s).expect("step serializes") + "\n")
        .collect()
}
